#pragma once
#include <vector>

#include "pb/autodiff.hpp"
#include "pb/mesh.hpp"

namespace pb::ad {

/// Unit-quaternion rows (k,4) -> row-major rotation matrices (k,9).
/// Differentiates the polynomial formula; inputs should be normalized.
Var quat_to_rotmat(const Var& q);

/// Row-wise sign fix (w >= 0) followed by L2 normalization. The sign is
/// captured at forward time (piecewise constant).
Var quat_signfix_normalize(const Var& q);

/// Linear blend skinning on the tape. rot (k,9), trans (k,3); canonical
/// vertices, keypoints and weights come from the rig context (constants).
Var lbs(const Var& rot, const Var& trans, const Mesh& canonical, const Rig& rig);

/// Weighted per-keypoint Procrustes fit of posed (n,3) against the rig's
/// canonical geometry. Returns (k,12) rows [R row-major | t]. Degenerate
/// keypoints produce rest transforms and receive no gradient.
Var weighted_procrustes(const Var& posed, const Mesh& canonical, const Rig& rig);

/// Dominant-eigenvector rotation average. rbar (k,9) holds plan-weighted
/// mean rotation matrices; output (k,4) unit quaternions (sign-fixed).
Var davenport_average(const Var& rbar);

}  // namespace pb::ad
