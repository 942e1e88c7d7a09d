#pragma once
#include <vector>

#include "pb/mesh.hpp"

namespace pb {

/// Linear blend skinning: v_i = sum_k w_ik (R_k (vbar_i - cbar_k) + t_k).
/// Translations are absolute: with rest transforms (identity, t_k = cbar_k)
/// the output equals the canonical mesh. Faces are copied unchanged.
Mesh apply_lbs(const Mesh& canonical, const Rig& rig, const PoseTransforms& transforms);

/// Posed keypoints as skin-weight-weighted vertex averages. Keypoints whose
/// total weight mass is below 1e-8 fall back to their canonical position.
std::vector<Vec3> posed_keypoints(const Mesh& posed, const Rig& rig);

struct EstimatedTransforms {
  PoseTransforms transforms;
  std::vector<bool> degenerate;  // per keypoint: fell back to rest
};

/// Per-keypoint weighted rigid fit (orthogonal Procrustes with determinant
/// correction) mapping canonical vertices onto posed ones. Keypoints with
/// fewer than 3 effectively weighted vertices or a rank-deficient covariance
/// are flagged degenerate and set to rest.
EstimatedTransforms estimate_keypoint_transforms(const Mesh& canonical,
                                                 const Mesh& posed,
                                                 const Rig& rig);

}  // namespace pb
