#pragma once
#include <array>
#include <string>
#include <vector>

#include "pb/geom.hpp"

namespace pb {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

/// Validates face indices, degenerate faces, minimum vertex count.
/// Throws DataError on violation.
void validate_mesh(const Mesh& mesh);

// One (keypoint index, weight) influence on a vertex.
struct SkinInfluence {
  int keypoint = 0;
  double weight = 0.0;
};

struct Rig {
  std::vector<Vec3> keypoints;            // canonical positions
  std::vector<std::string> names;         // one per keypoint
  std::vector<int> parents;               // -1 = root; may be empty
  std::vector<std::vector<SkinInfluence>> skin_weights;  // per vertex

  int keypoint_count() const { return static_cast<int>(keypoints.size()); }
  int skinned_vertex_count() const { return static_cast<int>(skin_weights.size()); }
};

/// Checks weights are non-negative and sum to 1 within 1e-6, indices in
/// range, names length matches. Throws DataError.
void validate_rig(const Rig& rig);

struct PoseTransforms {
  std::vector<Quat> rotations;
  std::vector<Vec3> translations;

  int size() const { return static_cast<int>(rotations.size()); }

  /// Rest pose under the absolute-translation convention: identity rotation,
  /// t_k = canonical keypoint position.
  static PoseTransforms rest(const Rig& rig);
};

}  // namespace pb
