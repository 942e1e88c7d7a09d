#include "pb/lbs.hpp"

#include <cmath>

#include "pb/errors.hpp"
#include "pb/so3.hpp"

namespace pb {

void validate_mesh(const Mesh& mesh) {
  if (mesh.vertex_count() < 3) throw DataError("mesh: fewer than 3 vertices");
  int n = mesh.vertex_count();
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (int k = 0; k < 3; ++k)
      if (face[k] < 0 || face[k] >= n)
        throw DataError("mesh: face " + std::to_string(f) + " index out of range");
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw DataError("mesh: face " + std::to_string(f) + " is degenerate");
  }
}

void validate_rig(const Rig& rig) {
  int k = rig.keypoint_count();
  if (rig.names.size() != static_cast<size_t>(k))
    throw DataError("rig: names length != keypoint count");
  if (!rig.parents.empty() && rig.parents.size() != static_cast<size_t>(k))
    throw DataError("rig: parents length != keypoint count");
  for (size_t v = 0; v < rig.skin_weights.size(); ++v) {
    double sum = 0.0;
    for (const auto& inf : rig.skin_weights[v]) {
      if (inf.keypoint < 0 || inf.keypoint >= k)
        throw DataError("rig: vertex " + std::to_string(v) + " references keypoint " +
                        std::to_string(inf.keypoint));
      if (inf.weight < 0.0)
        throw DataError("rig: vertex " + std::to_string(v) + " has negative weight");
      sum += inf.weight;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw DataError("rig: vertex " + std::to_string(v) + " weights sum to " +
                      std::to_string(sum));
  }
}

PoseTransforms PoseTransforms::rest(const Rig& rig) {
  PoseTransforms t;
  t.rotations.assign(rig.keypoints.size(), Quat{});
  t.translations = rig.keypoints;
  return t;
}

Mesh apply_lbs(const Mesh& canonical, const Rig& rig, const PoseTransforms& transforms) {
  int n = canonical.vertex_count();
  int k = rig.keypoint_count();
  if (rig.skinned_vertex_count() != n)
    throw DimensionError("apply_lbs: rig skins " + std::to_string(rig.skinned_vertex_count()) +
                         " vertices, mesh has " + std::to_string(n));
  if (transforms.size() != k)
    throw DimensionError("apply_lbs: " + std::to_string(transforms.size()) +
                         " transforms for " + std::to_string(k) + " keypoints");

  std::vector<Mat3> rot(k);
  for (int j = 0; j < k; ++j) rot[j] = so3::attitude(transforms.rotations[j]);

  Mesh out;
  out.faces = canonical.faces;
  out.vertices.resize(n);
  for (int i = 0; i < n; ++i) {
    Vec3 v{0, 0, 0};
    for (const auto& inf : rig.skin_weights[i]) {
      Vec3 local = canonical.vertices[i] - rig.keypoints[inf.keypoint];
      v += inf.weight * (rot[inf.keypoint] * local + transforms.translations[inf.keypoint]);
    }
    out.vertices[i] = v;
  }
  return out;
}

std::vector<Vec3> posed_keypoints(const Mesh& posed, const Rig& rig) {
  int n = posed.vertex_count();
  if (rig.skinned_vertex_count() != n)
    throw DimensionError("posed_keypoints: rig/mesh vertex count mismatch");
  int k = rig.keypoint_count();
  std::vector<Vec3> acc(k, Vec3{0, 0, 0});
  std::vector<double> mass(k, 0.0);
  for (int i = 0; i < n; ++i) {
    for (const auto& inf : rig.skin_weights[i]) {
      acc[inf.keypoint] += inf.weight * posed.vertices[i];
      mass[inf.keypoint] += inf.weight;
    }
  }
  std::vector<Vec3> out(k);
  for (int j = 0; j < k; ++j)
    out[j] = mass[j] < 1e-8 ? rig.keypoints[j] : acc[j] / mass[j];
  return out;
}

EstimatedTransforms estimate_keypoint_transforms(const Mesh& canonical,
                                                 const Mesh& posed,
                                                 const Rig& rig) {
  int n = canonical.vertex_count();
  if (posed.vertex_count() != n)
    throw DimensionError("estimate_keypoint_transforms: vertex count mismatch");
  if (rig.skinned_vertex_count() != n)
    throw DimensionError("estimate_keypoint_transforms: rig/mesh mismatch");

  int k = rig.keypoint_count();
  // Per-keypoint weighted sums. Source points are canonical minus keypoint.
  std::vector<double> mass(k, 0.0);
  std::vector<int> support(k, 0);
  std::vector<Vec3> asum(k, Vec3{}), bsum(k, Vec3{});
  for (int i = 0; i < n; ++i) {
    for (const auto& inf : rig.skin_weights[i]) {
      if (inf.weight <= 1e-8) continue;
      int j = inf.keypoint;
      mass[j] += inf.weight;
      support[j] += 1;
      asum[j] += inf.weight * (canonical.vertices[i] - rig.keypoints[j]);
      bsum[j] += inf.weight * posed.vertices[i];
    }
  }

  EstimatedTransforms out;
  out.transforms = PoseTransforms::rest(rig);
  out.degenerate.assign(k, false);

  std::vector<Mat3> cov(k, Mat3::zero());
  std::vector<Vec3> abar(k), bbar(k);
  for (int j = 0; j < k; ++j) {
    if (mass[j] < 1e-8 || support[j] < 3) {
      out.degenerate[j] = true;
      continue;
    }
    abar[j] = asum[j] / mass[j];
    bbar[j] = bsum[j] / mass[j];
  }
  for (int i = 0; i < n; ++i) {
    for (const auto& inf : rig.skin_weights[i]) {
      if (inf.weight <= 1e-8) continue;
      int j = inf.keypoint;
      if (out.degenerate[j]) continue;
      Vec3 a = canonical.vertices[i] - rig.keypoints[j] - abar[j];
      Vec3 b = posed.vertices[i] - bbar[j];
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cov[j](r, c) += inf.weight * b[r] * a[c];
    }
  }

  for (int j = 0; j < k; ++j) {
    if (out.degenerate[j]) continue;
    so3::ProperSvd3 svd = so3::svd3_proper(cov[j]);
    if (svd.s.y <= std::max(1e-12, 1e-9 * svd.s.x)) {
      out.degenerate[j] = true;  // rank-deficient: rotation not identifiable
      continue;
    }
    Mat3 rot = svd.u * svd.v.transposed();
    out.transforms.rotations[j] = so3::quat_from_matrix(rot);
    out.transforms.translations[j] = bbar[j] - rot * abar[j];
  }
  return out;
}

}  // namespace pb
