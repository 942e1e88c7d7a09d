#include "pb/so3.hpp"

#include <algorithm>
#include <cmath>

#include "pb/errors.hpp"

namespace pb::so3 {

Mat3 attitude(const Quat& q_in) {
  double n = q_in.norm();
  if (std::abs(n - 1.0) > 1e-3)
    throw NumericalError("attitude: quaternion norm " + std::to_string(n) +
                         " too far from 1");
  Quat q = q_in;
  if (n != 1.0) q = q_in.normalized();

  double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r(0, 0) = 1 - 2 * (y * y + z * z);
  r(0, 1) = 2 * (x * y - w * z);
  r(0, 2) = 2 * (x * z + w * y);
  r(1, 0) = 2 * (x * y + w * z);
  r(1, 1) = 1 - 2 * (x * x + z * z);
  r(1, 2) = 2 * (y * z - w * x);
  r(2, 0) = 2 * (x * z - w * y);
  r(2, 1) = 2 * (y * z + w * x);
  r(2, 2) = 1 - 2 * (x * x + y * y);
  return r;
}

Quat quat_from_matrix(const Mat3& r) {
  // Shepperd: pick the largest diagonal pivot for stability.
  double t = r.trace();
  Quat q;
  if (t > r(0, 0) && t > r(1, 1) && t > r(2, 2)) {
    double s = std::sqrt(t + 1.0) * 2.0;
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
         (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
         (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
         (r(1, 2) + r(2, 1)) / s};
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
         (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  return q.normalized().sign_fixed();
}

namespace {

// Cyclic Jacobi on a symmetric NxN matrix. Deterministic sweep order.
template <int N>
void jacobi_sym(std::array<std::array<double, N>, N>& a,
                std::array<std::array<double, N>, N>& v) {
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) v[i][j] = (i == j) ? 1.0 : 0.0;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < N; ++p)
      for (int q = p + 1; q < N; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;

    for (int p = 0; p < N; ++p) {
      for (int q = p + 1; q < N; ++q) {
        double apq = a[p][q];
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        // A <- J^T A J
        for (int k = 0; k < N; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < N; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < N; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace

Eig4 jacobi_eig4(const Mat4& m) {
  Mat4 a = m, v;
  jacobi_sym<4>(a, v);
  std::array<int, 4> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return a[i][i] > a[j][j]; });
  Eig4 out;
  for (int k = 0; k < 4; ++k) {
    out.values[k] = a[order[k]][order[k]];
    for (int i = 0; i < 4; ++i) out.vectors[k][i] = v[i][order[k]];
  }
  return out;
}

Eig3 jacobi_eig3(const Mat3& m) {
  std::array<std::array<double, 3>, 3> a, v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a[i][j] = m(i, j);
  jacobi_sym<3>(a, v);
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return a[i][i] > a[j][j]; });
  Eig3 out;
  out.values = {a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]};
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i) out.vectors(i, k) = v[i][order[k]];
  return out;
}

EigResult symmetric4_eig_max(const Mat4& m) {
  double scale = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) scale = std::max(scale, std::abs(m[i][j]));
  double tol = 1e-10 * std::max(1.0, scale);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (std::abs(m[i][j] - m[j][i]) > tol)
        throw NumericalError("symmetric4_eig_max: input not symmetric");

  Eig4 full = jacobi_eig4(m);
  EigResult r;
  r.eigenvalue = full.values[0];
  r.eigenvector = full.vectors[0];
  r.ambiguous = (full.values[0] - full.values[1]) <= 1e-12 * std::max(1.0, std::abs(full.values[0]));
  return r;
}

ProperSvd3 svd3_proper(const Mat3& m) {
  // Eigendecompose m^T m for V and singular values, rebuild U column-wise.
  Mat3 mtm = m.transposed() * m;
  Eig3 e = jacobi_eig3(mtm);
  Vec3 sv = {std::sqrt(std::max(0.0, e.values.x)),
             std::sqrt(std::max(0.0, e.values.y)),
             std::sqrt(std::max(0.0, e.values.z))};

  Mat3 v = e.vectors;
  if (v.det() < 0.0)
    for (int i = 0; i < 3; ++i) v(i, 2) = -v(i, 2);

  double tol = 1e-13 * std::max(1.0, sv.x);
  Vec3 v0{v(0, 0), v(1, 0), v(2, 0)}, v1{v(0, 1), v(1, 1), v(2, 1)},
      v2{v(0, 2), v(1, 2), v(2, 2)};
  Vec3 u0, u1, u2;
  if (sv.x > tol) u0 = (m * v0) / sv.x;
  else u0 = {1, 0, 0};
  if (sv.y > tol) {
    u1 = (m * v1) / sv.y;
    u1 = (u1 - u0 * u0.dot(u1)).normalized();  // re-orthogonalize
  } else {
    // pick any unit vector orthogonal to u0
    Vec3 t = std::abs(u0.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    u1 = (t - u0 * u0.dot(t)).normalized();
  }
  u2 = u0.cross(u1);

  Mat3 u;
  for (int i = 0; i < 3; ++i) {
    u(i, 0) = u0[i];
    u(i, 1) = u1[i];
    u(i, 2) = u2[i];
  }
  // u is in SO(3) by construction (u2 = u0 x u1). Sign of the smallest
  // singular value absorbs det(m).
  double s2 = sv.z;
  if (sv.z > tol) {
    Vec3 mv2 = m * v2;
    if (mv2.dot(u2) < 0.0) s2 = -sv.z;
  } else {
    s2 = 0.0;
  }
  return {u, v, {sv.x, sv.y, s2}};
}

Mat4 davenport_matrix(const Mat3& f) {
  Mat4 k{};
  double tr = f.trace();
  k[0][0] = tr;
  Vec3 z{f(2, 1) - f(1, 2), f(0, 2) - f(2, 0), f(1, 0) - f(0, 1)};
  k[0][1] = k[1][0] = z.x;
  k[0][2] = k[2][0] = z.y;
  k[0][3] = k[3][0] = z.z;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      k[1 + i][1 + j] = f(i, j) + f(j, i) - (i == j ? tr : 0.0);
  return k;
}

AverageResult weighted_average_rotation(const std::vector<Quat>& quats,
                                        const std::vector<double>& weights) {
  if (quats.size() != weights.size())
    throw DimensionError("weighted_average_rotation: length mismatch");
  if (quats.empty())
    throw DimensionError("weighted_average_rotation: empty input");

  Mat4 b{};
  double wsum = 0.0;
  for (size_t i = 0; i < quats.size(); ++i) {
    double w = weights[i];
    if (w < 0.0) throw DataError("weighted_average_rotation: negative weight");
    if (w == 0.0) continue;
    wsum += w;
    Vec4 q{quats[i].w, quats[i].x, quats[i].y, quats[i].z};
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 4; ++c) b[a][c] += w * q[a] * q[c];
  }
  if (wsum <= 0.0)
    throw NumericalError("weighted_average_rotation: all weights zero");
  // Normalizing by the total weight keeps the eigenproblem scale-free.
  for (int a = 0; a < 4; ++a)
    for (int c = 0; c < 4; ++c) b[a][c] /= wsum;

  EigResult e = symmetric4_eig_max(b);
  Quat q{e.eigenvector[0], e.eigenvector[1], e.eigenvector[2], e.eigenvector[3]};
  return {q.normalized().sign_fixed(), e.ambiguous};
}

double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  double c = 0.5 * ((r1.transposed() * r2).trace() - 1.0);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace pb::so3
