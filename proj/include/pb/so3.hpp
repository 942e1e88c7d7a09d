#pragma once
#include <array>
#include <vector>

#include "pb/geom.hpp"

namespace pb::so3 {

using Mat4 = std::array<std::array<double, 4>, 4>;
using Vec4 = std::array<double, 4>;

/// Rotation matrix of a unit quaternion. Inputs with |norm - 1| <= 1e-3 are
/// renormalized; anything further off is rejected.
Mat3 attitude(const Quat& q);

/// Inverse of attitude (Shepperd's method). The result is sign-fixed (w >= 0).
Quat quat_from_matrix(const Mat3& r);

struct EigResult {
  double eigenvalue = 0.0;
  Vec4 eigenvector{};
  bool ambiguous = false;  // dominant eigenvalue tied within 1e-12
};

/// Dominant eigenpair of a symmetric 4x4 matrix via cyclic Jacobi sweeps.
/// Throws NumericalError if the input is not symmetric within 1e-10 (scaled).
EigResult symmetric4_eig_max(const Mat4& m);

/// Full symmetric eigendecomposition, eigenvalues descending.
/// columns of `vectors[i]` ... vectors[k] is the k-th eigenvector.
struct Eig4 {
  Vec4 values{};
  std::array<Vec4, 4> vectors{};
};
Eig4 jacobi_eig4(const Mat4& m);

struct Eig3 {
  Vec3 values;
  Mat3 vectors;  // columns are eigenvectors
};
Eig3 jacobi_eig3(const Mat3& m);

/// Proper SVD: m = u * diag(s) * v^T with u, v in SO(3); s[0] >= s[1] >= |s[2]|
/// and s[2] carries the sign of det(m).
struct ProperSvd3 {
  Mat3 u, v;
  Vec3 s;
};
ProperSvd3 svd3_proper(const Mat3& m);

struct AverageResult {
  Quat q;
  bool ambiguous = false;
};

/// Weighted rotation average minimizing sum_i w_i ||A(q) - A(q_i)||_F^2 over
/// the unit sphere: dominant eigenvector of sum_i w_i q_i q_i^T. Output is
/// sign-fixed (w >= 0). Throws DimensionError on length mismatch and
/// NumericalError if all weights are zero.
AverageResult weighted_average_rotation(const std::vector<Quat>& quats,
                                        const std::vector<double>& weights);

/// Davenport matrix K(F): tr(F^T A(q)) = q^T K(F) q for any unit q.
/// For a rotation R, K(R) = 4 q q^T - I where A(q) = R.
Mat4 davenport_matrix(const Mat3& f);

/// Geodesic angle between two rotations, in radians.
double geodesic_angle(const Mat3& r1, const Mat3& r2);

}  // namespace pb::so3
