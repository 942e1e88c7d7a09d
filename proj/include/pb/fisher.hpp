#pragma once
#include <cstdint>
#include <vector>

#include "pb/geom.hpp"

namespace pb::fisher {

/// Per-keypoint matrix-Fisher concentration parameters.
struct FisherParams {
  std::vector<Mat3> f;
};

constexpr double kDefaultSMax = 50.0;

/// log c(F), where c(F) = E_{R ~ Haar}[exp(tr(F^T R))]. Computed from the
/// proper singular values of F through a one-dimensional Bessel-type
/// integral, adaptive Gauss-Legendre. Relative error ~1e-9.
/// Throws NumericalError if any singular value exceeds s_max.
double log_normalizer(const Mat3& f, double s_max = kDefaultSMax);

/// log c as a function of proper singular values (s1 >= s2 >= |s3|).
double log_normalizer_sv(double s1, double s2, double s3);

/// Gradient of log c w.r.t. F, equal to the distribution mean E_F[R].
Mat3 log_normalizer_grad(const Mat3& f, double s_max = kDefaultSMax);

/// Negative log-likelihood: log c(F) - tr(F^T R).
double nll(const Mat3& rotation, const Mat3& f, double s_max = kDefaultSMax);

/// Distribution mode: the rotation maximizing tr(F^T R).
Mat3 mode(const Mat3& f);

/// n independent draws via rejection sampling with an angular-central-
/// Gaussian envelope on the quaternion sphere. Deterministic given seed.
/// Throws NumericalError if the acceptance rate collapses (< 1e-4).
std::vector<Mat3> sample(const Mat3& f, int n, uint64_t seed);

}  // namespace pb::fisher
