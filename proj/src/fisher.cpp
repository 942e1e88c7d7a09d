#include "pb/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "pb/errors.hpp"
#include "pb/rng.hpp"
#include "pb/so3.hpp"

namespace pb::fisher {

namespace {

double bessel_i0(double x) { return std::cyl_bessel_i(0.0, std::abs(x)); }
double bessel_i1(double x) {
  double v = std::cyl_bessel_i(1.0, std::abs(x));
  return x < 0.0 ? -v : v;
}

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr int kGL = 16;
const double kGLx[kGL] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
const double kGLw[kGL] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
    0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
    0.1826034150449236, 0.1895061045156989, 0.1895061045156989,
    0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479,
    0.0271524594117541};

double gl16(const std::function<double(double)>& f, double a, double b) {
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < kGL; ++i) s += kGLw[i] * f(mid + half * kGLx[i]);
  return s * half;
}

double adaptive(const std::function<double(double)>& f, double a, double b,
                double tol, int depth) {
  double whole = gl16(f, a, b);
  double mid = 0.5 * (a + b);
  double split = gl16(f, a, mid) + gl16(f, mid, b);
  if (depth > 40 || std::abs(whole - split) <= tol * std::max(1e-300, std::abs(split)))
    return split;
  return adaptive(f, a, mid, tol * 0.7, depth + 1) +
         adaptive(f, mid, b, tol * 0.7, depth + 1);
}

// c and dc/ds via the single-integral representation
//   c(s) = int_{-1}^{1} 1/2 I0(a(1-u)) I0(b(1+u)) exp(s3 u) du,
// a = (s1 - s2)/2, b = (s1 + s2)/2, in the proper singular values of F.
// Derivatives differentiate under the integral sign (I0' = I1).
struct NormalizerEval {
  double c;
  double dc1, dc2, dc3;
};

NormalizerEval eval_normalizer(double s1, double s2, double s3, bool want_grad) {
  double al = 0.5 * (s1 - s2), be = 0.5 * (s1 + s2);
  NormalizerEval out{};
  auto fc = [&](double u) {
    return 0.5 * bessel_i0(al * (1.0 - u)) * bessel_i0(be * (1.0 + u)) * std::exp(s3 * u);
  };
  out.c = adaptive(fc, -1.0, 1.0, 1e-11, 0);
  if (!want_grad) return out;

  auto fd1 = [&](double u) {
    double g0 = bessel_i0(al * (1.0 - u)), g1 = bessel_i1(al * (1.0 - u));
    double h0 = bessel_i0(be * (1.0 + u)), h1 = bessel_i1(be * (1.0 + u));
    double e = std::exp(s3 * u);
    return 0.5 * e * (g1 * 0.5 * (1.0 - u) * h0 + g0 * h1 * 0.5 * (1.0 + u));
  };
  auto fd2 = [&](double u) {
    double g0 = bessel_i0(al * (1.0 - u)), g1 = bessel_i1(al * (1.0 - u));
    double h0 = bessel_i0(be * (1.0 + u)), h1 = bessel_i1(be * (1.0 + u));
    double e = std::exp(s3 * u);
    return 0.5 * e * (-g1 * 0.5 * (1.0 - u) * h0 + g0 * h1 * 0.5 * (1.0 + u));
  };
  auto fd3 = [&](double u) { return fc(u) * u; };
  out.dc1 = adaptive(fd1, -1.0, 1.0, 1e-11, 0);
  out.dc2 = adaptive(fd2, -1.0, 1.0, 1e-11, 0);
  out.dc3 = adaptive(fd3, -1.0, 1.0, 1e-11, 0);
  return out;
}

void check_finite(const Mat3& f, const char* what) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (!std::isfinite(f(i, j)))
        throw NumericalError(std::string(what) + ": non-finite parameter");
}

}  // namespace

double log_normalizer_sv(double s1, double s2, double s3) {
  if (s1 == 0.0 && s2 == 0.0 && s3 == 0.0) return 0.0;  // c(0) = 1 exactly
  return std::log(eval_normalizer(s1, s2, s3, false).c);
}

double log_normalizer(const Mat3& f, double s_max) {
  check_finite(f, "log_normalizer");
  so3::ProperSvd3 svd = so3::svd3_proper(f);
  if (svd.s.x > s_max)
    throw NumericalError("log_normalizer: singular value " + std::to_string(svd.s.x) +
                         " exceeds cap " + std::to_string(s_max));
  return log_normalizer_sv(svd.s.x, svd.s.y, svd.s.z);
}

Mat3 log_normalizer_grad(const Mat3& f, double s_max) {
  check_finite(f, "log_normalizer_grad");
  so3::ProperSvd3 svd = so3::svd3_proper(f);
  if (svd.s.x > s_max)
    throw NumericalError("log_normalizer_grad: singular value exceeds cap");
  NormalizerEval e = eval_normalizer(svd.s.x, svd.s.y, svd.s.z, true);
  // grad = E[R] = U diag(dlogc/ds) V^T
  Mat3 d = Mat3::zero();
  d(0, 0) = e.dc1 / e.c;
  d(1, 1) = e.dc2 / e.c;
  d(2, 2) = e.dc3 / e.c;
  return svd.u * d * svd.v.transposed();
}

double nll(const Mat3& rotation, const Mat3& f, double s_max) {
  return log_normalizer(f, s_max) - inner(f, rotation);
}

Mat3 mode(const Mat3& f) {
  so3::ProperSvd3 svd = so3::svd3_proper(f);
  return svd.u * svd.v.transposed();
}

std::vector<Mat3> sample(const Mat3& f, int n, uint64_t seed) {
  if (n < 1) throw DataError("sample: n must be >= 1");
  check_finite(f, "sample");
  so3::Mat4 k = so3::davenport_matrix(f);
  so3::Eig4 eig = so3::jacobi_eig4(k);

  // Bingham exponent in the eigenbasis: exp(-sum a_i n_i^2), a_i >= 0.
  double a[4];
  for (int i = 0; i < 4; ++i) a[i] = eig.values[0] - eig.values[i];

  // ACG envelope: solve sum_i 1/(b + 2 a_i) = 1 for b in (0, 4].
  double lo = 1e-12, hi = 4.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (double ai : a) s += 1.0 / (mid + 2.0 * ai);
    (s > 1.0 ? lo : hi) = mid;
  }
  double b = 0.5 * (lo + hi);
  double omega[4];
  for (int i = 0; i < 4; ++i) omega[i] = 1.0 + 2.0 * a[i] / b;

  Rng rng(seed);
  std::vector<Mat3> out;
  out.reserve(n);
  long trials = 0;
  while (static_cast<int>(out.size()) < n) {
    ++trials;
    double y[4], nsq = 0.0;
    for (int i = 0; i < 4; ++i) {
      y[i] = rng.normal() / std::sqrt(omega[i]);
      nsq += y[i] * y[i];
    }
    if (nsq < 1e-30) continue;
    double t = 0.0;
    for (int i = 0; i < 4; ++i) t += a[i] * y[i] * y[i] / nsq;
    double w = 0.25 * b + 0.5 * t;
    double accept = std::exp(0.5 * (4.0 - b) - t) * w * w;
    if (rng.uniform() < accept) {
      double inv = 1.0 / std::sqrt(nsq);
      double qc[4] = {0, 0, 0, 0};
      for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 4; ++c) qc[c] += y[i] * inv * eig.vectors[i][c];
      Quat q = Quat{qc[0], qc[1], qc[2], qc[3]}.normalized();
      out.push_back(so3::attitude(q));
    }
    if (trials >= 20000 && static_cast<double>(out.size()) / static_cast<double>(trials) < 1e-4)
      throw NumericalError(
          "sample: acceptance rate below 1e-4; concentration likely beyond s_max");
  }
  return out;
}

}  // namespace pb::fisher
