#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "pb/adgeom.hpp"
#include "pb/autodiff.hpp"
#include "pb/errors.hpp"
#include "pb/lbs.hpp"
#include "pb/rng.hpp"
#include "pb/so3.hpp"

using namespace pb;
using namespace pb::ad;

namespace {

std::vector<double> random_values(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Checks d(loss)/d(input) for every entry of every leaf input by central
// finite differences. `build` maps leaf Vars to a scalar loss Var.
void fd_check(const std::function<Var(const std::vector<Var>&)>& build,
              std::vector<std::pair<int, int>> shapes, uint64_t seed,
              double tol = 1e-6, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<std::vector<double>> data;
  for (auto [r, c] : shapes) data.push_back(random_values(rng, r * c, lo, hi));

  auto make_inputs = [&](bool grad) {
    std::vector<Var> ins;
    for (size_t i = 0; i < shapes.size(); ++i) {
      ins.push_back(grad ? leaf(shapes[i].first, shapes[i].second, data[i])
                         : constant(shapes[i].first, shapes[i].second, data[i]));
    }
    return ins;
  };

  auto inputs = make_inputs(true);
  Var loss = build(inputs);
  REQUIRE(loss.node->size() == 1);
  backward(loss);

  const double h = 1e-6;
  for (size_t k = 0; k < shapes.size(); ++k) {
    for (size_t e = 0; e < data[k].size(); ++e) {
      double saved = data[k][e];
      double step = h * std::max(1.0, std::abs(saved));
      data[k][e] = saved + step;
      double fp = build(make_inputs(false)).scalar();
      data[k][e] = saved - step;
      double fm = build(make_inputs(false)).scalar();
      data[k][e] = saved;
      double fd = (fp - fm) / (2 * step);
      double an = inputs[k].node->g[e];
      double denom = std::max({std::abs(fd), std::abs(an), 1.0});
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

Var project(const Var& x, uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, constant(x.rows(), x.cols(),
                             random_values(rng, x.rows() * x.cols()))));
}

}  // namespace

TEST_CASE("backward: gradient of sum is ones") {
  Var x = leaf(2, 3, {1, 2, 3, 4, 5, 6});
  backward(sum(x));
  for (double g : x.node->g) CHECK(g == 1.0);
}

TEST_CASE("backward: closed-form linear least squares gradient") {
  // loss = 1/2 ||W x - y||^2, dL/dW = (Wx - y) x^T
  Var w = leaf(2, 2, {1.0, 2.0, -1.0, 0.5});
  Var x = constant(2, 1, {0.3, -0.7});
  Var y = constant(2, 1, {1.0, 2.0});
  Var r = sub(matmul(w, x), y);
  backward(scale(sumsq(r), 0.5));
  double rx0 = 1.0 * 0.3 + 2.0 * -0.7 - 1.0;
  double rx1 = -1.0 * 0.3 + 0.5 * -0.7 - 2.0;
  CHECK(w.node->g[0] == doctest::Approx(rx0 * 0.3));
  CHECK(w.node->g[1] == doctest::Approx(rx0 * -0.7));
  CHECK(w.node->g[2] == doctest::Approx(rx1 * 0.3));
  CHECK(w.node->g[3] == doctest::Approx(rx1 * -0.7));
}

TEST_CASE("backward: detached loss throws") {
  Var c = constant(1, 1, {3.0});
  CHECK_THROWS_AS(backward(c), NumericalError);
  Var x = leaf(2, 2, {1, 2, 3, 4});
  CHECK_THROWS_AS(backward(x), NumericalError);  // not 1x1
}

TEST_CASE("fd: elementwise and structural ops") {
  fd_check([](const std::vector<Var>& in) { return project(add(in[0], in[1]), 1); },
           {{3, 4}, {3, 4}}, 11);
  fd_check([](const std::vector<Var>& in) { return project(sub(in[0], in[1]), 2); },
           {{3, 4}, {3, 4}}, 12);
  fd_check([](const std::vector<Var>& in) { return project(mul(in[0], in[1]), 3); },
           {{3, 4}, {3, 4}}, 13);
  fd_check([](const std::vector<Var>& in) { return project(scale(in[0], -2.5), 4); },
           {{2, 5}}, 14);
  fd_check([](const std::vector<Var>& in) { return project(vexp(in[0]), 5); }, {{3, 3}}, 15);
  fd_check([](const std::vector<Var>& in) { return project(vlog(in[0]), 6); },
           {{3, 3}}, 16, 1e-6, 0.2, 2.0);
  fd_check([](const std::vector<Var>& in) { return project(gelu(in[0]), 7); }, {{3, 4}}, 17);
  fd_check([](const std::vector<Var>& in) { return project(transpose(in[0]), 8); }, {{3, 5}}, 18);
  fd_check([](const std::vector<Var>& in) { return project(matmul(in[0], in[1]), 9); },
           {{3, 4}, {4, 2}}, 19);
}

TEST_CASE("fd: broadcast and slicing ops") {
  fd_check([](const std::vector<Var>& in) { return project(add_rowvec(in[0], in[1]), 1); },
           {{4, 3}, {1, 3}}, 21);
  fd_check([](const std::vector<Var>& in) { return project(sub_rowvec(in[0], in[1]), 2); },
           {{4, 3}, {1, 3}}, 22);
  fd_check([](const std::vector<Var>& in) { return project(add_colvec(in[0], in[1]), 3); },
           {{4, 3}, {4, 1}}, 23);
  fd_check([](const std::vector<Var>& in) { return project(div_scalar(in[0], in[1]), 4); },
           {{4, 3}, {1, 1}}, 24, 1e-6, 0.5, 2.0);
  fd_check([](const std::vector<Var>& in) { return project(slice_rows(in[0], 1, 3), 5); },
           {{4, 3}}, 25);
  fd_check([](const std::vector<Var>& in) { return project(slice_cols(in[0], 1, 3), 6); },
           {{4, 4}}, 26);
  fd_check([](const std::vector<Var>& in) { return project(concat_rows(in[0], in[1]), 7); },
           {{2, 3}, {4, 3}}, 27);
  fd_check([](const std::vector<Var>& in) { return project(concat_cols(in[0], in[1]), 8); },
           {{3, 2}, {3, 4}}, 28);
  fd_check([](const std::vector<Var>& in) {
    return project(gather_rows(in[0], {2, 0, 2, 1}), 9);
  }, {{3, 3}}, 29);
}

TEST_CASE("fd: reductions") {
  fd_check([](const std::vector<Var>& in) { return sum(in[0]); }, {{3, 4}}, 31);
  fd_check([](const std::vector<Var>& in) { return mean(in[0]); }, {{3, 4}}, 32);
  fd_check([](const std::vector<Var>& in) { return sumsq(in[0]); }, {{3, 4}}, 33);
  fd_check([](const std::vector<Var>& in) { return project(mean_rows(in[0]), 1); }, {{5, 3}}, 34);
  fd_check([](const std::vector<Var>& in) { return project(rownorm(in[0]), 2); },
           {{4, 3}}, 35, 1e-6, 0.3, 1.5);
  fd_check([](const std::vector<Var>& in) { return project(colmin(in[0]), 3); }, {{5, 3}}, 36);
  fd_check([](const std::vector<Var>& in) { return project(colmax(in[0]), 4); }, {{5, 3}}, 37);
  fd_check([](const std::vector<Var>& in) { return max_all(in[0]); }, {{4, 4}}, 38);
}

TEST_CASE("fd: normalization and attention primitives") {
  fd_check([](const std::vector<Var>& in) { return project(normalize_rows(in[0]), 1); },
           {{4, 4}}, 41, 1e-6, 0.3, 1.5);
  fd_check([](const std::vector<Var>& in) { return project(softmax_rows(in[0]), 2); },
           {{4, 5}}, 42);
  fd_check([](const std::vector<Var>& in) { return project(logsumexp_rows(in[0]), 3); },
           {{4, 5}}, 43);
  fd_check([](const std::vector<Var>& in) { return project(logsumexp_cols(in[0]), 4); },
           {{4, 5}}, 44);
  fd_check([](const std::vector<Var>& in) {
    return project(layer_norm(in[0], in[1], in[2]), 5);
  }, {{4, 6}, {1, 6}, {1, 6}}, 45);
  fd_check([](const std::vector<Var>& in) { return project(cross_rows(in[0], in[1]), 6); },
           {{5, 3}, {5, 3}}, 46);
}

TEST_CASE("fd: masked softmax") {
  std::vector<char> key_mask = {1, 1, 0, 1, 0};
  std::vector<char> query_mask = {1, 0, 1, 1};
  fd_check([&](const std::vector<Var>& in) {
    return project(softmax_rows(in[0], key_mask, query_mask), 7);
  }, {{4, 5}}, 47);
}

TEST_CASE("softmax rows sum to one; masked entries zero") {
  Rng rng(48);
  Var x = constant(6, 7, random_values(rng, 42, -3, 3));
  Var y = softmax_rows(x);
  for (int i = 0; i < 6; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  std::vector<char> km = {1, 0, 1, 1, 0, 1, 1};
  std::vector<char> qm = {1, 1, 0, 1, 1, 1};
  Var ym = softmax_rows(x, km, qm);
  for (int j = 0; j < 7; ++j) {
    if (!km[j]) (void)0;
    CHECK(ym.at(2, j) == 0.0);  // masked query row
  }
  for (int i = 0; i < 6; ++i) {
    if (!qm[i]) continue;
    CHECK(ym.at(i, 1) == 0.0);
    CHECK(ym.at(i, 4) == 0.0);
  }
}

TEST_CASE("layer_norm: per-row mean 0 variance 1 pre-scale") {
  Rng rng(49);
  Var x = constant(5, 16, random_values(rng, 80, -2, 5));
  Var gamma = constant(1, 16, std::vector<double>(16, 1.0));
  Var beta = constant(1, 16, std::vector<double>(16, 0.0));
  Var y = layer_norm(x, gamma, beta);
  for (int i = 0; i < 5; ++i) {
    double m = 0, v = 0;
    for (int j = 0; j < 16; ++j) m += y.at(i, j);
    m /= 16;
    for (int j = 0; j < 16; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("quat_to_rotmat matches so3::attitude and passes fd") {
  Rng rng(51);
  std::vector<double> qdata;
  for (int i = 0; i < 4; ++i) {
    Quat q = rng.haar_quat();
    qdata.insert(qdata.end(), {q.w, q.x, q.y, q.z});
  }
  Var q = constant(4, 4, qdata);
  Var r = quat_to_rotmat(q);
  for (int i = 0; i < 4; ++i) {
    Quat qq{qdata[i * 4], qdata[i * 4 + 1], qdata[i * 4 + 2], qdata[i * 4 + 3]};
    Mat3 expect = so3::attitude(qq);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) CHECK(r.at(i, a * 3 + b) == doctest::Approx(expect(a, b)));
  }
  fd_check([](const std::vector<Var>& in) {
    return project(quat_to_rotmat(normalize_rows(in[0])), 1);
  }, {{3, 4}}, 52, 1e-6, 0.3, 1.0);
}

TEST_CASE("quat_signfix_normalize: unit rows, w >= 0, fd") {
  Rng rng(53);
  Var q = constant(5, 4, random_values(rng, 20, -1, 1));
  Var y = quat_signfix_normalize(q);
  for (int i = 0; i < 5; ++i) {
    double n = 0;
    for (int j = 0; j < 4; ++j) n += y.at(i, j) * y.at(i, j);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.at(i, 0) >= 0.0);
  }
  fd_check([](const std::vector<Var>& in) {
    return project(quat_signfix_normalize(in[0]), 1);
  }, {{4, 4}}, 54, 1e-6, 0.2, 1.0);
}

namespace {

// small articulated fixture shared by the geometric op tests
struct GeoFixture {
  Mesh mesh;
  Rig rig;
};

GeoFixture make_geo() {
  GeoFixture f;
  Rng rng(777);
  // two clusters of 6 vertices around each keypoint
  f.rig.keypoints = {{0, 0, 0}, {1.2, 0, 0}};
  f.rig.names = {"a", "b"};
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 6; ++i) {
      Vec3 off = rng.normal3() * 0.3;
      f.mesh.vertices.push_back(f.rig.keypoints[k] + off);
      f.rig.skin_weights.push_back({{k, 1.0}});
    }
  f.mesh.faces = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}};
  return f;
}

}  // namespace

TEST_CASE("lbs op matches apply_lbs and passes fd") {
  GeoFixture f = make_geo();
  Rng rng(55);
  PoseTransforms t;
  for (int k = 0; k < 2; ++k) {
    t.rotations.push_back(rng.haar_quat());
    t.translations.push_back(rng.normal3());
  }
  Mesh expect = apply_lbs(f.mesh, f.rig, t);

  std::vector<double> qdata, tdata;
  for (int k = 0; k < 2; ++k) {
    qdata.insert(qdata.end(), {t.rotations[k].w, t.rotations[k].x, t.rotations[k].y,
                               t.rotations[k].z});
    tdata.insert(tdata.end(), {t.translations[k].x, t.translations[k].y, t.translations[k].z});
  }
  Var rot = quat_to_rotmat(constant(2, 4, qdata));
  Var out = lbs(rot, constant(2, 3, tdata), f.mesh, f.rig);
  for (int i = 0; i < f.mesh.vertex_count(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(out.at(i, d) == doctest::Approx(expect.vertices[i][d]).epsilon(1e-12));

  fd_check([&](const std::vector<Var>& in) {
    Var r = quat_to_rotmat(quat_signfix_normalize(in[0]));
    return project(lbs(r, in[1], f.mesh, f.rig), 2);
  }, {{2, 4}, {2, 3}}, 56, 1e-6, 0.2, 1.0);
}

TEST_CASE("weighted_procrustes matches estimate_keypoint_transforms") {
  GeoFixture f = make_geo();
  Rng rng(57);
  PoseTransforms t;
  for (int k = 0; k < 2; ++k) {
    t.rotations.push_back(rng.haar_quat());
    t.translations.push_back(f.rig.keypoints[k] + rng.normal3() * 0.4);
  }
  Mesh posed = apply_lbs(f.mesh, f.rig, t);
  auto est = estimate_keypoint_transforms(f.mesh, posed, f.rig);

  std::vector<double> pdata;
  for (const auto& v : posed.vertices) pdata.insert(pdata.end(), {v.x, v.y, v.z});
  Var out = weighted_procrustes(constant(posed.vertex_count(), 3, pdata), f.mesh, f.rig);
  for (int k = 0; k < 2; ++k) {
    Mat3 expect = so3::attitude(est.transforms.rotations[k]);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(out.at(k, a * 3 + b) == doctest::Approx(expect(a, b)).epsilon(1e-9));
    for (int d = 0; d < 3; ++d)
      CHECK(out.at(k, 9 + d) == doctest::Approx(est.transforms.translations[k][d]).epsilon(1e-9));
  }
}

TEST_CASE("weighted_procrustes fd on posed vertices") {
  GeoFixture f = make_geo();
  Rng rng(58);
  PoseTransforms t;
  for (int k = 0; k < 2; ++k) {
    t.rotations.push_back(rng.haar_quat());
    t.translations.push_back(f.rig.keypoints[k] + rng.normal3() * 0.4);
  }
  Mesh posed = apply_lbs(f.mesh, f.rig, t);
  std::vector<double> pdata;
  for (const auto& v : posed.vertices) pdata.insert(pdata.end(), {v.x, v.y, v.z});

  // fd directly on the posed vertex tensor
  auto build = [&](const std::vector<Var>& in) {
    return project(weighted_procrustes(in[0], f.mesh, f.rig), 3);
  };
  Rng prng(59);
  std::vector<Var> inputs = {leaf(posed.vertex_count(), 3, pdata)};
  Var loss = build(inputs);
  backward(loss);
  const double h = 1e-6;
  for (size_t e = 0; e < pdata.size(); ++e) {
    double saved = pdata[e];
    pdata[e] = saved + h;
    double fp = build({constant(posed.vertex_count(), 3, pdata)}).scalar();
    pdata[e] = saved - h;
    double fm = build({constant(posed.vertex_count(), 3, pdata)}).scalar();
    pdata[e] = saved;
    double fd = (fp - fm) / (2 * h);
    double an = inputs[0].node->g[e];
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}) < 2e-5);
  }
}

TEST_CASE("davenport_average matches weighted_average_rotation and passes fd") {
  Rng rng(61);
  int k1 = 4, k2 = 3;
  std::vector<Quat> quats;
  std::vector<double> rdata(k1 * 9);
  for (int i = 0; i < k1; ++i) {
    Quat q = rng.haar_quat();
    quats.push_back(q);
    Mat3 r = so3::attitude(q);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) rdata[i * 9 + a * 3 + b] = r(a, b);
  }
  // column-normalized plan
  Mat plan(k1, k2);
  for (double& v : plan.a) v = rng.uniform(0.05, 1.0);
  for (int j = 0; j < k2; ++j) {
    double cs = plan.col_sum(j);
    for (int i = 0; i < k1; ++i) plan(i, j) /= cs;
  }

  Var rbar = matmul(transpose(constant(plan)), constant(k1, 9, rdata));
  Var qout = davenport_average(rbar);
  for (int j = 0; j < k2; ++j) {
    std::vector<double> w(k1);
    for (int i = 0; i < k1; ++i) w[i] = plan(i, j);
    auto expect = so3::weighted_average_rotation(quats, w);
    double dot = expect.q.w * qout.at(j, 0) + expect.q.x * qout.at(j, 1) +
                 expect.q.y * qout.at(j, 2) + expect.q.z * qout.at(j, 3);
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-9);
  }

  fd_check([&](const std::vector<Var>& in) {
    Var r = quat_to_rotmat(quat_signfix_normalize(in[0]));
    Var avg = matmul(constant(plan.transposed()), r);
    return project(davenport_average(avg), 5);
  }, {{4, 4}}, 62, 2e-5, 0.2, 1.0);
}

TEST_CASE("determinism: identical graphs produce identical values") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Var a = constant(8, 8, random_values(rng, 64));
    Var b = softmax_rows(matmul(a, transpose(a)));
    return b.values();
  };
  auto v1 = run(99), v2 = run(99);
  CHECK(v1 == v2);
}
