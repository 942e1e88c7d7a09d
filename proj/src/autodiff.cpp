#include "pb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "pb/adgeom.hpp"
#include "pb/errors.hpp"
#include "pb/so3.hpp"

namespace pb::ad {

namespace {

NodePtr make_node(int rows, int cols) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->v.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

bool any_grad(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents)
    if (p->needs_grad) return true;
  return false;
}

// Finish an op node: wire parents, propagate needs_grad, attach backward.
Var finish(NodePtr n, std::vector<NodePtr> parents, std::function<void(Node&)> back) {
  n->parents = std::move(parents);
  n->needs_grad = any_grad(n->parents);
  if (n->needs_grad) n->back = std::move(back);
  return Var(std::move(n));
}

void require(bool cond, const char* msg) {
  if (!cond) throw DimensionError(msg);
}

}  // namespace

Var constant(int rows, int cols, std::vector<double> values) {
  if (values.size() != static_cast<size_t>(rows) * cols)
    throw DimensionError("constant: value count != rows*cols");
  auto n = make_node(rows, cols);
  n->v = std::move(values);
  return Var(n);
}

Var constant(const Mat& m) { return constant(m.rows, m.cols, m.a); }

Var zeros(int rows, int cols) { return Var(make_node(rows, cols)); }

Var leaf(int rows, int cols, std::vector<double> values) {
  Var v = constant(rows, cols, std::move(values));
  v.node->needs_grad = true;
  v.node->ensure_grad();
  return v;
}

Mat to_mat(const Var& x) {
  Mat m(x.rows(), x.cols());
  m.a = x.values();
  return m;
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = a.node->v[i] + b.node->v[i];
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb](Node& self) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pb->g[i] += self.g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = a.node->v[i] - b.node->v[i];
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb](Node& self) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pb->g[i] -= self.g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = a.node->v[i] * b.node->v[i];
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb](Node& self) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i] * pb->v[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) pb->g[i] += self.g[i] * pa->v[i];
    }
  });
}

Var scale(const Var& a, double s) {
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = a.node->v[i] * s;
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, s](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i] * s;
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var vexp(const Var& a) {
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = std::exp(a.node->v[i]);
  Node* pa = a.node.get();
  Node* self_raw = n.get();
  return finish(n, {a.node}, [pa, self_raw](Node& self) {
    (void)self_raw;
    pa->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i] * self.v[i];
  });
}

Var vlog(const Var& a) {
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = std::log(a.node->v[i]);
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i) pa->g[i] += self.g[i] / pa->v[i];
  });
}

Var gelu(const Var& a) {
  auto n = make_node(a.rows(), a.cols());
  const double inv_sqrt2 = 0.70710678118654752440;
  for (size_t i = 0; i < n->size(); ++i) {
    double x = a.node->v[i];
    n->v[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, inv_sqrt2](Node& self) {
    pa->ensure_grad();
    const double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < self.size(); ++i) {
      double x = pa->v[i];
      double phi = std::exp(-0.5 * x * x) * inv_sqrt2pi;
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      pa->g[i] += self.g[i] * (cdf + x * phi);
    }
  });
}

Var relu(const Var& a) {
  auto n = make_node(a.rows(), a.cols());
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = std::max(0.0, a.node->v[i]);
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      if (pa->v[i] > 0.0) pa->g[i] += self.g[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  int r = a.rows(), k = a.cols(), c = b.cols();
  auto n = make_node(r, c);
  const double* av = a.node->v.data();
  const double* bv = b.node->v.data();
  double* ov = n->v.data();
  for (int i = 0; i < r; ++i)
    for (int kk = 0; kk < k; ++kk) {
      double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv + kk * c;
      double* orow = ov + i * c;
      for (int j = 0; j < c; ++j) orow[j] += aik * brow[j];
    }
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb, r, k, c](Node& self) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      // gA += G B^T
      for (int i = 0; i < r; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = self.g.data() + i * c;
          const double* brow = pb->v.data() + kk * c;
          for (int j = 0; j < c; ++j) s += grow[j] * brow[j];
          pa->g[i * k + kk] += s;
        }
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      // gB += A^T G
      for (int i = 0; i < r; ++i) {
        const double* grow = self.g.data() + i * c;
        for (int kk = 0; kk < k; ++kk) {
          double aik = pa->v[i * k + kk];
          if (aik == 0.0) continue;
          double* brow = pb->g.data() + kk * c;
          for (int j = 0; j < c; ++j) brow[j] += aik * grow[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(c, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(j) * r + i] = a.at(i, j);
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa->g[static_cast<size_t>(i) * c + j] += self.g[static_cast<size_t>(j) * r + i];
  });
}

Var add_rowvec(const Var& x, const Var& v) {
  require(v.rows() == 1 && v.cols() == x.cols(), "add_rowvec: shape mismatch");
  int r = x.rows(), c = x.cols();
  auto n = make_node(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(i) * c + j] = x.at(i, j) + v.at(0, j);
  Node *px = x.node.get(), *pv = v.node.get();
  return finish(n, {x.node, v.node}, [px, pv, r, c](Node& self) {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) px->g[i] += self.g[i];
    }
    if (pv->needs_grad) {
      pv->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pv->g[j] += self.g[static_cast<size_t>(i) * c + j];
    }
  });
}

Var sub_rowvec(const Var& x, const Var& v) {
  require(v.rows() == 1 && v.cols() == x.cols(), "sub_rowvec: shape mismatch");
  int r = x.rows(), c = x.cols();
  auto n = make_node(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(i) * c + j] = x.at(i, j) - v.at(0, j);
  Node *px = x.node.get(), *pv = v.node.get();
  return finish(n, {x.node, v.node}, [px, pv, r, c](Node& self) {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) px->g[i] += self.g[i];
    }
    if (pv->needs_grad) {
      pv->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pv->g[j] -= self.g[static_cast<size_t>(i) * c + j];
    }
  });
}

Var add_colvec(const Var& x, const Var& u) {
  require(u.cols() == 1 && u.rows() == x.rows(), "add_colvec: shape mismatch");
  int r = x.rows(), c = x.cols();
  auto n = make_node(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(i) * c + j] = x.at(i, j) + u.at(i, 0);
  Node *px = x.node.get(), *pu = u.node.get();
  return finish(n, {x.node, u.node}, [px, pu, r, c](Node& self) {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) px->g[i] += self.g[i];
    }
    if (pu->needs_grad) {
      pu->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pu->g[i] += self.g[static_cast<size_t>(i) * c + j];
    }
  });
}

Var div_scalar(const Var& x, const Var& s) {
  require(s.rows() == 1 && s.cols() == 1, "div_scalar: divisor must be 1x1");
  int r = x.rows(), c = x.cols();
  auto n = make_node(r, c);
  double sv = s.scalar();
  for (size_t i = 0; i < n->size(); ++i) n->v[i] = x.node->v[i] / sv;
  Node *px = x.node.get(), *ps = s.node.get();
  return finish(n, {x.node, s.node}, [px, ps](Node& self) {
    double sv = ps->v[0];
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < self.size(); ++i) px->g[i] += self.g[i] / sv;
    }
    if (ps->needs_grad) {
      ps->ensure_grad();
      double acc = 0.0;
      for (size_t i = 0; i < self.size(); ++i) acc += self.g[i] * px->v[i];
      ps->g[0] -= acc / (sv * sv);
    }
  });
}

Var slice_rows(const Var& a, int r0, int r1) {
  require(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows: bad range");
  int c = a.cols();
  auto n = make_node(r1 - r0, c);
  std::copy(a.node->v.begin() + static_cast<size_t>(r0) * c,
            a.node->v.begin() + static_cast<size_t>(r1) * c, n->v.begin());
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r0, c](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.size(); ++i)
      pa->g[static_cast<size_t>(r0) * c + i] += self.g[i];
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  require(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  int r = a.rows(), c = a.cols(), w = c1 - c0;
  auto n = make_node(r, w);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      n->v[static_cast<size_t>(i) * w + j] = a.at(i, c0 + j);
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c, c0, w](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        pa->g[static_cast<size_t>(i) * c + c0 + j] += self.g[static_cast<size_t>(i) * w + j];
  });
}

Var concat_rows(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "concat_rows: column mismatch");
  int c = a.cols(), ra = a.rows(), rb = b.rows();
  auto n = make_node(ra + rb, c);
  std::copy(a.node->v.begin(), a.node->v.end(), n->v.begin());
  std::copy(b.node->v.begin(), b.node->v.end(), n->v.begin() + static_cast<size_t>(ra) * c);
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb, ra, c](Node& self) {
    size_t split = static_cast<size_t>(ra) * c;
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < split; ++i) pa->g[i] += self.g[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = split; i < self.size(); ++i) pb->g[i - split] += self.g[i];
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols: row mismatch");
  int r = a.rows(), ca = a.cols(), cb = b.cols();
  auto n = make_node(r, ca + cb);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) n->v[static_cast<size_t>(i) * (ca + cb) + j] = a.at(i, j);
    for (int j = 0; j < cb; ++j) n->v[static_cast<size_t>(i) * (ca + cb) + ca + j] = b.at(i, j);
  }
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb, r, ca, cb](Node& self) {
    int w = ca + cb;
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < ca; ++j)
          pa->g[static_cast<size_t>(i) * ca + j] += self.g[static_cast<size_t>(i) * w + j];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cb; ++j)
          pb->g[static_cast<size_t>(i) * cb + j] += self.g[static_cast<size_t>(i) * w + ca + j];
    }
  });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  int c = a.cols();
  for (int i : idx) require(0 <= i && i < a.rows(), "gather_rows: index out of range");
  auto n = make_node(static_cast<int>(idx.size()), c);
  for (size_t k = 0; k < idx.size(); ++k)
    for (int j = 0; j < c; ++j) n->v[k * c + j] = a.at(idx[k], j);
  Node* pa = a.node.get();
  std::vector<int> idx_copy = idx;
  return finish(n, {a.node}, [pa, idx_copy, c](Node& self) {
    pa->ensure_grad();
    for (size_t k = 0; k < idx_copy.size(); ++k)
      for (int j = 0; j < c; ++j)
        pa->g[static_cast<size_t>(idx_copy[k]) * c + j] += self.g[k * c + j];
  });
}

Var sum(const Var& a) {
  auto n = make_node(1, 1);
  double s = 0.0;
  for (double v : a.node->v) s += v;
  n->v[0] = s;
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += self.g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.node->size())); }

Var sumsq(const Var& a) {
  auto n = make_node(1, 1);
  double s = 0.0;
  for (double v : a.node->v) s += v * v;
  n->v[0] = s;
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa](Node& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += 2.0 * pa->v[i] * self.g[0];
  });
}

Var mean_rows(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(1, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->v[j] += a.at(i, j);
  for (int j = 0; j < c; ++j) n->v[j] /= r;
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) pa->g[static_cast<size_t>(i) * c + j] += self.g[j] / r;
  });
}

namespace {

Var col_extreme(const Var& a, bool maximum) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(1, c);
  std::vector<int> arg(c, 0);
  for (int j = 0; j < c; ++j) {
    double best = a.at(0, j);
    for (int i = 1; i < r; ++i) {
      double v = a.at(i, j);
      if (maximum ? v > best : v < best) {
        best = v;
        arg[j] = i;
      }
    }
    n->v[j] = best;
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, arg, c](Node& self) {
    pa->ensure_grad();
    for (int j = 0; j < c; ++j)
      pa->g[static_cast<size_t>(arg[j]) * c + j] += self.g[j];
  });
}

}  // namespace

Var colmin(const Var& a) { return col_extreme(a, false); }
Var colmax(const Var& a) { return col_extreme(a, true); }

Var max_all(const Var& a) {
  auto n = make_node(1, 1);
  size_t arg = 0;
  for (size_t i = 1; i < a.node->size(); ++i)
    if (a.node->v[i] > a.node->v[arg]) arg = i;
  n->v[0] = a.node->v[arg];
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, arg](Node& self) {
    pa->ensure_grad();
    pa->g[arg] += self.g[0];
  });
}

Var rownorm(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(r, 1);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j) * a.at(i, j);
    n->v[i] = std::sqrt(s);
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i) {
      double nv = self.v[i];
      if (nv < 1e-300) continue;
      for (int j = 0; j < c; ++j)
        pa->g[static_cast<size_t>(i) * c + j] +=
            self.g[i] * pa->v[static_cast<size_t>(i) * c + j] / nv;
    }
  });
}

Var normalize_rows(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(r, c);
  std::vector<double> norms(r);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j) * a.at(i, j);
    norms[i] = std::sqrt(s);
    double inv = norms[i] > 1e-300 ? 1.0 / norms[i] : 0.0;
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(i) * c + j] = a.at(i, j) * inv;
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, norms, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i) {
      if (norms[i] < 1e-300) continue;
      double inv = 1.0 / norms[i];
      double dot = 0.0;
      for (int j = 0; j < c; ++j)
        dot += self.g[static_cast<size_t>(i) * c + j] * self.v[static_cast<size_t>(i) * c + j];
      for (int j = 0; j < c; ++j) {
        size_t k = static_cast<size_t>(i) * c + j;
        pa->g[k] += inv * (self.g[k] - self.v[k] * dot);
      }
    }
  });
}

Var softmax_rows(const Var& a, const std::vector<char>& key_mask,
                 const std::vector<char>& query_mask) {
  int r = a.rows(), c = a.cols();
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != c)
    throw DimensionError("softmax_rows: key mask length");
  if (!query_mask.empty() && static_cast<int>(query_mask.size()) != r)
    throw DimensionError("softmax_rows: query mask length");
  auto n = make_node(r, c);
  for (int i = 0; i < r; ++i) {
    if (!query_mask.empty() && !query_mask[i]) continue;  // row stays zero
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (key_mask.empty() || key_mask[j]) m = std::max(m, a.at(i, j));
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      if (!key_mask.empty() && !key_mask[j]) continue;
      double e = std::exp(a.at(i, j) - m);
      n->v[static_cast<size_t>(i) * c + j] = e;
      s += e;
    }
    for (int j = 0; j < c; ++j) n->v[static_cast<size_t>(i) * c + j] /= s;
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) {
        size_t k = static_cast<size_t>(i) * c + j;
        dot += self.g[k] * self.v[k];
      }
      for (int j = 0; j < c; ++j) {
        size_t k = static_cast<size_t>(i) * c + j;
        pa->g[k] += self.v[k] * (self.g[k] - dot);
      }
    }
  });
}

Var logsumexp_rows(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(r, 1);
  for (int i = 0; i < r; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) m = std::max(m, a.at(i, j));
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(a.at(i, j) - m);
    n->v[i] = m + std::log(s);
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        size_t k = static_cast<size_t>(i) * c + j;
        pa->g[k] += self.g[i] * std::exp(pa->v[k] - self.v[i]);
      }
  });
}

Var logsumexp_cols(const Var& a) {
  int r = a.rows(), c = a.cols();
  auto n = make_node(1, c);
  for (int j = 0; j < c; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < r; ++i) m = std::max(m, a.at(i, j));
    double s = 0.0;
    for (int i = 0; i < r; ++i) s += std::exp(a.at(i, j) - m);
    n->v[j] = m + std::log(s);
  }
  Node* pa = a.node.get();
  return finish(n, {a.node}, [pa, r, c](Node& self) {
    pa->ensure_grad();
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) {
        size_t k = static_cast<size_t>(i) * c + j;
        pa->g[k] += self.g[j] * std::exp(pa->v[k] - self.v[j]);
      }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  int r = x.rows(), c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c, "layer_norm: gamma shape");
  require(beta.rows() == 1 && beta.cols() == c, "layer_norm: beta shape");
  auto n = make_node(r, c);
  std::vector<double> mu(r), istd(r);
  for (int i = 0; i < r; ++i) {
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += x.at(i, j);
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      double d = x.at(i, j) - m;
      var += d * d;
    }
    var /= c;
    mu[i] = m;
    istd[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      double xhat = (x.at(i, j) - m) * istd[i];
      n->v[static_cast<size_t>(i) * c + j] = gamma.at(0, j) * xhat + beta.at(0, j);
    }
  }
  Node *px = x.node.get(), *pg = gamma.node.get(), *pb = beta.node.get();
  return finish(n, {x.node, gamma.node, beta.node}, [px, pg, pb, mu, istd, r, c](Node& self) {
    for (int i = 0; i < r; ++i) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < c; ++j) {
        size_t k = static_cast<size_t>(i) * c + j;
        double xhat = (px->v[k] - mu[i]) * istd[i];
        double dxhat = self.g[k] * pg->v[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (pg->needs_grad) {
          pg->ensure_grad();
          pg->g[j] += self.g[k] * xhat;
        }
        if (pb->needs_grad) {
          pb->ensure_grad();
          pb->g[j] += self.g[k];
        }
      }
      if (px->needs_grad) {
        px->ensure_grad();
        for (int j = 0; j < c; ++j) {
          size_t k = static_cast<size_t>(i) * c + j;
          double xhat = (px->v[k] - mu[i]) * istd[i];
          double dxhat = self.g[k] * pg->v[j];
          px->g[k] += istd[i] * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
        }
      }
    }
  });
}

Var cross_rows(const Var& a, const Var& b) {
  require(a.cols() == 3 && b.cols() == 3 && a.rows() == b.rows(), "cross_rows: need (n,3)");
  int r = a.rows();
  auto n = make_node(r, 3);
  for (int i = 0; i < r; ++i) {
    double ax = a.at(i, 0), ay = a.at(i, 1), az = a.at(i, 2);
    double bx = b.at(i, 0), by = b.at(i, 1), bz = b.at(i, 2);
    n->v[static_cast<size_t>(i) * 3 + 0] = ay * bz - az * by;
    n->v[static_cast<size_t>(i) * 3 + 1] = az * bx - ax * bz;
    n->v[static_cast<size_t>(i) * 3 + 2] = ax * by - ay * bx;
  }
  Node *pa = a.node.get(), *pb = b.node.get();
  return finish(n, {a.node, b.node}, [pa, pb, r](Node& self) {
    for (int i = 0; i < r; ++i) {
      size_t o = static_cast<size_t>(i) * 3;
      double gx = self.g[o], gy = self.g[o + 1], gz = self.g[o + 2];
      double ax = pa->v[o], ay = pa->v[o + 1], az = pa->v[o + 2];
      double bx = pb->v[o], by = pb->v[o + 1], bz = pb->v[o + 2];
      if (pa->needs_grad) {
        pa->ensure_grad();
        // d(a x b)/da adjoint: g x b ... = b x g? (a x b) = [a]x b; adjoint of
        // [.]x b wrt a is -[b]x g = b x g... verified by finite differences.
        pa->g[o + 0] += by * gz - bz * gy;
        pa->g[o + 1] += bz * gx - bx * gz;
        pa->g[o + 2] += bx * gy - by * gx;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->g[o + 0] += az * gy - ay * gz;
        pb->g[o + 1] += ax * gz - az * gx;
        pb->g[o + 2] += ay * gx - ax * gy;
      }
    }
  });
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.node->size() != 1)
    throw NumericalError("backward: loss must be a defined 1x1 tensor");
  if (!loss.node->needs_grad)
    throw NumericalError("backward: loss is detached from any gradient leaf");

  // iterative DFS postorder
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.node.get(), 0});
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  loss.node->g[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->back) n->back(*n);
  }
}

// ---------------- geometric ops ----------------

Var quat_to_rotmat(const Var& q) {
  require(q.cols() == 4, "quat_to_rotmat: need (k,4)");
  int k = q.rows();
  auto n = make_node(k, 9);
  for (int i = 0; i < k; ++i) {
    double w = q.at(i, 0), x = q.at(i, 1), y = q.at(i, 2), z = q.at(i, 3);
    double* r = n->v.data() + static_cast<size_t>(i) * 9;
    r[0] = 1 - 2 * (y * y + z * z);
    r[1] = 2 * (x * y - w * z);
    r[2] = 2 * (x * z + w * y);
    r[3] = 2 * (x * y + w * z);
    r[4] = 1 - 2 * (x * x + z * z);
    r[5] = 2 * (y * z - w * x);
    r[6] = 2 * (x * z - w * y);
    r[7] = 2 * (y * z + w * x);
    r[8] = 1 - 2 * (x * x + y * y);
  }
  Node* pq = q.node.get();
  return finish(n, {q.node}, [pq, k](Node& self) {
    pq->ensure_grad();
    for (int i = 0; i < k; ++i) {
      const double* g = self.g.data() + static_cast<size_t>(i) * 9;
      double w = pq->v[static_cast<size_t>(i) * 4 + 0];
      double x = pq->v[static_cast<size_t>(i) * 4 + 1];
      double y = pq->v[static_cast<size_t>(i) * 4 + 2];
      double z = pq->v[static_cast<size_t>(i) * 4 + 3];
      double gw = 0, gx = 0, gy = 0, gz = 0;
      // r0 = 1-2y^2-2z^2
      gy += g[0] * (-4 * y); gz += g[0] * (-4 * z);
      // r1 = 2xy - 2wz
      gx += g[1] * (2 * y); gy += g[1] * (2 * x); gw += g[1] * (-2 * z); gz += g[1] * (-2 * w);
      // r2 = 2xz + 2wy
      gx += g[2] * (2 * z); gz += g[2] * (2 * x); gw += g[2] * (2 * y); gy += g[2] * (2 * w);
      // r3 = 2xy + 2wz
      gx += g[3] * (2 * y); gy += g[3] * (2 * x); gw += g[3] * (2 * z); gz += g[3] * (2 * w);
      // r4 = 1-2x^2-2z^2
      gx += g[4] * (-4 * x); gz += g[4] * (-4 * z);
      // r5 = 2yz - 2wx
      gy += g[5] * (2 * z); gz += g[5] * (2 * y); gw += g[5] * (-2 * x); gx += g[5] * (-2 * w);
      // r6 = 2xz - 2wy
      gx += g[6] * (2 * z); gz += g[6] * (2 * x); gw += g[6] * (-2 * y); gy += g[6] * (-2 * w);
      // r7 = 2yz + 2wx
      gy += g[7] * (2 * z); gz += g[7] * (2 * y); gw += g[7] * (2 * x); gx += g[7] * (2 * w);
      // r8 = 1-2x^2-2y^2
      gx += g[8] * (-4 * x); gy += g[8] * (-4 * y);
      pq->g[static_cast<size_t>(i) * 4 + 0] += gw;
      pq->g[static_cast<size_t>(i) * 4 + 1] += gx;
      pq->g[static_cast<size_t>(i) * 4 + 2] += gy;
      pq->g[static_cast<size_t>(i) * 4 + 3] += gz;
    }
  });
}

Var quat_signfix_normalize(const Var& q) {
  require(q.cols() == 4, "quat_signfix_normalize: need (k,4)");
  int k = q.rows();
  std::vector<double> sign(k, 1.0);
  for (int i = 0; i < k; ++i)
    if (q.at(i, 0) < 0.0) sign[i] = -1.0;
  auto n = make_node(k, 4);
  std::vector<double> norms(k);
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) s += q.at(i, j) * q.at(i, j);
    norms[i] = std::sqrt(s);
    double f = norms[i] > 1e-300 ? sign[i] / norms[i] : 0.0;
    for (int j = 0; j < 4; ++j) n->v[static_cast<size_t>(i) * 4 + j] = q.at(i, j) * f;
  }
  Node* pq = q.node.get();
  return finish(n, {q.node}, [pq, sign, norms, k](Node& self) {
    pq->ensure_grad();
    for (int i = 0; i < k; ++i) {
      if (norms[i] < 1e-300) continue;
      double inv = 1.0 / norms[i];
      double dot = 0.0;
      for (int j = 0; j < 4; ++j)
        dot += self.g[static_cast<size_t>(i) * 4 + j] * self.v[static_cast<size_t>(i) * 4 + j];
      for (int j = 0; j < 4; ++j) {
        size_t idx = static_cast<size_t>(i) * 4 + j;
        pq->g[idx] += sign[i] * inv * (self.g[idx] - self.v[idx] * sign[i] * dot * sign[i]);
      }
    }
  });
}

Var lbs(const Var& rot, const Var& trans, const Mesh& canonical, const Rig& rig) {
  int k = rig.keypoint_count();
  require(rot.rows() == k && rot.cols() == 9, "lbs: rot must be (k,9)");
  require(trans.rows() == k && trans.cols() == 3, "lbs: trans must be (k,3)");
  int nverts = canonical.vertex_count();
  if (rig.skinned_vertex_count() != nverts) throw DimensionError("lbs: rig/mesh mismatch");

  auto n = make_node(nverts, 3);
  for (int i = 0; i < nverts; ++i) {
    double out[3] = {0, 0, 0};
    for (const auto& inf : rig.skin_weights[i]) {
      int kk = inf.keypoint;
      const double* r = rot.node->v.data() + static_cast<size_t>(kk) * 9;
      Vec3 local = canonical.vertices[i] - rig.keypoints[kk];
      double lx = local.x, ly = local.y, lz = local.z;
      out[0] += inf.weight * (r[0] * lx + r[1] * ly + r[2] * lz + trans.at(kk, 0));
      out[1] += inf.weight * (r[3] * lx + r[4] * ly + r[5] * lz + trans.at(kk, 1));
      out[2] += inf.weight * (r[6] * lx + r[7] * ly + r[8] * lz + trans.at(kk, 2));
    }
    for (int d = 0; d < 3; ++d) n->v[static_cast<size_t>(i) * 3 + d] = out[d];
  }
  Node *pr = rot.node.get(), *pt = trans.node.get();
  const Mesh* mesh_ptr = &canonical;
  const Rig* rig_ptr = &rig;
  return finish(n, {rot.node, trans.node}, [pr, pt, mesh_ptr, rig_ptr, nverts](Node& self) {
    if (pr->needs_grad) pr->ensure_grad();
    if (pt->needs_grad) pt->ensure_grad();
    for (int i = 0; i < nverts; ++i) {
      const double* gi = self.g.data() + static_cast<size_t>(i) * 3;
      for (const auto& inf : rig_ptr->skin_weights[i]) {
        int kk = inf.keypoint;
        Vec3 local = mesh_ptr->vertices[i] - rig_ptr->keypoints[kk];
        double l[3] = {local.x, local.y, local.z};
        if (pt->needs_grad)
          for (int d = 0; d < 3; ++d) pt->g[static_cast<size_t>(kk) * 3 + d] += inf.weight * gi[d];
        if (pr->needs_grad) {
          double* gr = pr->g.data() + static_cast<size_t>(kk) * 9;
          for (int rrow = 0; rrow < 3; ++rrow)
            for (int cc = 0; cc < 3; ++cc) gr[rrow * 3 + cc] += inf.weight * gi[rrow] * l[cc];
        }
      }
    }
  });
}

namespace {

Vec3 axial(const Mat3& skew) {
  return {skew(2, 1), skew(0, 2), skew(1, 0)};
}

Mat3 hat(const Vec3& w) {
  Mat3 m = Mat3::zero();
  m(0, 1) = -w.z; m(0, 2) = w.y;
  m(1, 0) = w.z;  m(1, 2) = -w.x;
  m(2, 0) = -w.y; m(2, 1) = w.x;
  return m;
}

Mat3 inverse3(const Mat3& m) {
  double d = m.det();
  Mat3 inv;
  inv(0, 0) = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / d;
  inv(0, 1) = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / d;
  inv(0, 2) = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / d;
  inv(1, 0) = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / d;
  inv(1, 1) = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / d;
  inv(1, 2) = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / d;
  inv(2, 0) = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / d;
  inv(2, 1) = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / d;
  inv(2, 2) = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / d;
  return inv;
}

// Differential of the Procrustes rotation: with M = R S (S = V diag(s) V^T,
// signed), dR = R hat(Tinv * axial(R^T dM - dM^T R)), T = tr(S) I - S.
Mat3 procrustes_drot(const Mat3& r, const Mat3& tinv, const Mat3& dm) {
  Mat3 rtdm = r.transposed() * dm;
  Mat3 skew = rtdm - rtdm.transposed();
  Vec3 w = tinv * axial(skew);
  return r * hat(w);
}

struct ProcKeypoint {
  bool degenerate = true;
  Mat3 rot;            // fitted rotation
  Vec3 abar, bbar;     // weighted centroids (source-local / posed)
  double mass = 0.0;
  Mat3 jac[3][3];      // dR for unit dM in entry (a,b)
  bool grad_ok = false;
};

}  // namespace

Var weighted_procrustes(const Var& posed, const Mesh& canonical, const Rig& rig) {
  int nverts = canonical.vertex_count();
  require(posed.rows() == nverts && posed.cols() == 3, "weighted_procrustes: posed shape");
  if (rig.skinned_vertex_count() != nverts)
    throw DimensionError("weighted_procrustes: rig/mesh mismatch");
  int k = rig.keypoint_count();

  auto kp_data = std::make_shared<std::vector<ProcKeypoint>>(k);
  std::vector<double> mass(k, 0.0);
  std::vector<int> support(k, 0);
  std::vector<Vec3> asum(k), bsum(k);
  auto vpos = [&](int i) {
    return Vec3{posed.at(i, 0), posed.at(i, 1), posed.at(i, 2)};
  };
  for (int i = 0; i < nverts; ++i)
    for (const auto& inf : rig.skin_weights[i]) {
      if (inf.weight <= 1e-8) continue;
      int j = inf.keypoint;
      mass[j] += inf.weight;
      support[j] += 1;
      asum[j] += inf.weight * (canonical.vertices[i] - rig.keypoints[j]);
      bsum[j] += inf.weight * vpos(i);
    }

  auto n = make_node(k, 12);
  for (int j = 0; j < k; ++j) {
    ProcKeypoint& pk = (*kp_data)[j];
    double* row = n->v.data() + static_cast<size_t>(j) * 12;
    // default rest transform
    row[0] = row[4] = row[8] = 1.0;
    row[9] = rig.keypoints[j].x;
    row[10] = rig.keypoints[j].y;
    row[11] = rig.keypoints[j].z;
    if (mass[j] < 1e-8 || support[j] < 3) continue;
    pk.mass = mass[j];
    pk.abar = asum[j] / mass[j];
    pk.bbar = bsum[j] / mass[j];
    Mat3 cov = Mat3::zero();
    for (int i = 0; i < nverts; ++i)
      for (const auto& inf : rig.skin_weights[i]) {
        if (inf.weight <= 1e-8 || inf.keypoint != j) continue;
        Vec3 a = canonical.vertices[i] - rig.keypoints[j] - pk.abar;
        Vec3 b = vpos(i) - pk.bbar;
        for (int rr = 0; rr < 3; ++rr)
          for (int cc = 0; cc < 3; ++cc) cov(rr, cc) += inf.weight * b[rr] * a[cc];
      }
    so3::ProperSvd3 svd = so3::svd3_proper(cov);
    if (svd.s.y <= std::max(1e-12, 1e-9 * svd.s.x)) continue;
    pk.degenerate = false;
    pk.rot = svd.u * svd.v.transposed();
    Vec3 t = pk.bbar - pk.rot * pk.abar;
    for (int rr = 0; rr < 3; ++rr)
      for (int cc = 0; cc < 3; ++cc) row[rr * 3 + cc] = pk.rot(rr, cc);
    row[9] = t.x;
    row[10] = t.y;
    row[11] = t.z;

    // T = tr(S) I - S with S = R^T M (symmetric up to roundoff)
    Mat3 s_mat = pk.rot.transposed() * cov;
    Mat3 t_mat = Mat3::identity() * s_mat.trace() - s_mat;
    double dt = t_mat.det();
    if (std::abs(dt) > 1e-10 * std::max(1.0, std::pow(svd.s.x, 3))) {
      Mat3 tinv = inverse3(t_mat);
      for (int aa = 0; aa < 3; ++aa)
        for (int bb = 0; bb < 3; ++bb) {
          Mat3 dm = Mat3::zero();
          dm(aa, bb) = 1.0;
          pk.jac[aa][bb] = procrustes_drot(pk.rot, tinv, dm);
        }
      pk.grad_ok = true;
    }
  }

  Node* pv = posed.node.get();
  const Mesh* mesh_ptr = &canonical;
  const Rig* rig_ptr = &rig;
  return finish(n, {posed.node}, [pv, kp_data, mesh_ptr, rig_ptr, nverts, k](Node& self) {
    pv->ensure_grad();
    // per-keypoint: combine gradient on R and t into gradient on M and bbar
    std::vector<Mat3> gm(k, Mat3::zero());
    std::vector<Vec3> gb(k, Vec3{});
    for (int j = 0; j < k; ++j) {
      const ProcKeypoint& pk = (*kp_data)[j];
      if (pk.degenerate || !pk.grad_ok) continue;
      const double* grow = self.g.data() + static_cast<size_t>(j) * 12;
      Mat3 gr;
      for (int rr = 0; rr < 3; ++rr)
        for (int cc = 0; cc < 3; ++cc) gr(rr, cc) = grow[rr * 3 + cc];
      Vec3 gt{grow[9], grow[10], grow[11]};
      // t = bbar - R abar: route t-gradient into bbar and R
      gb[j] += gt;
      for (int rr = 0; rr < 3; ++rr)
        for (int cc = 0; cc < 3; ++cc) gr(rr, cc) -= gt[rr] * pk.abar[cc];
      // adjoint of the dM -> dR map
      for (int aa = 0; aa < 3; ++aa)
        for (int bb = 0; bb < 3; ++bb) gm[j](aa, bb) = inner(pk.jac[aa][bb], gr);
    }
    for (int i = 0; i < nverts; ++i)
      for (const auto& inf : rig_ptr->skin_weights[i]) {
        if (inf.weight <= 1e-8) continue;
        int j = inf.keypoint;
        const ProcKeypoint& pk = (*kp_data)[j];
        if (pk.degenerate || !pk.grad_ok) continue;
        Vec3 a = mesh_ptr->vertices[i] - rig_ptr->keypoints[j] - pk.abar;
        Vec3 contrib = gm[j] * a * inf.weight + gb[j] * (inf.weight / pk.mass);
        pv->g[static_cast<size_t>(i) * 3 + 0] += contrib.x;
        pv->g[static_cast<size_t>(i) * 3 + 1] += contrib.y;
        pv->g[static_cast<size_t>(i) * 3 + 2] += contrib.z;
      }
  });
}

Var davenport_average(const Var& rbar) {
  require(rbar.cols() == 9, "davenport_average: need (k,9)");
  int k = rbar.rows();
  auto n = make_node(k, 4);

  struct RowCache {
    so3::Eig4 eig;
    double sign = 1.0;
  };
  auto cache = std::make_shared<std::vector<RowCache>>(k);

  for (int i = 0; i < k; ++i) {
    Mat3 rm;
    for (int rr = 0; rr < 3; ++rr)
      for (int cc = 0; cc < 3; ++cc) rm(rr, cc) = rbar.at(i, rr * 3 + cc);
    so3::Mat4 kk = so3::davenport_matrix(rm);
    RowCache& rc = (*cache)[i];
    rc.eig = so3::jacobi_eig4(kk);
    const auto& v = rc.eig.vectors[0];
    double lead = v[0];
    if (lead == 0.0) lead = v[1] != 0.0 ? v[1] : (v[2] != 0.0 ? v[2] : v[3]);
    rc.sign = lead < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < 4; ++j) n->v[static_cast<size_t>(i) * 4 + j] = rc.sign * v[j];
  }

  Node* pr = rbar.node.get();
  return finish(n, {rbar.node}, [pr, cache, k](Node& self) {
    pr->ensure_grad();
    for (int i = 0; i < k; ++i) {
      const RowCache& rc = (*cache)[i];
      const double* gq = self.g.data() + static_cast<size_t>(i) * 4;
      // gradient w.r.t. the 4x4 Davenport matrix via eigenvector perturbation
      so3::Mat4 gk{};
      for (int m = 1; m < 4; ++m) {
        double gap = rc.eig.values[0] - rc.eig.values[m];
        if (gap < 1e-9) continue;
        double coeff = 0.0;
        for (int j = 0; j < 4; ++j) coeff += rc.sign * gq[j] * rc.eig.vectors[m][j];
        coeff /= gap;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            gk[a][b] += coeff * 0.5 * (rc.eig.vectors[m][a] * rc.eig.vectors[0][b] +
                                       rc.eig.vectors[m][b] * rc.eig.vectors[0][a]);
      }
      // adjoint of K(R): K00 = tr R; K0,1.. = axial differences; block = R + R^T - trR I
      double* gr = pr->g.data() + static_cast<size_t>(i) * 9;
      double block_trace = gk[1][1] + gk[2][2] + gk[3][3];
      for (int d = 0; d < 3; ++d) gr[d * 3 + d] += gk[0][0] - block_trace;
      // z0 = R21 - R12 at K[0][1] (+ symmetric K[1][0])
      gr[2 * 3 + 1] += gk[0][1] + gk[1][0];
      gr[1 * 3 + 2] -= gk[0][1] + gk[1][0];
      // z1 = R02 - R20 at K[0][2]
      gr[0 * 3 + 2] += gk[0][2] + gk[2][0];
      gr[2 * 3 + 0] -= gk[0][2] + gk[2][0];
      // z2 = R10 - R01 at K[0][3]
      gr[1 * 3 + 0] += gk[0][3] + gk[3][0];
      gr[0 * 3 + 1] -= gk[0][3] + gk[3][0];
      // block: K[1+a][1+b] = R(a,b) + R(b,a) - delta tr R
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) gr[a * 3 + b] += gk[1 + a][1 + b] + gk[1 + b][1 + a];
    }
  });
}

}  // namespace pb::ad
