#pragma once
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pb/matrix.hpp"

namespace pb::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One tape node: a 2-D tensor plus the closure that scatters its gradient
// into its parents. The graph is held alive by parent pointers; backward
// walks a topological order computed on demand.
struct Node {
  int rows = 0, cols = 0;
  std::vector<double> v;
  std::vector<double> g;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> back;
  bool needs_grad = false;

  size_t size() const { return v.size(); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
};

// Value-semantics handle to a node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node(std::move(n)) {}

  int rows() const { return node->rows; }
  int cols() const { return node->cols; }
  bool defined() const { return node != nullptr; }
  double at(int i, int j) const { return node->v[static_cast<size_t>(i) * node->cols + j]; }
  const std::vector<double>& values() const { return node->v; }
  const std::vector<double>& grad() const { return node->g; }
  double scalar() const { return node->v[0]; }

  NodePtr node;
};

Var constant(int rows, int cols, std::vector<double> values);
Var constant(const Mat& m);
Var zeros(int rows, int cols);

/// Leaf that participates in backward (a parameter or probed input).
Var leaf(int rows, int cols, std::vector<double> values);

Mat to_mat(const Var& x);

// ---- elementwise / structural ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var neg(const Var& a);
Var vexp(const Var& a);
Var vlog(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add_rowvec(const Var& x, const Var& v);  // x (r,c) + v (1,c)
Var sub_rowvec(const Var& x, const Var& v);
Var add_colvec(const Var& x, const Var& u);  // x (r,c) + u (r,1)
Var div_scalar(const Var& x, const Var& s);  // s is 1x1

Var slice_rows(const Var& a, int r0, int r1);
Var slice_cols(const Var& a, int c0, int c1);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const Var& a, const Var& b);
Var gather_rows(const Var& a, const std::vector<int>& idx);

// ---- reductions ----
Var sum(const Var& a);            // 1x1
Var mean(const Var& a);           // 1x1
Var sumsq(const Var& a);          // 1x1, sum of squares
Var mean_rows(const Var& a);      // 1xc, mean over rows
Var colmin(const Var& a);         // 1xc (gradient routed to arg rows)
Var colmax(const Var& a);         // 1xc
Var max_all(const Var& a);        // 1x1
Var rownorm(const Var& a);        // rx1, Euclidean norm per row

// ---- normalization / attention ----
Var normalize_rows(const Var& a);
/// Row-wise softmax. key_mask marks valid columns; rows with
/// query_mask == 0 come out as zeros. Empty masks mean all-valid.
Var softmax_rows(const Var& a, const std::vector<char>& key_mask = {},
                 const std::vector<char>& query_mask = {});
Var logsumexp_rows(const Var& a);  // rx1
Var logsumexp_cols(const Var& a);  // 1xc
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-8);

Var cross_rows(const Var& a, const Var& b);  // (n,3) x (n,3)

/// Reverse pass from a scalar loss. Throws NumericalError if the loss is
/// detached (nothing requires grad) or not 1x1.
void backward(const Var& loss);

}  // namespace pb::ad
