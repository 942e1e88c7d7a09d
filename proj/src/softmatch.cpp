#include "pb/softmatch.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>

#include "pb/errors.hpp"

namespace pb::match {

double CorrespondencePlan::max_marginal_violation() const {
  double v = 0.0;
  for (int i = 0; i < m.rows; ++i) v = std::max(v, std::abs(m.row_sum(i) - row_target[i]));
  for (int j = 0; j < m.cols; ++j) v = std::max(v, std::abs(m.col_sum(j) - col_target[j]));
  return v;
}

CorrespondencePlan sinkhorn(const AffinityMatrix& s, int iters, double tol) {
  const Mat& a = s.s;
  if (a.rows < 1 || a.cols < 1) throw DataError("sinkhorn: empty matrix");
  if (iters < 1) throw DataError("sinkhorn: iters must be >= 1");
  for (double v : a.a) {
    if (!std::isfinite(v)) throw NumericalError("sinkhorn: non-finite entry");
    if (v <= 0.0) throw DataError("sinkhorn: entries must be positive");
  }
  int k1 = a.rows, k2 = a.cols;
  Mat logits(k1, k2);
  for (size_t i = 0; i < a.a.size(); ++i) logits.a[i] = std::log(a.a[i]);

  double log_r = -std::log(static_cast<double>(k1));
  double log_c = -std::log(static_cast<double>(k2));
  std::vector<double> u(k1, 0.0), v(k2, 0.0);

  for (int it = 0; it < iters; ++it) {
    // row scaling
    for (int i = 0; i < k1; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k2; ++j) m = std::max(m, logits(i, j) + v[j]);
      double sum = 0.0;
      for (int j = 0; j < k2; ++j) sum += std::exp(logits(i, j) + v[j] - m);
      u[i] = log_r - (m + std::log(sum));
    }
    // column scaling (always the final step)
    for (int j = 0; j < k2; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < k1; ++i) m = std::max(m, logits(i, j) + u[i]);
      double sum = 0.0;
      for (int i = 0; i < k1; ++i) sum += std::exp(logits(i, j) + u[i] - m);
      v[j] = log_c - (m + std::log(sum));
    }
    // convergence: columns are exact after their update, check rows
    double viol = 0.0;
    for (int i = 0; i < k1; ++i) {
      double rs = 0.0;
      for (int j = 0; j < k2; ++j) rs += std::exp(logits(i, j) + u[i] + v[j]);
      viol = std::max(viol, std::abs(rs - std::exp(log_r)));
    }
    if (viol < tol) break;
  }

  CorrespondencePlan plan;
  plan.m = Mat(k1, k2);
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j) plan.m(i, j) = std::exp(logits(i, j) + u[i] + v[j]);
  plan.row_target.assign(k1, 1.0 / k1);
  plan.col_target.assign(k2, 1.0 / k2);
  return plan;
}

namespace {

// Jonker-Volgenant style shortest augmenting path assignment on a square
// cost matrix (minimization). Returns row -> col.
std::vector<int> jv_square(const Mat& cost) {
  int n = cost.rows;
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = std::numeric_limits<double>::infinity();
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Optimal total score over assignments of size min(remaining rows, cols),
// maximization. Rectangular cases are padded with zero-score dummies.
double optimal_score(const Mat& score,
                     const std::vector<char>& row_used,
                     const std::vector<char>& col_used) {
  std::vector<int> rows, cols;
  for (int i = 0; i < score.rows; ++i)
    if (!row_used[i]) rows.push_back(i);
  for (int j = 0; j < score.cols; ++j)
    if (!col_used[j]) cols.push_back(j);
  size_t n = std::max(rows.size(), cols.size());
  if (n == 0) return 0.0;
  Mat cost(static_cast<int>(n), static_cast<int>(n), 0.0);
  for (size_t a = 0; a < rows.size(); ++a)
    for (size_t b = 0; b < cols.size(); ++b) cost(static_cast<int>(a), static_cast<int>(b)) = -score(rows[a], cols[b]);
  std::vector<int> rc = jv_square(cost);
  double total = 0.0;
  for (size_t a = 0; a < rows.size(); ++a) {
    int b = rc[a];
    if (b >= 0 && b < static_cast<int>(cols.size())) total += score(rows[a], cols[b]);
  }
  return total;
}

}  // namespace

std::vector<std::pair<int, int>> hungarian(const Mat& score) {
  if (score.rows < 1 || score.cols < 1) throw DataError("hungarian: empty matrix");
  for (double v : score.a)
    if (!std::isfinite(v)) throw NumericalError("hungarian: non-finite entry");

  int k1 = score.rows, k2 = score.cols;
  int size = std::min(k1, k2);
  std::vector<char> row_used(k1, 0), col_used(k2, 0);
  double target = optimal_score(score, row_used, col_used);
  const double eps = 1e-9 * std::max(1.0, std::abs(target));

  // Lexicographic refinement: walk rows in order, fixing for each the
  // smallest column that still extends to an optimal completion.
  std::vector<std::pair<int, int>> out;
  double fixed = 0.0;
  for (int i = 0; i < k1 && static_cast<int>(out.size()) < size; ++i) {
    int remaining = size - static_cast<int>(out.size());
    int rows_left_after_i = k1 - i - 1;
    int chosen = -1;
    if (rows_left_after_i + 1 >= remaining) {
      // skipping row i is only possible when enough rows remain
      for (int j = 0; j < k2; ++j) {
        if (col_used[j]) continue;
        row_used[i] = 1;
        col_used[j] = 1;
        double rest = optimal_score(score, row_used, col_used);
        if (fixed + score(i, j) + rest >= target - eps) {
          chosen = j;
          break;
        }
        row_used[i] = 0;
        col_used[j] = 0;
      }
    }
    if (chosen >= 0) {
      fixed += score(i, chosen);
      out.emplace_back(i, chosen);
    } else {
      row_used[i] = 1;  // leave row unmatched (K1 > K2 case)
    }
  }
  return out;
}

double assignment_score(const Mat& score, const std::vector<std::pair<int, int>>& pairs) {
  double s = 0.0;
  for (auto [i, j] : pairs) s += score(i, j);
  return s;
}

namespace {

const std::map<std::string, std::string>& lexicon() {
  // part word -> canonical token
  static const std::map<std::string, std::string> table = {
      {"arm", "limb"},     {"wing", "limb"},    {"forelimb", "limb"},
      {"foreleg", "limb"}, {"forearm", "limb"}, {"hand", "limb"},
      {"flipper", "limb"}, {"fin", "limb"},     {"limb", "limb"},
      {"leg", "leg"},      {"shin", "leg"},     {"claw", "leg"},
      {"hindleg", "leg"},  {"foot", "leg"},     {"paw", "leg"},
      {"thigh", "leg"},    {"hoof", "leg"},
      {"spine", "spine"},  {"back", "spine"},   {"torso", "spine"},
      {"body", "spine"},   {"chest", "spine"},  {"hip", "spine"},
      {"pelvis", "spine"},
      {"head", "head"},    {"skull", "head"},   {"face", "head"},
      {"snout", "head"},   {"beak", "head"},
      {"neck", "neck"},
      {"tail", "tail"},
  };
  return table;
}

bool is_side_word(const std::string& w) {
  static const std::set<std::string> sides = {"left",  "right", "l",    "r",
                                              "front", "rear",  "mid",  "upper",
                                              "lower", "top",   "bottom"};
  return sides.count(w) > 0;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string canonical_token(const std::string& name) {
  std::string lower;
  for (char c : name)
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  std::vector<std::string> words;
  std::string cur;
  for (char c : lower) {
    if (c == '_' || c == '-' || c == ' ' || c == '.') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);

  std::vector<std::string> kept;
  for (auto& w : words) {
    while (!w.empty() && std::isdigit(static_cast<unsigned char>(w.back()))) w.pop_back();
    if (w.empty() || is_side_word(w)) continue;
    auto it = lexicon().find(w);
    kept.push_back(it != lexicon().end() ? it->second : w);
  }
  if (kept.empty()) return "part";
  std::string out = kept[0];
  for (size_t i = 1; i < kept.size(); ++i) out += "_" + kept[i];
  return out;
}

std::vector<double> standin_embedding(const std::string& name) {
  std::string token = "^" + canonical_token(name) + "$";
  std::vector<double> v(LabelEmbeddings::kDim, 0.0);
  for (size_t i = 0; i + 3 <= token.size(); ++i) {
    v[fnv1a(token.substr(i, 3)) % LabelEmbeddings::kDim] += 1.0;
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 == 0.0) {
    v[0] = 1.0;
    return v;
  }
  double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

void LabelEmbeddings::insert(const std::string& name, const std::vector<double>& vec) {
  double n2 = 0.0;
  for (double x : vec) n2 += x * x;
  if (n2 <= 0.0 || !std::isfinite(n2))
    throw DataError("LabelEmbeddings: zero or non-finite vector for '" + name + "'");
  std::vector<double> v = vec;
  double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  table_[name] = std::move(v);
  overrides_.insert(name);
}

const std::vector<double>& LabelEmbeddings::get(const std::string& name) const {
  auto it = table_.find(name);
  if (it != table_.end()) return it->second;
  auto [ins, ok] = table_.emplace(name, standin_embedding(name));
  return ins->second;
}

bool LabelEmbeddings::has_override(const std::string& name) const {
  return overrides_.count(name) > 0;
}

Mat text_similarity(const std::vector<std::string>& src_names,
                    const std::vector<std::string>& tgt_names,
                    const LabelEmbeddings& emb) {
  Mat s(static_cast<int>(src_names.size()), static_cast<int>(tgt_names.size()));
  for (int i = 0; i < s.rows; ++i) {
    const auto& a = emb.get(src_names[i]);
    for (int j = 0; j < s.cols; ++j) {
      const auto& b = emb.get(tgt_names[j]);
      double dot = 0.0;
      for (int d = 0; d < LabelEmbeddings::kDim; ++d) dot += a[d] * b[d];
      s(i, j) = dot;
    }
  }
  return s;
}

GtTargets build_gt_targets(const Mat& s_cos, double tau, int sinkhorn_iters,
                           double sinkhorn_tol) {
  for (double v : s_cos.a)
    if (!std::isfinite(v)) throw NumericalError("build_gt_targets: non-finite similarity");

  GtTargets gt;
  AffinityMatrix aff;
  aff.s = Mat(s_cos.rows, s_cos.cols);
  for (size_t i = 0; i < s_cos.a.size(); ++i) aff.s.a[i] = std::exp(s_cos.a[i] / tau);
  gt.m_sink = sinkhorn(aff, sinkhorn_iters, sinkhorn_tol);

  gt.assignment = hungarian(s_cos);
  gt.m_hung = Mat(s_cos.rows, s_cos.cols, 0.0);
  double mass = gt.assignment.empty() ? 1.0 : 1.0 / static_cast<double>(gt.assignment.size());
  for (auto [i, j] : gt.assignment) gt.m_hung(i, j) = mass;
  return gt;
}

}  // namespace pb::match
