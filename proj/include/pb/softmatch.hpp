#pragma once
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pb/matrix.hpp"

namespace pb::match {

/// K1 x K2 matrix of strictly positive, finite affinities.
struct AffinityMatrix {
  Mat s;
};

/// Soft correspondence plan with its marginal targets. Row sums approach
/// row_target, column sums meet col_target exactly (last Sinkhorn step is a
/// column normalization). Total mass 1.
struct CorrespondencePlan {
  Mat m;
  std::vector<double> row_target;
  std::vector<double> col_target;

  double max_marginal_violation() const;
};

/// Log-domain Sinkhorn toward uniform marginals r_i = 1/K1, c_j = 1/K2.
/// Stops after `iters` rounds or when the row-sum violation drops below
/// `tol`. Throws NumericalError on NaN/Inf input, DataError on non-positive
/// entries.
CorrespondencePlan sinkhorn(const AffinityMatrix& s, int iters = 50, double tol = 1e-6);

/// Maximum-total-score assignment of size min(K1, K2). Deterministic
/// lexicographic (i, j) tie-break among optimal assignments. Throws
/// DataError on an empty matrix, NumericalError on non-finite entries.
std::vector<std::pair<int, int>> hungarian(const Mat& score);

/// Total score of an assignment under a score matrix.
double assignment_score(const Mat& score, const std::vector<std::pair<int, int>>& pairs);

/// Keypoint-label embeddings. Lookup falls back to the deterministic
/// stand-in embedder (synonym lexicon + hashed character trigrams) for names
/// not loaded from a sidecar file.
class LabelEmbeddings {
 public:
  static constexpr int kDim = 64;

  LabelEmbeddings() = default;

  /// Registers an explicit vector (sidecar override). Renormalized to unit norm.
  void insert(const std::string& name, const std::vector<double>& vec);

  /// Embedding for a name; stand-in is computed (and cached) when absent.
  const std::vector<double>& get(const std::string& name) const;

  bool has_override(const std::string& name) const;

 private:
  mutable std::map<std::string, std::vector<double>> table_;
  std::set<std::string> overrides_;
};

/// Canonical part token of a bone name: lowercase, side qualifiers and
/// numeric suffixes stripped, part words mapped through the synonym lexicon
/// ("arm", "wing" -> "limb"; "shin", "claw" -> "leg"; ...).
std::string canonical_token(const std::string& name);

/// Deterministic stand-in embedding: L2-normalized hashed character-trigram
/// vector of the canonical token.
std::vector<double> standin_embedding(const std::string& name);

/// Cosine-similarity matrix between two name lists.
Mat text_similarity(const std::vector<std::string>& src_names,
                    const std::vector<std::string>& tgt_names,
                    const LabelEmbeddings& emb);

struct GtTargets {
  CorrespondencePlan m_sink;  // Sinkhorn(exp(s_cos / tau))
  Mat m_hung;                 // one-hot assignment scaled to total mass 1
  std::vector<std::pair<int, int>> assignment;
};

/// Ground-truth correspondence targets from a cosine-similarity matrix.
GtTargets build_gt_targets(const Mat& s_cos, double tau = 0.1,
                           int sinkhorn_iters = 50, double sinkhorn_tol = 1e-6);

}  // namespace pb::match
