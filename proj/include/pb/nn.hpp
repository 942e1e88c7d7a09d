#pragma once
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pb/autodiff.hpp"
#include "pb/rng.hpp"

namespace pb::nn {

struct TransformerConfig {
  int d_c = 64;
  int layers = 2;
  int heads = 4;
  int mlp_hidden = 256;
  int kp_hidden = 256;
  int dec_hidden = 128;

  // dimensions reported for the full-scale model
  static TransformerConfig paper() { return {256, 6, 8, 2048, 1024, 256}; }
  // desk-scale defaults used throughout the tests and CLI
  static TransformerConfig desk() { return {64, 2, 4, 256, 256, 128}; }

  void validate() const;
};

struct Param {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> w;
  std::vector<double> m, v;  // AdamW moments

  size_t size() const { return w.size(); }
};

class ParamSet {
 public:
  Param* create(const std::string& name, int rows, int cols);
  Param* find(const std::string& name) const;
  size_t total_size() const;

  std::vector<std::unique_ptr<Param>> items;
};

/// Per-graph binding of parameters to tape leaves. Trainable binders create
/// gradient leaves; frozen binders create constants.
class Binder {
 public:
  explicit Binder(bool trainable) : trainable_(trainable) {}

  ad::Var operator()(Param& p);
  const ad::Var* bound(const Param& p) const;
  bool trainable() const { return trainable_; }

 private:
  bool trainable_;
  std::unordered_map<const Param*, ad::Var> bound_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight-decay adaptive-moment optimizer. step() returns false
/// and leaves parameters untouched when any gradient is non-finite.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  bool step(ParamSet& params, const Binder& binder);
  long steps_taken() const { return t_; }
  long steps_skipped() const { return skipped_; }
  AdamWConfig& config() { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  long skipped_ = 0;
};

void init_scaled_normal(Param& p, Rng& rng, int fan_in);
void init_zero(Param& p);

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  static Linear create(ParamSet& ps, const std::string& prefix, int in, int out,
                       Rng& rng, bool zero_init = false);
  ad::Var apply(Binder& bind, const ad::Var& x) const;  // x (n,in) -> (n,out)
};

/// Two-layer MLP with GELU, the keypoint-encoder / decoder shape.
struct Mlp {
  Linear l1, l2;
  static Mlp create(ParamSet& ps, const std::string& prefix, int in, int hidden,
                    int out, Rng& rng, bool zero_last = false);
  ad::Var apply(Binder& bind, const ad::Var& x) const;
};

struct LayerNormParams {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  static LayerNormParams create(ParamSet& ps, const std::string& prefix, int dim);
  ad::Var apply(Binder& bind, const ad::Var& x) const;
};

/// Multi-head scaled dot-product attention core (no residual).
ad::Var multihead_attention(Binder& bind, const ad::Var& query, const ad::Var& keyvalue,
                            const Linear& wq, const Linear& wk, const Linear& wv,
                            const Linear& wo, int heads,
                            const std::vector<char>& key_mask = {},
                            const std::vector<char>& query_mask = {});

/// Pre-norm residual encoder block: x + MHSA(LN(x)), then x + MLP(LN(x)).
struct EncoderBlock {
  LayerNormParams ln1, ln2;
  Linear wq, wk, wv, wo;  // wo zero-initialized
  Linear ff1, ff2;        // ff2 zero-initialized
  int heads = 1;

  static EncoderBlock create(ParamSet& ps, const std::string& prefix,
                             const TransformerConfig& cfg, Rng& rng);
  ad::Var apply(Binder& bind, const ad::Var& x, const std::vector<char>& mask) const;
};

struct Encoder {
  std::vector<EncoderBlock> blocks;
  static Encoder create(ParamSet& ps, const std::string& prefix,
                        const TransformerConfig& cfg, Rng& rng);
  ad::Var apply(Binder& bind, const ad::Var& tokens, const std::vector<char>& mask) const;
};

/// Residual cross-attention: q + Wo(Attn(q, kv)). Output projection is
/// zero-initialized so the block starts as the identity on the query stream.
struct CrossAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  static CrossAttention create(ParamSet& ps, const std::string& prefix, int dim,
                               int heads, Rng& rng);
  ad::Var apply(Binder& bind, const ad::Var& query, const ad::Var& keyvalue) const;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int probes = 0;
  std::string worst_param;
};

/// Central finite-difference check of d(loss)/d(param) on randomly probed
/// entries. The build function must be a deterministic function of the
/// parameter values.
GradCheckReport check_gradients(const std::function<ad::Var(Binder&)>& build,
                                ParamSet& params, int n_probes, uint64_t seed,
                                double h = 1e-5);

}  // namespace pb::nn
