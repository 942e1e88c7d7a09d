#include "pb/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pb/errors.hpp"

namespace pb::nn {

using ad::Var;

void TransformerConfig::validate() const {
  if (d_c < 1 || layers < 1 || heads < 1 || mlp_hidden < 1 || kp_hidden < 1 || dec_hidden < 1)
    throw DataError("TransformerConfig: all dimensions must be >= 1");
  if (d_c % heads != 0)
    throw DataError("TransformerConfig: d_c must be divisible by head count");
}

Param* ParamSet::create(const std::string& name, int rows, int cols) {
  if (find(name)) throw DataError("ParamSet: duplicate parameter '" + name + "'");
  auto p = std::make_unique<Param>();
  p->name = name;
  p->rows = rows;
  p->cols = cols;
  p->w.assign(static_cast<size_t>(rows) * cols, 0.0);
  p->m.assign(p->w.size(), 0.0);
  p->v.assign(p->w.size(), 0.0);
  items.push_back(std::move(p));
  return items.back().get();
}

Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : items)
    if (p->name == name) return p.get();
  return nullptr;
}

size_t ParamSet::total_size() const {
  size_t n = 0;
  for (const auto& p : items) n += p->size();
  return n;
}

Var Binder::operator()(Param& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? ad::leaf(p.rows, p.cols, p.w) : ad::constant(p.rows, p.cols, p.w);
  bound_.emplace(&p, v);
  return v;
}

const Var* Binder::bound(const Param& p) const {
  auto it = bound_.find(&p);
  return it == bound_.end() ? nullptr : &it->second;
}

bool AdamW::step(ParamSet& params, const Binder& binder) {
  // collect gradients; a non-finite gradient anywhere skips the whole step
  std::vector<std::pair<Param*, const std::vector<double>*>> grads;
  for (auto& p : params.items) {
    const Var* v = binder.bound(*p);
    if (!v || v->node->g.empty()) continue;
    for (double g : v->node->g)
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
    grads.emplace_back(p.get(), &v->node->g);
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [p, g] : grads) {
    for (size_t i = 0; i < p->w.size(); ++i) {
      double gi = (*g)[i];
      p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * gi;
      p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double mhat = p->m[i] / bc1;
      double vhat = p->v[i] / bc2;
      p->w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->w[i]);
    }
  }
  return true;
}

void init_scaled_normal(Param& p, Rng& rng, int fan_in) {
  double std = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  for (double& w : p.w) w = rng.normal() * std;
}

void init_zero(Param& p) { std::fill(p.w.begin(), p.w.end(), 0.0); }

Linear Linear::create(ParamSet& ps, const std::string& prefix, int in, int out,
                      Rng& rng, bool zero_init) {
  Linear l;
  l.w = ps.create(prefix + ".w", in, out);
  l.b = ps.create(prefix + ".b", 1, out);
  if (zero_init) init_zero(*l.w);
  else init_scaled_normal(*l.w, rng, in);
  return l;
}

Var Linear::apply(Binder& bind, const Var& x) const {
  return ad::add_rowvec(ad::matmul(x, bind(*w)), bind(*b));
}

Mlp Mlp::create(ParamSet& ps, const std::string& prefix, int in, int hidden, int out,
                Rng& rng, bool zero_last) {
  Mlp m;
  m.l1 = Linear::create(ps, prefix + ".l1", in, hidden, rng);
  m.l2 = Linear::create(ps, prefix + ".l2", hidden, out, rng, zero_last);
  return m;
}

Var Mlp::apply(Binder& bind, const Var& x) const {
  return l2.apply(bind, ad::gelu(l1.apply(bind, x)));
}

LayerNormParams LayerNormParams::create(ParamSet& ps, const std::string& prefix, int dim) {
  LayerNormParams ln;
  ln.gamma = ps.create(prefix + ".gamma", 1, dim);
  std::fill(ln.gamma->w.begin(), ln.gamma->w.end(), 1.0);
  ln.beta = ps.create(prefix + ".beta", 1, dim);
  return ln;
}

Var LayerNormParams::apply(Binder& bind, const Var& x) const {
  return ad::layer_norm(x, bind(*gamma), bind(*beta));
}

Var multihead_attention(Binder& bind, const Var& query, const Var& keyvalue,
                        const Linear& wq, const Linear& wk, const Linear& wv,
                        const Linear& wo, int heads,
                        const std::vector<char>& key_mask,
                        const std::vector<char>& query_mask) {
  int d = query.cols();
  if (keyvalue.cols() != d) throw DimensionError("attention: query/key dim mismatch");
  if (d % heads != 0) throw DimensionError("attention: dim not divisible by heads");
  int dh = d / heads;
  Var q = wq.apply(bind, query);
  Var k = wk.apply(bind, keyvalue);
  Var v = wv.apply(bind, keyvalue);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var merged;
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    Var logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    Var att = ad::softmax_rows(logits, key_mask, query_mask);
    Var oh = ad::matmul(att, vh);
    merged = h == 0 ? oh : ad::concat_cols(merged, oh);
  }
  return wo.apply(bind, merged);
}

EncoderBlock EncoderBlock::create(ParamSet& ps, const std::string& prefix,
                                  const TransformerConfig& cfg, Rng& rng) {
  EncoderBlock b;
  b.heads = cfg.heads;
  b.ln1 = LayerNormParams::create(ps, prefix + ".ln1", cfg.d_c);
  b.ln2 = LayerNormParams::create(ps, prefix + ".ln2", cfg.d_c);
  b.wq = Linear::create(ps, prefix + ".attn.q", cfg.d_c, cfg.d_c, rng);
  b.wk = Linear::create(ps, prefix + ".attn.k", cfg.d_c, cfg.d_c, rng);
  b.wv = Linear::create(ps, prefix + ".attn.v", cfg.d_c, cfg.d_c, rng);
  b.wo = Linear::create(ps, prefix + ".attn.o", cfg.d_c, cfg.d_c, rng, /*zero_init=*/true);
  b.ff1 = Linear::create(ps, prefix + ".ff1", cfg.d_c, cfg.mlp_hidden, rng);
  b.ff2 = Linear::create(ps, prefix + ".ff2", cfg.mlp_hidden, cfg.d_c, rng, /*zero_init=*/true);
  return b;
}

Var EncoderBlock::apply(Binder& bind, const Var& x, const std::vector<char>& mask) const {
  Var h = ln1.apply(bind, x);
  Var att = multihead_attention(bind, h, h, wq, wk, wv, wo, heads, mask, mask);
  Var x1 = ad::add(x, att);
  Var h2 = ln2.apply(bind, x1);
  Var ff = ff2.apply(bind, ad::gelu(ff1.apply(bind, h2)));
  return ad::add(x1, ff);
}

Encoder Encoder::create(ParamSet& ps, const std::string& prefix,
                        const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  Encoder e;
  for (int i = 0; i < cfg.layers; ++i)
    e.blocks.push_back(EncoderBlock::create(ps, prefix + ".block" + std::to_string(i), cfg, rng));
  return e;
}

Var Encoder::apply(Binder& bind, const Var& tokens, const std::vector<char>& mask) const {
  Var x = tokens;
  for (const auto& b : blocks) x = b.apply(bind, x, mask);
  return x;
}

CrossAttention CrossAttention::create(ParamSet& ps, const std::string& prefix, int dim,
                                      int heads, Rng& rng) {
  CrossAttention ca;
  ca.heads = heads;
  ca.wq = Linear::create(ps, prefix + ".q", dim, dim, rng);
  ca.wk = Linear::create(ps, prefix + ".k", dim, dim, rng);
  ca.wv = Linear::create(ps, prefix + ".v", dim, dim, rng);
  ca.wo = Linear::create(ps, prefix + ".o", dim, dim, rng, /*zero_init=*/true);
  return ca;
}

Var CrossAttention::apply(Binder& bind, const Var& query, const Var& keyvalue) const {
  Var att = multihead_attention(bind, query, keyvalue, wq, wk, wv, wo, heads);
  return ad::add(query, att);
}

GradCheckReport check_gradients(const std::function<Var(Binder&)>& build,
                                ParamSet& params, int n_probes, uint64_t seed, double h) {
  // analytic pass
  Binder bind(true);
  Var loss = build(bind);
  ad::backward(loss);

  // collect bound parameters with gradients
  std::vector<Param*> live;
  for (auto& p : params.items)
    if (bind.bound(*p) && !bind.bound(*p)->node->g.empty()) live.push_back(p.get());
  if (live.empty()) throw NumericalError("check_gradients: no parameters reached the loss");

  Rng rng(seed);
  GradCheckReport report;
  for (int probe = 0; probe < n_probes; ++probe) {
    Param* p = live[rng.below(live.size())];
    size_t idx = rng.below(p->size());
    double analytic = bind.bound(*p)->node->g[idx];

    double saved = p->w[idx];
    double step = h * std::max(1.0, std::abs(saved));
    p->w[idx] = saved + step;
    Binder bp(false);
    double fplus = build(bp).scalar();
    p->w[idx] = saved - step;
    Binder bm(false);
    double fminus = build(bm).scalar();
    p->w[idx] = saved;

    double fd = (fplus - fminus) / (2.0 * step);
    // max-relative error with an absolute floor: parameters whose true
    // gradient is ~0 (e.g. attention key biases) are held to |a - f| < 1e-8
    // rather than an ill-posed 0/0 ratio.
    double denom = std::max({std::abs(fd), std::abs(analytic), 1e-4});
    double rel = std::abs(fd - analytic) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = p->name + "[" + std::to_string(idx) + "]";
    }
    ++report.probes;
  }
  return report;
}

}  // namespace pb::nn
