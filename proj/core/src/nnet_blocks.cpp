// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sesw/errors.hpp"
#include "sesw/nnet.hpp"

namespace sesw::nn {

// ---------------------------------------------------------------------------
// names
// ---------------------------------------------------------------------------

BlockKind block_kind_from_string(const std::string &s) {
  if (s == "time_attention") return BlockKind::TimeAttention;
  if (s == "freq_attention") return BlockKind::FreqAttention;
  if (s == "time_rnn") return BlockKind::TimeRnn;
  if (s == "freq_rnn") return BlockKind::FreqRnn;
  if (s == "dprnn") return BlockKind::Dprnn;
  if (s == "conformer_time") return BlockKind::ConformerTime;
  if (s == "conformer_freq") return BlockKind::ConformerFreq;
  throw ConfigError("unknown block kind: " + s);
}

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::TimeAttention: return "time_attention";
    case BlockKind::FreqAttention: return "freq_attention";
    case BlockKind::TimeRnn: return "time_rnn";
    case BlockKind::FreqRnn: return "freq_rnn";
    case BlockKind::Dprnn: return "dprnn";
    case BlockKind::ConformerTime: return "conformer_time";
    case BlockKind::ConformerFreq: return "conformer_freq";
  }
  throw ConfigError("unknown block kind value");
}

RnnCell cell_from_string(const std::string &s) {
  if (s == "gru") return RnnCell::Gru;
  if (s == "lstm") return RnnCell::Lstm;
  throw ConfigError("unknown rnn cell: " + s);
}

std::string to_string(RnnCell c) {
  return c == RnnCell::Gru ? "gru" : "lstm";
}

namespace {

bool is_attention_bearing(const BlockSpec &s) {
  if (s.kind == BlockKind::TimeAttention || s.kind == BlockKind::FreqAttention ||
      s.kind == BlockKind::ConformerTime)
    return true;
  if (s.kind == BlockKind::ConformerFreq)
    return !s.conformer_core || *s.conformer_core == BlockKind::FreqAttention;
  return false;
}

}  // namespace

void BlockSpec::validate() const {
  if (width < 1) throw ConfigError("block width must be >= 1");
  if (hidden < 1) throw ConfigError("block hidden size must be >= 1");
  if (heads < 1) throw ConfigError("block heads must be >= 1");
  if (ffn_mult < 1) throw ConfigError("block ffn_mult must be >= 1");
  if (conv_kernel < 1) throw ConfigError("block conv_kernel must be >= 1");
  if (is_attention_bearing(*this) && width % heads != 0)
    throw ConfigError("attention heads must divide block width");
  if (bidirectional && kind != BlockKind::FreqRnn && kind != BlockKind::Dprnn)
    throw ConfigError(
        "bidirectional applies to frequency-axis recurrent kinds only; " +
        to_string(kind) + " cannot scan both ways");
  if (conformer_core) {
    if (kind != BlockKind::ConformerFreq)
      throw ConfigError("conformer_core is only valid on conformer_freq");
    if (*conformer_core != BlockKind::FreqAttention &&
        *conformer_core != BlockKind::FreqRnn)
      throw ConfigError(
          "conformer_freq core must be a frequency-axis kind "
          "(freq_attention or freq_rnn), got " +
          to_string(*conformer_core));
  }
}

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

Param &ParamStore::create(const std::string &name, Shape shape) {
  if (find(name) != nullptr)
    throw ConfigError("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Param>(name, std::move(shape)));
  return *params_.back();
}

Param *ParamStore::find(const std::string &name) {
  for (auto &p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Param *ParamStore::find(const std::string &name) const {
  for (auto &p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Param *> ParamStore::params() {
  std::vector<Param *> out;
  out.reserve(params_.size());
  for (auto &p : params_) out.push_back(p.get());
  return out;
}

int64_t ParamStore::total() const {
  int64_t n = 0;
  for (const auto &p : params_) n += p->numel();
  return n;
}

int64_t ParamStore::total_under(const std::string &prefix) const {
  int64_t n = 0;
  for (const auto &p : params_)
    if (p->name.rfind(prefix, 0) == 0) n += p->numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto &p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// layer primitives (parameters + forward helpers)
// ---------------------------------------------------------------------------

namespace {

constexpr int kRelBuckets = 32;   // relative-distance buckets per attention
constexpr double kMaskOff = -1e30;  // additive value for masked logits

double xavier_bound(int64_t fan_in, int64_t fan_out) {
  return std::sqrt(6.0 / double(fan_in + fan_out));
}

void fill_uniform(Param &p, Rng &rng, double bound) {
  for (auto &v : p.value) v = rng.uniform(-bound, bound);
}

void fill_const(Param &p, double c) {
  std::fill(p.value.begin(), p.value.end(), c);
}

struct LinearLayer {
  Param *w = nullptr;
  Param *b = nullptr;
};

LinearLayer make_linear(ParamStore &store, const std::string &prefix,
                        int64_t in, int64_t out, Rng &rng, bool bias = true) {
  LinearLayer l;
  l.w = &store.create(prefix + ".w", {in, out});
  fill_uniform(*l.w, rng, xavier_bound(in, out));
  if (bias) {
    l.b = &store.create(prefix + ".b", {out});
    fill_const(*l.b, 0.0);
  }
  return l;
}

Tensor apply_linear(Graph &g, Tensor x, const LinearLayer &l) {
  Tensor y = g.matmul(x, g.param(*l.w));
  return l.b ? g.add(y, g.param(*l.b)) : y;
}

struct NormLayer {
  Param *gamma = nullptr;
  Param *beta = nullptr;
};

NormLayer make_norm(ParamStore &store, const std::string &prefix, int64_t c) {
  NormLayer n;
  n.gamma = &store.create(prefix + ".g", {c});
  n.beta = &store.create(prefix + ".b", {c});
  fill_const(*n.gamma, 1.0);
  fill_const(*n.beta, 0.0);
  return n;
}

Tensor apply_norm(Graph &g, Tensor x, const NormLayer &n) {
  return g.layer_norm(x, g.param(*n.gamma), g.param(*n.beta));
}

// ---- multi-head attention with relative position bias --------------------

struct AttentionCore {
  NormLayer ln;
  LinearLayer wq, wk, wv, wo;
  Param *rel = nullptr;  // [kRelBuckets, heads]
  int heads = 1;
  bool causal = false;
};

AttentionCore make_attention(ParamStore &store, const std::string &prefix,
                             int64_t c, int heads, bool causal, Rng &rng) {
  AttentionCore a;
  a.ln = make_norm(store, prefix + ".ln", c);
  a.wq = make_linear(store, prefix + ".q", c, c, rng);
  // No key bias: a constant added to every key shifts each softmax row
  // uniformly and cancels, so the parameter would be exactly gradient-free.
  a.wk = make_linear(store, prefix + ".k", c, c, rng, /*bias=*/false);
  a.wv = make_linear(store, prefix + ".v", c, c, rng);
  a.wo = make_linear(store, prefix + ".o", c, c, rng);
  a.rel = &store.create(prefix + ".rel", {kRelBuckets, heads});
  fill_const(*a.rel, 0.0);
  a.heads = heads;
  a.causal = causal;
  return a;
}

// Distance -> bucket: clamp(key - query, -16, 15) + 16. Symmetric learnable
// bias for bidirectional use; for causal use only the past half is reachable.
int64_t relpos_bucket(int64_t d) {
  return std::clamp<int64_t>(d, -kRelBuckets / 2, kRelBuckets / 2 - 1) +
         kRelBuckets / 2;
}

// seq: [N, L, C] -> [N, L, C]. Pre-norm residual body (no residual add here).
Tensor attention_forward(Graph &g, Tensor seq, const AttentionCore &a) {
  const int64_t n = seq.dim(0), l = seq.dim(1), c = seq.dim(2);
  const int64_t h = a.heads, dh = c / a.heads;

  Tensor x = apply_norm(g, seq, a.ln);
  Tensor q = apply_linear(g, x, a.wq);
  Tensor k = apply_linear(g, x, a.wk);
  Tensor v = apply_linear(g, x, a.wv);

  Tensor q4 = g.permute(g.reshape(q, {n, l, h, dh}), {0, 2, 1, 3});
  Tensor k4t = g.permute(g.reshape(k, {n, l, h, dh}), {0, 2, 3, 1});
  Tensor v4 = g.permute(g.reshape(v, {n, l, h, dh}), {0, 2, 1, 3});

  Tensor logits = g.scale(g.matmul(q4, k4t), 1.0 / std::sqrt(double(dh)));

  std::vector<int64_t> idx(size_t(l * l));
  for (int64_t i = 0; i < l; ++i)
    for (int64_t j = 0; j < l; ++j)
      idx[size_t(i * l + j)] = relpos_bucket(j - i);
  Tensor bias = g.permute(
      g.reshape(g.embedding_rows(g.param(*a.rel), idx), {l, l, h}), {2, 0, 1});
  logits = g.add(logits, bias);

  if (a.causal) {
    // A huge negative additive constant absorbs any finite logit exactly
    // (|logit| << ulp(1e30)), and exp underflows to +0 after the row-max
    // shift, so future positions contribute bit-exact zeros.
    std::vector<double> mask(size_t(l * l), 0.0);
    for (int64_t i = 0; i < l; ++i)
      for (int64_t j = i + 1; j < l; ++j) mask[size_t(i * l + j)] = kMaskOff;
    logits = g.add(logits, g.input({l, l}, std::move(mask)));
  }

  Tensor att = g.softmax_lastdim(logits);
  Tensor ctx = g.matmul(att, v4);  // [N, H, L, dh]
  Tensor merged = g.reshape(g.permute(ctx, {0, 2, 1, 3}), {n, l, c});
  return apply_linear(g, merged, a.wo);
}

// ---- recurrent core -------------------------------------------------------

struct RnnSide {
  Param *w_ih = nullptr;
  Param *w_hh = nullptr;
  Param *b_ih = nullptr;
  Param *b_hh = nullptr;
};

struct RnnCore {
  NormLayer ln;
  RnnSide fwd, bwd;  // bwd unused when unidirectional
  LinearLayer proj;
  RnnCell cell = RnnCell::Gru;
  bool bidirectional = false;
};

RnnSide make_rnn_side(ParamStore &store, const std::string &prefix, int64_t c,
                      int64_t hdim, RnnCell cell, Rng &rng) {
  const int64_t gates = (cell == RnnCell::Gru ? 3 : 4) * hdim;
  RnnSide s;
  s.w_ih = &store.create(prefix + ".w_ih", {c, gates});
  s.w_hh = &store.create(prefix + ".w_hh", {hdim, gates});
  s.b_ih = &store.create(prefix + ".b_ih", {gates});
  s.b_hh = &store.create(prefix + ".b_hh", {gates});
  const double bound = 1.0 / std::sqrt(double(hdim));
  fill_uniform(*s.w_ih, rng, bound);
  fill_uniform(*s.w_hh, rng, bound);
  fill_const(*s.b_ih, 0.0);
  fill_const(*s.b_hh, 0.0);
  return s;
}

RnnCore make_rnn(ParamStore &store, const std::string &prefix, int64_t c,
                 int64_t hdim, RnnCell cell, bool bidirectional, Rng &rng) {
  RnnCore r;
  r.ln = make_norm(store, prefix + ".ln", c);
  r.fwd = make_rnn_side(store, prefix + ".f", c, hdim, cell, rng);
  if (bidirectional) r.bwd = make_rnn_side(store, prefix + ".r", c, hdim, cell, rng);
  const int64_t dirs = bidirectional ? 2 : 1;
  r.proj = make_linear(store, prefix + ".proj", dirs * hdim, c, rng);
  r.cell = cell;
  r.bidirectional = bidirectional;
  return r;
}

Tensor rnn_scan(Graph &g, Tensor x, const RnnSide &s, RnnCell cell,
                bool reverse) {
  if (cell == RnnCell::Gru)
    return g.gru_seq(x, g.param(*s.w_ih), g.param(*s.w_hh), g.param(*s.b_ih),
                     g.param(*s.b_hh), reverse);
  return g.lstm_seq(x, g.param(*s.w_ih), g.param(*s.w_hh), g.param(*s.b_ih),
                    g.param(*s.b_hh), reverse);
}

// seq: [N, L, C] -> [N, L, C]. Pre-norm residual body.
Tensor rnn_forward(Graph &g, Tensor seq, const RnnCore &r) {
  Tensor x = apply_norm(g, seq, r.ln);
  Tensor h = rnn_scan(g, x, r.fwd, r.cell, false);
  if (r.bidirectional) {
    Tensor hr = rnn_scan(g, x, r.bwd, r.cell, true);
    h = g.concat({h, hr}, 2);
  }
  return apply_linear(g, h, r.proj);
}

// ---- conformer sub-modules -------------------------------------------------

struct FfnLayer {
  NormLayer ln;
  LinearLayer w1, w2;
};

FfnLayer make_ffn(ParamStore &store, const std::string &prefix, int64_t c,
                  int mult, Rng &rng) {
  FfnLayer f;
  f.ln = make_norm(store, prefix + ".ln", c);
  f.w1 = make_linear(store, prefix + ".w1", c, int64_t(mult) * c, rng);
  f.w2 = make_linear(store, prefix + ".w2", int64_t(mult) * c, c, rng);
  return f;
}

Tensor ffn_forward(Graph &g, Tensor seq, const FfnLayer &f) {
  Tensor x = apply_norm(g, seq, f.ln);
  return apply_linear(g, g.silu(apply_linear(g, x, f.w1)), f.w2);
}

struct ConvModule {
  NormLayer ln;
  LinearLayer pw1;  // C -> 2C, split by GLU
  Param *dw_w = nullptr;
  Param *dw_b = nullptr;
  LinearLayer pw2;  // C -> C
  bool causal = false;
};

ConvModule make_conv_module(ParamStore &store, const std::string &prefix,
                            int64_t c, int kernel, bool causal, Rng &rng) {
  ConvModule m;
  m.ln = make_norm(store, prefix + ".ln", c);
  m.pw1 = make_linear(store, prefix + ".pw1", c, 2 * c, rng);
  m.dw_w = &store.create(prefix + ".dw.w", {int64_t(kernel), c});
  m.dw_b = &store.create(prefix + ".dw.b", {c});
  fill_uniform(*m.dw_w, rng, xavier_bound(kernel, kernel));
  fill_const(*m.dw_b, 0.0);
  m.pw2 = make_linear(store, prefix + ".pw2", c, c, rng);
  m.causal = causal;
  return m;
}

// seq: [N, L, C]; the depthwise convolution runs along L.
Tensor conv_module_forward(Graph &g, Tensor seq, const ConvModule &m) {
  const int64_t n = seq.dim(0), l = seq.dim(1), c = seq.dim(2);
  Tensor x = apply_norm(g, seq, m.ln);
  Tensor gates = apply_linear(g, x, m.pw1);  // [N, L, 2C]
  Tensor a = g.slice(gates, 2, 0, c);
  Tensor b = g.slice(gates, 2, c, c);
  Tensor glu = g.mul(a, g.sigmoid(b));
  Tensor x4 = g.reshape(glu, {n, l, 1, c});
  Tensor conv = g.conv_time_depthwise(x4, g.param(*m.dw_w), g.param(*m.dw_b),
                                      m.causal);
  Tensor act = g.silu(g.reshape(conv, {n, l, c}));
  return apply_linear(g, act, m.pw2);
}

// ---- axis plumbing ---------------------------------------------------------

enum class Axis { Time, Freq };

// [B, T, F, C] -> [N, L, C] with L along the chosen axis.
Tensor to_seq(Graph &g, Tensor x, Axis axis) {
  const int64_t b = x.dim(0), t = x.dim(1), f = x.dim(2), c = x.dim(3);
  if (axis == Axis::Freq) return g.reshape(x, {b * t, f, c});
  return g.reshape(g.permute(x, {0, 2, 1, 3}), {b * f, t, c});
}

Tensor from_seq(Graph &g, Tensor seq, Axis axis, int64_t b, int64_t t,
                int64_t f, int64_t c) {
  if (axis == Axis::Freq) return g.reshape(seq, {b, t, f, c});
  return g.permute(g.reshape(seq, {b, f, t, c}), {0, 2, 1, 3});
}

// ---- blocks ----------------------------------------------------------------

class AttnBlock final : public Block {
 public:
  AttnBlock(const BlockSpec &spec, const std::string &prefix, ParamStore &store,
            Rng &rng)
      : axis_(spec.kind == BlockKind::TimeAttention ? Axis::Time : Axis::Freq),
        core_(make_attention(store, prefix + ".att", spec.width, spec.heads,
                             axis_ == Axis::Time && spec.causal, rng)) {}

  Tensor forward(Graph &g, Tensor x) override {
    const int64_t b = x.dim(0), t = x.dim(1), f = x.dim(2), c = x.dim(3);
    Tensor seq = to_seq(g, x, axis_);
    Tensor out = g.add(seq, attention_forward(g, seq, core_));
    return from_seq(g, out, axis_, b, t, f, c);
  }

 private:
  Axis axis_;
  AttentionCore core_;
};

class RnnBlock final : public Block {
 public:
  RnnBlock(const BlockSpec &spec, const std::string &prefix, ParamStore &store,
           Rng &rng)
      : axis_(spec.kind == BlockKind::TimeRnn ? Axis::Time : Axis::Freq),
        core_(make_rnn(store, prefix + ".rnn", spec.width, spec.hidden,
                       spec.cell, axis_ == Axis::Freq && spec.bidirectional,
                       rng)) {}

  Tensor forward(Graph &g, Tensor x) override {
    const int64_t b = x.dim(0), t = x.dim(1), f = x.dim(2), c = x.dim(3);
    Tensor seq = to_seq(g, x, axis_);
    Tensor out = g.add(seq, rnn_forward(g, seq, core_));
    return from_seq(g, out, axis_, b, t, f, c);
  }

 private:
  Axis axis_;
  RnnCore core_;
};

// Dual-path: bidirectional scan along frequency, then unidirectional scan
// along time, each with its own pre-norm residual.
class DprnnBlock final : public Block {
 public:
  DprnnBlock(const BlockSpec &spec, const std::string &prefix,
             ParamStore &store, Rng &rng)
      : freq_(make_rnn(store, prefix + ".freq", spec.width, spec.hidden,
                       spec.cell, true, rng)),
        time_(make_rnn(store, prefix + ".time", spec.width, spec.hidden,
                       spec.cell, false, rng)) {}

  Tensor forward(Graph &g, Tensor x) override {
    const int64_t b = x.dim(0), t = x.dim(1), f = x.dim(2), c = x.dim(3);
    Tensor fs = to_seq(g, x, Axis::Freq);
    Tensor fo = from_seq(g, g.add(fs, rnn_forward(g, fs, freq_)), Axis::Freq,
                         b, t, f, c);
    Tensor ts = to_seq(g, fo, Axis::Time);
    Tensor to = g.add(ts, rnn_forward(g, ts, time_));
    return from_seq(g, to, Axis::Time, b, t, f, c);
  }

 private:
  RnnCore freq_, time_;
};

// Macaron conformer: half-FFN, core (attention or swapped-in bidirectional
// RNN), convolution module, half-FFN, final norm.
class ConformerBlock final : public Block {
 public:
  ConformerBlock(const BlockSpec &spec, const std::string &prefix,
                 ParamStore &store, Rng &rng)
      : axis_(spec.kind == BlockKind::ConformerTime ? Axis::Time : Axis::Freq) {
    const bool causal = axis_ == Axis::Time && spec.causal;
    const bool rnn_core = spec.kind == BlockKind::ConformerFreq &&
                          spec.conformer_core &&
                          *spec.conformer_core == BlockKind::FreqRnn;
    ffn1_ = make_ffn(store, prefix + ".ffn1", spec.width, spec.ffn_mult, rng);
    if (rnn_core) {
      rnn_ = std::make_unique<RnnCore>(make_rnn(
          store, prefix + ".core", spec.width, spec.hidden, spec.cell, true,
          rng));
    } else {
      att_ = std::make_unique<AttentionCore>(make_attention(
          store, prefix + ".core", spec.width, spec.heads, causal, rng));
    }
    conv_ = make_conv_module(store, prefix + ".conv", spec.width,
                             spec.conv_kernel, causal, rng);
    ffn2_ = make_ffn(store, prefix + ".ffn2", spec.width, spec.ffn_mult, rng);
    final_ln_ = make_norm(store, prefix + ".out_ln", spec.width);
  }

  Tensor forward(Graph &g, Tensor x) override {
    const int64_t b = x.dim(0), t = x.dim(1), f = x.dim(2), c = x.dim(3);
    Tensor seq = to_seq(g, x, axis_);
    seq = g.add(seq, g.scale(ffn_forward(g, seq, ffn1_), 0.5));
    if (att_)
      seq = g.add(seq, attention_forward(g, seq, *att_));
    else
      seq = g.add(seq, rnn_forward(g, seq, *rnn_));
    seq = g.add(seq, conv_module_forward(g, seq, conv_));
    seq = g.add(seq, g.scale(ffn_forward(g, seq, ffn2_), 0.5));
    seq = apply_norm(g, seq, final_ln_);
    return from_seq(g, seq, axis_, b, t, f, c);
  }

 private:
  Axis axis_;
  FfnLayer ffn1_, ffn2_;
  std::unique_ptr<AttentionCore> att_;
  std::unique_ptr<RnnCore> rnn_;
  ConvModule conv_;
  NormLayer final_ln_;
};

// ---- closed-form parameter arithmetic --------------------------------------

int64_t norm_params(int64_t c) { return 2 * c; }
int64_t linear_params(int64_t in, int64_t out) { return in * out + out; }

int64_t attention_params(int64_t c, int heads) {
  // q, v, o projections carry biases; k does not (it cancels in softmax).
  return norm_params(c) + 4 * linear_params(c, c) - c +
         int64_t(kRelBuckets) * heads;
}

int64_t rnn_params(int64_t c, int64_t hdim, RnnCell cell, bool bidir) {
  const int64_t gates = (cell == RnnCell::Gru ? 3 : 4) * hdim;
  const int64_t side = c * gates + hdim * gates + 2 * gates;
  const int64_t dirs = bidir ? 2 : 1;
  return norm_params(c) + dirs * side + linear_params(dirs * hdim, c);
}

int64_t ffn_params(int64_t c, int mult) {
  return norm_params(c) + linear_params(c, int64_t(mult) * c) +
         linear_params(int64_t(mult) * c, c);
}

int64_t conv_module_params(int64_t c, int kernel) {
  return norm_params(c) + linear_params(c, 2 * c) + (int64_t(kernel) * c + c) +
         linear_params(c, c);
}

}  // namespace

int64_t block_param_count(const BlockSpec &spec) {
  spec.validate();
  const int64_t c = spec.width;
  switch (spec.kind) {
    case BlockKind::TimeAttention:
    case BlockKind::FreqAttention:
      return attention_params(c, spec.heads);
    case BlockKind::TimeRnn:
      return rnn_params(c, spec.hidden, spec.cell, false);
    case BlockKind::FreqRnn:
      return rnn_params(c, spec.hidden, spec.cell, spec.bidirectional);
    case BlockKind::Dprnn:
      return rnn_params(c, spec.hidden, spec.cell, true) +
             rnn_params(c, spec.hidden, spec.cell, false);
    case BlockKind::ConformerTime:
    case BlockKind::ConformerFreq: {
      const bool rnn_core = spec.kind == BlockKind::ConformerFreq &&
                            spec.conformer_core &&
                            *spec.conformer_core == BlockKind::FreqRnn;
      const int64_t core = rnn_core
                               ? rnn_params(c, spec.hidden, spec.cell, true)
                               : attention_params(c, spec.heads);
      return 2 * ffn_params(c, spec.ffn_mult) + core +
             conv_module_params(c, spec.conv_kernel) + norm_params(c);
    }
  }
  throw ConfigError("unknown block kind value");
}

std::unique_ptr<Block> make_block(const BlockSpec &spec,
                                  const std::string &prefix, ParamStore &store,
                                  Rng &rng) {
  spec.validate();
  switch (spec.kind) {
    case BlockKind::TimeAttention:
    case BlockKind::FreqAttention:
      return std::make_unique<AttnBlock>(spec, prefix, store, rng);
    case BlockKind::TimeRnn:
    case BlockKind::FreqRnn:
      return std::make_unique<RnnBlock>(spec, prefix, store, rng);
    case BlockKind::Dprnn:
      return std::make_unique<DprnnBlock>(spec, prefix, store, rng);
    case BlockKind::ConformerTime:
    case BlockKind::ConformerFreq:
      return std::make_unique<ConformerBlock>(spec, prefix, store, rng);
  }
  throw ConfigError("unknown block kind value");
}

// ---------------------------------------------------------------------------
// gradient verification
// ---------------------------------------------------------------------------

double grad_check(const BlockSpec &spec, uint64_t seed) {
  spec.validate();
  ParamStore store;
  Rng rng(seed);
  auto block = make_block(spec, "blk", store, rng);

  const int64_t b = 1, t = 5, f = 4, c = spec.width;
  const auto n = size_t(b * t * f * c);
  std::vector<double> xv(n);
  std::vector<double> rv(n);
  for (auto &v : xv) v = rng.normal(0.0, 0.5);
  for (auto &v : rv) v = rng.normal(0.0, 1.0);

  auto loss_value = [&]() {
    Graph g;
    Tensor x = g.input({b, t, f, c}, xv);
    Tensor y = block->forward(g, x);
    Tensor loss = g.sum_all(g.mul(y, g.input({b, t, f, c}, rv)));
    return loss.data()[0];
  };

  store.zero_grad();
  {
    Graph g;
    Tensor x = g.input({b, t, f, c}, xv);
    Tensor y = block->forward(g, x);
    Tensor loss = g.sum_all(g.mul(y, g.input({b, t, f, c}, rv)));
    g.backward(loss);
  }

  const double h = 1e-5;
  double worst = 0.0;
  for (Param *p : store.params()) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss_value();
      p->value[i] = keep - h;
      const double dn = loss_value();
      p->value[i] = keep;
      const double numeric = (up - dn) / (2.0 * h);
      const double analytic = p->grad[i];
      if (!std::isfinite(analytic))
        throw NumericalError("non-finite gradient in " + p->name);
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace sesw::nn
