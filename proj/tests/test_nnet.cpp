// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sesw/errors.hpp"
#include "sesw/nnet.hpp"
#include "sesw/rng.hpp"
#include "sesw/signal.hpp"

using namespace sesw;
using namespace sesw::nn;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed, double sd = 0.5) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto &x : v) x = rng.normal(0.0, sd);
  return v;
}

std::vector<double> block_output(const BlockSpec &spec, uint64_t init_seed,
                                 const std::vector<double> &xv, int64_t b,
                                 int64_t t, int64_t f) {
  ParamStore store;
  Rng rng(init_seed);
  auto blk = make_block(spec, "blk", store, rng);
  Graph g;
  Tensor y = blk->forward(g, g.input({b, t, f, spec.width}, xv));
  return std::vector<double>(y.data(), y.data() + y.numel());
}

BlockSpec small_spec(BlockKind kind) {
  BlockSpec s;
  s.kind = kind;
  s.width = 8;
  s.heads = 2;
  s.hidden = 8;
  s.ffn_mult = 2;
  s.conv_kernel = 3;
  s.bidirectional = kind == BlockKind::FreqRnn || kind == BlockKind::Dprnn;
  if (kind == BlockKind::ConformerFreq)
    s.conformer_core = BlockKind::FreqAttention;
  return s;
}

const BlockKind kAllKinds[] = {
    BlockKind::TimeAttention, BlockKind::FreqAttention, BlockKind::TimeRnn,
    BlockKind::FreqRnn,       BlockKind::Dprnn,         BlockKind::ConformerTime,
    BlockKind::ConformerFreq,
};

Waveform tone_mixture(double seconds, uint64_t seed) {
  const int n = int(seconds * kSampleRate);
  Rng rng(seed);
  std::vector<double> s(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / kSampleRate;
    s[size_t(i)] = 0.4 * std::sin(2.0 * M_PI * 320.0 * t) *
                       (0.6 + 0.4 * std::sin(2.0 * M_PI * 3.0 * t)) +
                   0.05 * rng.normal();
  }
  return Waveform(std::move(s));
}

}  // namespace

// ---------------------------------------------------------------------------
// spec validation
// ---------------------------------------------------------------------------

TEST_CASE("nnet: block spec rejects invalid compositions") {
  BlockSpec s = small_spec(BlockKind::TimeAttention);
  s.width = 10;  // heads=2 divides 10; make it fail:
  s.heads = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = small_spec(BlockKind::TimeRnn);
  s.bidirectional = true;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = small_spec(BlockKind::TimeAttention);
  s.bidirectional = true;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  // a time-axis recurrent core inside a conformer_freq slot is invalid
  s = small_spec(BlockKind::ConformerFreq);
  s.conformer_core = BlockKind::TimeRnn;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = small_spec(BlockKind::ConformerFreq);
  s.conformer_core = BlockKind::TimeAttention;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  // the core swap is only defined on conformer_freq
  s = small_spec(BlockKind::ConformerTime);
  s.conformer_core = BlockKind::FreqRnn;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = small_spec(BlockKind::Dprnn);
  s.width = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  CHECK_THROWS_AS(block_kind_from_string("chunked_attention"), ConfigError);
  CHECK(block_kind_from_string("dprnn") == BlockKind::Dprnn);
  CHECK(to_string(BlockKind::ConformerFreq) == "conformer_freq");
}

// ---------------------------------------------------------------------------
// shape, locality, batch independence
// ---------------------------------------------------------------------------

TEST_CASE("nnet: every block kind preserves [B, T, F, C]") {
  const int64_t b = 2, t = 5, f = 4;
  for (BlockKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    ParamStore store;
    Rng rng(11);
    auto blk = make_block(spec, "blk", store, rng);
    Graph g;
    Tensor y = blk->forward(
        g, g.input({b, t, f, spec.width},
                   random_vec(size_t(b * t * f * spec.width), 21)));
    CHECK(y.shape() == Shape{b, t, f, spec.width});
    for (int64_t i = 0; i < y.numel(); ++i)
      REQUIRE(std::isfinite(y.data()[i]));
  }
}

TEST_CASE("nnet: frequency-axis blocks never mix across frames") {
  const int64_t b = 1, t = 4, f = 5;
  for (BlockKind kind :
       {BlockKind::FreqAttention, BlockKind::FreqRnn, BlockKind::ConformerFreq}) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    const int64_t c = spec.width;
    auto xv = random_vec(size_t(b * t * f * c), 33);
    auto base = block_output(spec, 11, xv, b, t, f);

    auto xp = xv;
    const int64_t frame = 2;
    for (int64_t i = 0; i < f * c; ++i) xp[size_t(frame * f * c + i)] += 0.37;
    auto pert = block_output(spec, 11, xp, b, t, f);

    bool frame_changed = false;
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t i = 0; i < f * c; ++i) {
        const size_t k = size_t(tt * f * c + i);
        if (tt == frame) {
          frame_changed = frame_changed || pert[k] != base[k];
        } else {
          // other frames must be untouched bit-for-bit
          REQUIRE(pert[k] == base[k]);
        }
      }
    CHECK(frame_changed);
  }
}

TEST_CASE("nnet: time-axis blocks never mix across frequencies") {
  const int64_t b = 1, t = 6, f = 4;
  for (BlockKind kind :
       {BlockKind::TimeAttention, BlockKind::TimeRnn, BlockKind::ConformerTime}) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    const int64_t c = spec.width;
    auto xv = random_vec(size_t(b * t * f * c), 47);
    auto base = block_output(spec, 13, xv, b, t, f);

    auto xp = xv;
    const int64_t fbin = 1;
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t cc = 0; cc < c; ++cc)
        xp[size_t((tt * f + fbin) * c + cc)] += 0.29;
    auto pert = block_output(spec, 13, xp, b, t, f);

    bool bin_changed = false;
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t ff = 0; ff < f; ++ff)
        for (int64_t cc = 0; cc < c; ++cc) {
          const size_t k = size_t((tt * f + ff) * c + cc);
          if (ff == fbin) {
            bin_changed = bin_changed || pert[k] != base[k];
          } else {
            REQUIRE(pert[k] == base[k]);
          }
        }
    CHECK(bin_changed);
  }
}

TEST_CASE("nnet: batch items are independent") {
  const int64_t b = 2, t = 4, f = 4;
  for (BlockKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    const int64_t c = spec.width;
    const int64_t per = t * f * c;
    auto xv = random_vec(size_t(b * per), 61);
    auto base = block_output(spec, 17, xv, b, t, f);

    auto xp = xv;
    for (int64_t i = 0; i < per; ++i) xp[size_t(per + i)] *= -1.3;
    auto pert = block_output(spec, 17, xp, b, t, f);

    for (int64_t i = 0; i < per; ++i)
      REQUIRE(pert[size_t(i)] == base[size_t(i)]);
  }
}

// ---------------------------------------------------------------------------
// causality
// ---------------------------------------------------------------------------

TEST_CASE("nnet: causal time blocks leave the past bit-exactly unchanged") {
  const int64_t b = 1, t = 64, f = 3, frame = 40;
  for (BlockKind kind : {BlockKind::TimeAttention, BlockKind::TimeRnn,
                         BlockKind::ConformerTime, BlockKind::Dprnn}) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    spec.causal = true;
    const int64_t c = spec.width;
    auto xv = random_vec(size_t(b * t * f * c), 71);
    auto base = block_output(spec, 19, xv, b, t, f);

    auto xp = xv;
    for (int64_t i = 0; i < f * c; ++i) xp[size_t(frame * f * c + i)] += 1.7;
    auto pert = block_output(spec, 19, xp, b, t, f);

    bool future_changed = false;
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t i = 0; i < f * c; ++i) {
        const size_t k = size_t(tt * f * c + i);
        if (tt < frame)
          REQUIRE(pert[k] == base[k]);
        else
          future_changed = future_changed || pert[k] != base[k];
      }
    CHECK(future_changed);
  }
}

TEST_CASE("nnet: non-causal time blocks do leak backwards") {
  const int64_t b = 1, t = 16, f = 2, frame = 10;
  for (BlockKind kind : {BlockKind::TimeAttention, BlockKind::ConformerTime}) {
    CAPTURE(to_string(kind));
    BlockSpec spec = small_spec(kind);
    spec.causal = false;
    const int64_t c = spec.width;
    auto xv = random_vec(size_t(b * t * f * c), 81);
    auto base = block_output(spec, 23, xv, b, t, f);

    auto xp = xv;
    for (int64_t i = 0; i < f * c; ++i) xp[size_t(frame * f * c + i)] += 1.1;
    auto pert = block_output(spec, 23, xp, b, t, f);

    bool past_changed = false;
    for (int64_t tt = 0; tt < frame; ++tt)
      for (int64_t i = 0; i < f * c; ++i)
        past_changed =
            past_changed || pert[size_t(tt * f * c + i)] != base[size_t(tt * f * c + i)];
    CHECK(past_changed);
  }
}

// ---------------------------------------------------------------------------
// parameter counts and gradients
// ---------------------------------------------------------------------------

TEST_CASE("nnet: closed-form block parameter counts match built blocks") {
  for (BlockKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    for (RnnCell cell : {RnnCell::Gru, RnnCell::Lstm}) {
      BlockSpec spec = small_spec(kind);
      spec.cell = cell;
      ParamStore store;
      Rng rng(3);
      auto blk = make_block(spec, "blk", store, rng);
      (void)blk;
      CHECK(block_param_count(spec) == store.total());
    }
  }
  // the swapped recurrent conformer core changes the count
  BlockSpec frnn = small_spec(BlockKind::ConformerFreq);
  frnn.conformer_core = BlockKind::FreqRnn;
  ParamStore store;
  Rng rng(4);
  auto blk = make_block(frnn, "blk", store, rng);
  (void)blk;
  CHECK(block_param_count(frnn) == store.total());
  BlockSpec attn = small_spec(BlockKind::ConformerFreq);
  CHECK(block_param_count(frnn) != block_param_count(attn));
}

TEST_CASE("nnet: analytic gradients match finite differences for every kind") {
  auto tiny = [](BlockKind kind) {
    BlockSpec s;
    s.kind = kind;
    s.width = 6;
    s.heads = 2;
    s.hidden = 6;
    s.ffn_mult = 1;
    s.conv_kernel = 3;
    s.bidirectional = kind == BlockKind::FreqRnn || kind == BlockKind::Dprnn;
    return s;
  };
  for (BlockKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    BlockSpec spec = tiny(kind);
    REQUIRE(block_param_count(spec) <= 1000);
    CHECK(grad_check(spec, 7) <= 1e-4);
  }
  // lstm cell and the swapped conformer core
  BlockSpec lstm = tiny(BlockKind::Dprnn);
  lstm.cell = RnnCell::Lstm;
  REQUIRE(block_param_count(lstm) <= 1300);
  CHECK(grad_check(lstm, 7) <= 1e-4);

  BlockSpec frnn = tiny(BlockKind::ConformerFreq);
  frnn.conformer_core = BlockKind::FreqRnn;
  REQUIRE(block_param_count(frnn) <= 1000);
  CHECK(grad_check(frnn, 7) <= 1e-4);
}

TEST_CASE("nnet: zero-vs-zero gradients count as zero error") {
  CHECK(max_rel_err({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}) == 0.0);
}

// ---------------------------------------------------------------------------
// model config
// ---------------------------------------------------------------------------

TEST_CASE("nnet: model config json round trip and rejection") {
  ModelConfig cfg = ModelConfig::preset(Variant::CmganFrnn, "toy");
  ModelConfig back = ModelConfig::from_json_text(cfg.to_json_text());
  CHECK(back.variant == cfg.variant);
  CHECK(back.encoder_channels == cfg.encoder_channels);
  CHECK(back.n_slots == cfg.n_slots);
  CHECK(back.heads == cfg.heads);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.cell == cfg.cell);
  CHECK(back.causal == cfg.causal);
  CHECK(back.mask == cfg.mask);
  CHECK(back.seed == cfg.seed);

  CHECK_THROWS_AS(ModelConfig::from_json_text("{"), FormatError);
  CHECK_THROWS_AS(ModelConfig::from_json_text("{}"), ConfigError);
  CHECK_THROWS_AS(
      ModelConfig::from_json_text(R"({"variant": "wavenet"})"), ConfigError);
  CHECK_THROWS_AS(
      ModelConfig::from_json_text(R"({"variant": "mtfaa_attn", "bogus": 1})"),
      ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json_text(
                      R"({"variant": "mtfaa_attn", "scale": "huge"})"),
                  ConfigError);
  // heads must divide the bottleneck width
  CHECK_THROWS_AS(ModelConfig::from_json_text(
                      R"({"variant": "mtfaa_attn", "heads": 7})"),
                  ConfigError);
}

TEST_CASE("nnet: variant slot expansion follows the family rules") {
  auto with_slots = [](Variant v, int n) {
    ModelConfig cfg = ModelConfig::preset(v, "toy");
    cfg.n_slots = n;
    return cfg.slot_specs();
  };
  auto slots = with_slots(Variant::MtfaaAttn, 2);
  REQUIRE(slots.size() == 2);
  REQUIRE(slots[0].size() == 2);
  CHECK(slots[0][0].kind == BlockKind::TimeAttention);
  CHECK(slots[0][1].kind == BlockKind::FreqAttention);

  slots = with_slots(Variant::MtfaaDprnn, 2);
  REQUIRE(slots.size() == 2);
  REQUIRE(slots[0].size() == 1);
  CHECK(slots[0][0].kind == BlockKind::Dprnn);

  slots = with_slots(Variant::CmganConf, 2);
  REQUIRE(slots[0].size() == 2);
  CHECK(slots[0][0].kind == BlockKind::ConformerTime);
  CHECK(slots[0][1].kind == BlockKind::ConformerFreq);
  CHECK(*slots[0][1].conformer_core == BlockKind::FreqAttention);

  slots = with_slots(Variant::CmganFrnn, 2);
  CHECK(slots[0][0].kind == BlockKind::ConformerTime);
  CHECK(*slots[0][1].conformer_core == BlockKind::FreqRnn);
}

TEST_CASE("nnet: closed-form model parameter count matches built models") {
  for (Variant v : {Variant::MtfaaAttn, Variant::MtfaaDprnn, Variant::CmganConf,
                    Variant::CmganFrnn}) {
    CAPTURE(to_string(v));
    ModelConfig cfg = ModelConfig::preset(v, "toy");
    Model model(cfg);
    CHECK(model_param_count(cfg) == model.param_total());
    const std::string desc = model.describe();
    CHECK(desc.find(to_string(v)) != std::string::npos);
    CHECK(desc.find(std::to_string(model.param_total())) != std::string::npos);
  }
}

TEST_CASE("nnet: encoder and decoder sizes are shared within a family") {
  auto group_counts = [](Variant v) {
    Model m(ModelConfig::preset(v, "toy"));
    int64_t enc = 0, dec = 0;
    for (const auto &[label, count] : m.param_breakdown()) {
      if (label == "encoder") enc = count;
      if (label == "decoder") dec = count;
    }
    return std::pair<int64_t, int64_t>(enc, dec);
  };
  CHECK(group_counts(Variant::MtfaaAttn) == group_counts(Variant::MtfaaDprnn));
  CHECK(group_counts(Variant::CmganConf) == group_counts(Variant::CmganFrnn));
}

TEST_CASE("nnet: same seed builds identical models, different seed differs") {
  ModelConfig cfg = ModelConfig::preset(Variant::MtfaaDprnn, "toy");
  Model a(cfg), b(cfg);
  const auto &pa = a.store().all();
  const auto &pb = b.store().all();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->name == pb[i]->name);
    REQUIRE(pa[i]->value == pb[i]->value);
  }

  ModelConfig other = cfg;
  other.seed = cfg.seed + 1;
  Model c(other);
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->value != c.store().all()[i]->value) any_diff = true;
  CHECK(any_diff);
}

// ---------------------------------------------------------------------------
// mask application and the enhancement pipeline
// ---------------------------------------------------------------------------

TEST_CASE("nnet: all-ones magnitude mask reproduces the input") {
  Waveform noisy = tone_mixture(0.5, 303);
  Spectrogram spec = stft(noisy);
  const size_t bins = size_t(spec.frames) * size_t(spec.n_bins);

  Waveform same = istft(apply_mask(spec, std::vector<double>(bins, 1.0),
                                   MaskType::Magnitude));
  REQUIRE(same.size() == noisy.size());
  for (size_t i = 0; i < noisy.size(); ++i)
    CHECK(std::fabs(same.samples[i] - noisy.samples[i]) <= 1e-6);

  // unit complex mask (1 + 0j) is the identity too
  std::vector<double> unit(2 * bins, 0.0);
  for (size_t i = 0; i < bins; ++i) unit[2 * i] = 1.0;
  Waveform same2 = istft(apply_mask(spec, unit, MaskType::ComplexRatio));
  for (size_t i = 0; i < noisy.size(); ++i)
    CHECK(std::fabs(same2.samples[i] - noisy.samples[i]) <= 1e-6);

  // zero mask silences everything
  Waveform silent = istft(
      apply_mask(spec, std::vector<double>(bins, 0.0), MaskType::Magnitude));
  for (size_t i = 0; i < silent.size(); ++i)
    CHECK(std::fabs(silent.samples[i]) <= 1e-12);

  CHECK_THROWS_AS(
      apply_mask(spec, std::vector<double>(bins + 1, 1.0), MaskType::Magnitude),
      ShapeError);
  CHECK_THROWS_AS(
      apply_mask(spec, std::vector<double>(bins, 1.0), MaskType::ComplexRatio),
      ShapeError);
}

TEST_CASE("nnet: enhance with a forced identity head reproduces the input") {
  // zeroed head weights give logit 0 everywhere; the bounded magnitude
  // activation maps logit 0 to exactly mask 1.0, so the model must return
  // its input through the full stft -> mask -> istft pipeline.
  ModelConfig cfg = ModelConfig::preset(Variant::MtfaaDprnn, "toy");
  cfg.encoder_channels = {4, 6};
  cfg.hidden = 6;
  cfg.n_slots = 1;
  Model model(cfg);
  Param *hw = model.store().find("head.w");
  Param *hb = model.store().find("head.b");
  REQUIRE(hw != nullptr);
  REQUIRE(hb != nullptr);
  std::fill(hw->value.begin(), hw->value.end(), 0.0);
  std::fill(hb->value.begin(), hb->value.end(), 0.0);

  Waveform noisy = tone_mixture(0.3, 717);
  Waveform out = model.enhance(noisy);
  REQUIRE(out.size() == noisy.size());
  for (size_t i = 0; i < noisy.size(); ++i)
    CHECK(std::fabs(out.samples[i] - noisy.samples[i]) <= 1e-6);
}

TEST_CASE("nnet: enhance output is finite, length-preserving, deterministic") {
  for (Variant v : {Variant::MtfaaAttn, Variant::CmganFrnn}) {
    CAPTURE(to_string(v));
    ModelConfig cfg = ModelConfig::preset(v, "toy");
    cfg.encoder_channels = {4, 6};
    cfg.hidden = 6;
    cfg.heads = 2;
    cfg.n_slots = 1;
    Model model(cfg);
    Waveform noisy = tone_mixture(0.25, 919);
    Waveform a = model.enhance(noisy);
    Waveform b = model.enhance(noisy);
    REQUIRE(a.size() == noisy.size());
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(std::isfinite(a.samples[i]));
      REQUIRE(a.samples[i] == b.samples[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("nnet: checkpoint round trip is bit-exact") {
  ModelConfig cfg = ModelConfig::preset(Variant::CmganFrnn, "toy");
  cfg.encoder_channels = {4, 6};
  cfg.hidden = 6;
  cfg.heads = 2;
  cfg.n_slots = 1;
  Model model(cfg);
  const std::string path = "ckpt_roundtrip.bin";
  model.save(path);

  Model back = Model::load(path);
  CHECK(back.config().variant == cfg.variant);
  const auto &pa = model.store().all();
  const auto &pb = back.store().all();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->name == pb[i]->name);
    REQUIRE(pa[i]->value == pb[i]->value);
  }

  Waveform noisy = tone_mixture(0.2, 111);
  Waveform ya = model.enhance(noisy);
  Waveform yb = back.enhance(noisy);
  for (size_t i = 0; i < ya.size(); ++i) REQUIRE(ya.samples[i] == yb.samples[i]);
  std::remove(path.c_str());
}

TEST_CASE("nnet: corrupt checkpoints are rejected") {
  CHECK_THROWS_AS(Model::load("does_not_exist.bin"), FormatError);
  const std::string path = "ckpt_bad_magic.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(Model::load(path), FormatError);
  std::remove(path.c_str());

  // truncation after the config section
  ModelConfig cfg = ModelConfig::preset(Variant::MtfaaDprnn, "toy");
  cfg.encoder_channels = {4, 6};
  cfg.hidden = 4;
  cfg.n_slots = 1;
  Model model(cfg);
  const std::string full = "ckpt_full.bin";
  model.save(full);
  std::ifstream in(full, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();
  const std::string cut = "ckpt_cut.bin";
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_AS(Model::load(cut), FormatError);
  std::remove(full.c_str());
  std::remove(cut.c_str());
}
