// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sesw/errors.hpp"
#include "sesw/nnet.hpp"

namespace sesw::nn {

namespace {

// Frequency ladder fixed by the analysis front-end: 257 bins, two strided
// convolutions (kernel 5, stride 4, pad 2) down to 65 then 17.
constexpr int64_t kBins = 257;
constexpr int64_t kBinsMid = 65;
constexpr int64_t kBinsDeep = 17;
constexpr int kKernel = 5;
constexpr int kStride = 4;
constexpr int kPad = 2;
constexpr int64_t kInChannels = 3;  // compressed re, im, magnitude

int64_t head_channels(MaskType m) {
  return m == MaskType::Magnitude ? 1 : 2;
}

}  // namespace

// ---------------------------------------------------------------------------
// names
// ---------------------------------------------------------------------------

Variant variant_from_string(const std::string &s) {
  if (s == "mtfaa_attn") return Variant::MtfaaAttn;
  if (s == "mtfaa_dprnn") return Variant::MtfaaDprnn;
  if (s == "cmgan_conf") return Variant::CmganConf;
  if (s == "cmgan_frnn") return Variant::CmganFrnn;
  throw ConfigError("unknown model variant: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MtfaaAttn: return "mtfaa_attn";
    case Variant::MtfaaDprnn: return "mtfaa_dprnn";
    case Variant::CmganConf: return "cmgan_conf";
    case Variant::CmganFrnn: return "cmgan_frnn";
  }
  throw ConfigError("unknown variant value");
}

MaskType mask_from_string(const std::string &s) {
  if (s == "magnitude") return MaskType::Magnitude;
  if (s == "complex_ratio") return MaskType::ComplexRatio;
  throw ConfigError("unknown mask type: " + s);
}

std::string to_string(MaskType m) {
  return m == MaskType::Magnitude ? "magnitude" : "complex_ratio";
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (encoder_channels.size() != 2)
    throw ConfigError("encoder_channels must list exactly two stages");
  for (int c : encoder_channels)
    if (c < 1) throw ConfigError("encoder channels must be >= 1");
  if (n_slots < 1) throw ConfigError("n_slots must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  if (conv_kernel < 1) throw ConfigError("conv_kernel must be >= 1");
  // Expanding the slots validates every BlockSpec (head divisibility, slot
  // composition rules, ...).
  (void)slot_specs();
}

std::vector<std::vector<BlockSpec>> ModelConfig::slot_specs() const {
  BlockSpec base;
  base.width = width();
  base.heads = heads;
  base.hidden = hidden;
  base.cell = cell;
  base.causal = causal;
  base.ffn_mult = ffn_mult;
  base.conv_kernel = conv_kernel;
  base.bidirectional = false;

  std::vector<std::vector<BlockSpec>> slots;
  for (int i = 0; i < n_slots; ++i) {
    std::vector<BlockSpec> slot;
    switch (variant) {
      case Variant::MtfaaAttn: {
        BlockSpec t = base;
        t.kind = BlockKind::TimeAttention;
        BlockSpec f = base;
        f.kind = BlockKind::FreqAttention;
        slot = {t, f};
        break;
      }
      case Variant::MtfaaDprnn: {
        BlockSpec d = base;
        d.kind = BlockKind::Dprnn;
        d.bidirectional = true;
        slot = {d};
        break;
      }
      case Variant::CmganConf: {
        BlockSpec t = base;
        t.kind = BlockKind::ConformerTime;
        BlockSpec f = base;
        f.kind = BlockKind::ConformerFreq;
        f.conformer_core = BlockKind::FreqAttention;
        slot = {t, f};
        break;
      }
      case Variant::CmganFrnn: {
        BlockSpec t = base;
        t.kind = BlockKind::ConformerTime;
        BlockSpec f = base;
        f.kind = BlockKind::ConformerFreq;
        f.conformer_core = BlockKind::FreqRnn;
        slot = {t, f};
        break;
      }
    }
    for (const auto &s : slot) s.validate();
    slots.push_back(std::move(slot));
  }
  return slots;
}

ModelConfig ModelConfig::preset(Variant v, const std::string &scale) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.scale = scale;
  if (scale == "toy") {
    cfg.encoder_channels = {12, 24};
    cfg.n_slots = 1;
    cfg.heads = 2;
    cfg.hidden = 24;
    cfg.ffn_mult = 2;
  } else if (scale == "small") {
    cfg.encoder_channels = {48, 96};
    cfg.n_slots = 4;
    cfg.heads = 4;
    cfg.hidden = 96;
    cfg.ffn_mult = 4;
  } else if (scale == "paperish") {
    cfg.encoder_channels = {96, 192};
    cfg.n_slots = 4;
    cfg.heads = 8;
    cfg.hidden = 192;
    cfg.ffn_mult = 4;
  } else {
    throw ConfigError("unknown scale preset: " + scale +
                      " (expected toy, small, or paperish)");
  }
  cfg.mask = (v == Variant::MtfaaAttn || v == Variant::MtfaaDprnn)
                 ? MaskType::Magnitude
                 : MaskType::ComplexRatio;
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::from_json_text(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("model config is not valid JSON: ") +
                      e.what());
  }
  if (!j.is_object()) throw FormatError("model config must be a JSON object");
  if (!j.contains("variant"))
    throw ConfigError("model config is missing 'variant'");

  ModelConfig cfg = preset(variant_from_string(j.at("variant").get<std::string>()),
                           j.value("scale", std::string("toy")));
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string &key = it.key();
      if (key == "variant" || key == "scale") {
        continue;  // consumed by the preset above
      } else if (key == "encoder_channels") {
        cfg.encoder_channels = it.value().get<std::vector<int>>();
      } else if (key == "n_slots") {
        cfg.n_slots = it.value().get<int>();
      } else if (key == "heads") {
        cfg.heads = it.value().get<int>();
      } else if (key == "hidden") {
        cfg.hidden = it.value().get<int>();
      } else if (key == "cell") {
        cfg.cell = cell_from_string(it.value().get<std::string>());
      } else if (key == "causal") {
        cfg.causal = it.value().get<bool>();
      } else if (key == "mask") {
        cfg.mask = mask_from_string(it.value().get<std::string>());
      } else if (key == "ffn_mult") {
        cfg.ffn_mult = it.value().get<int>();
      } else if (key == "conv_kernel") {
        cfg.conv_kernel = it.value().get<int>();
      } else if (key == "seed") {
        cfg.seed = it.value().get<uint64_t>();
      } else {
        throw ConfigError("unknown model config key: " + key);
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad model config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::load(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ModelConfig::to_json_text() const {
  nlohmann::json j;
  j["variant"] = to_string(variant);
  j["scale"] = scale;
  j["encoder_channels"] = encoder_channels;
  j["n_slots"] = n_slots;
  j["heads"] = heads;
  j["hidden"] = hidden;
  j["cell"] = to_string(cell);
  j["causal"] = causal;
  j["mask"] = to_string(mask);
  j["ffn_mult"] = ffn_mult;
  j["conv_kernel"] = conv_kernel;
  j["seed"] = seed;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// closed-form parameter arithmetic
// ---------------------------------------------------------------------------

int64_t model_param_count(const ModelConfig &cfg) {
  cfg.validate();
  const int64_t c1 = cfg.encoder_channels[0];
  const int64_t c2 = cfg.encoder_channels[1];
  const int64_t k = kKernel;
  const int64_t out = head_channels(cfg.mask);

  int64_t n = 0;
  n += k * kInChannels * c1 + c1;  // enc conv 1
  n += k * c1 * c2 + c2;           // enc conv 2
  for (const auto &slot : cfg.slot_specs())
    for (const auto &spec : slot) n += block_param_count(spec);
  n += k * c2 * c1 + c1;              // dec transposed conv 1
  n += (2 * c1) * c1 + c1;            // skip fusion (pointwise)
  n += k * c1 * c1 + c1;              // dec transposed conv 2
  n += (c1 + kInChannels) * out + out;  // mask head
  return n;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct Model::Layers {
  Param *c1_w, *c1_b;      // [5, 3, C1]
  Param *c2_w, *c2_b;      // [5, C1, C2]
  Param *t1_w, *t1_b;      // [5, C2, C1]
  Param *fuse_w, *fuse_b;  // [2*C1, C1]
  Param *t2_w, *t2_b;      // [5, C1, C1]
  Param *head_w, *head_b;  // [C1+3, out]
};

namespace {

void init_conv(Param &w, Param &b, Rng &rng) {
  const int64_t k = w.shape[0], cin = w.shape[1], cout = w.shape[2];
  const double bound = std::sqrt(6.0 / double(k * cin + k * cout));
  for (auto &v : w.value) v = rng.uniform(-bound, bound);
  std::fill(b.value.begin(), b.value.end(), 0.0);
}

void init_linear(Param &w, Param &b, Rng &rng) {
  const double bound = std::sqrt(6.0 / double(w.shape[0] + w.shape[1]));
  for (auto &v : w.value) v = rng.uniform(-bound, bound);
  std::fill(b.value.begin(), b.value.end(), 0.0);
}

// Transposed convolution along F via the dilate + pad + flipped-kernel
// composite; w is [K, C_in, C_out], geometry (F-1)*stride + K - 2*pad.
Tensor conv_transpose_freq(Graph &g, Tensor x, Param &w, Param &b) {
  Tensor t = g.dilate_axis(x, 2, kStride);
  t = g.pad_axis(t, 2, kKernel - 1 - kPad, kKernel - 1 - kPad);
  return g.conv_freq(t, g.flip(g.param(w), 0), g.param(b), 1, 0, 0);
}

}  // namespace

Model::Model(Model &&) noexcept = default;
Model &Model::operator=(Model &&) noexcept = default;
Model::~Model() = default;

Model::Model(const ModelConfig &cfg) : cfg_(cfg), layers_(new Layers) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int64_t c1 = cfg_.encoder_channels[0];
  const int64_t c2 = cfg_.encoder_channels[1];
  Layers &L = *layers_;

  L.c1_w = &store_.create("enc.c1.w", {kKernel, kInChannels, c1});
  L.c1_b = &store_.create("enc.c1.b", {c1});
  init_conv(*L.c1_w, *L.c1_b, rng);
  L.c2_w = &store_.create("enc.c2.w", {kKernel, c1, c2});
  L.c2_b = &store_.create("enc.c2.b", {c2});
  init_conv(*L.c2_w, *L.c2_b, rng);

  const auto slots = cfg_.slot_specs();
  for (size_t i = 0; i < slots.size(); ++i)
    for (size_t b = 0; b < slots[i].size(); ++b)
      blocks_.push_back(make_block(slots[i][b],
                                   "slot" + std::to_string(i) + ".b" +
                                       std::to_string(b),
                                   store_, rng));

  L.t1_w = &store_.create("dec.t1.w", {kKernel, c2, c1});
  L.t1_b = &store_.create("dec.t1.b", {c1});
  init_conv(*L.t1_w, *L.t1_b, rng);
  L.fuse_w = &store_.create("dec.fuse.w", {2 * c1, c1});
  L.fuse_b = &store_.create("dec.fuse.b", {c1});
  init_linear(*L.fuse_w, *L.fuse_b, rng);
  L.t2_w = &store_.create("dec.t2.w", {kKernel, c1, c1});
  L.t2_b = &store_.create("dec.t2.b", {c1});
  init_conv(*L.t2_w, *L.t2_b, rng);

  const int64_t out = head_channels(cfg_.mask);
  L.head_w = &store_.create("head.w", {c1 + kInChannels, out});
  L.head_b = &store_.create("head.b", {out});
  init_linear(*L.head_w, *L.head_b, rng);
}

Tensor Model::forward(Graph &g, Tensor features) {
  if (features.rank() != 4 || features.dim(2) != kBins ||
      features.dim(3) != kInChannels)
    throw ShapeError("model features must be [B, T, " + std::to_string(kBins) +
                     ", " + std::to_string(kInChannels) + "]");
  Layers &L = *layers_;

  Tensor e1 = g.silu(g.conv_freq(features, g.param(*L.c1_w), g.param(*L.c1_b),
                                 kStride, kPad, kPad));  // [B,T,65,C1]
  Tensor e2 = g.silu(g.conv_freq(e1, g.param(*L.c2_w), g.param(*L.c2_b),
                                 kStride, kPad, kPad));  // [B,T,17,C2]
  if (e1.dim(2) != kBinsMid || e2.dim(2) != kBinsDeep)
    throw ShapeError("unexpected encoder ladder geometry");

  Tensor h = e2;
  for (auto &blk : blocks_) h = blk->forward(g, h);

  Tensor d1 = g.silu(conv_transpose_freq(g, h, *L.t1_w, *L.t1_b));  // [B,T,65,C1]
  Tensor fused = g.silu(g.add(
      g.matmul(g.concat({d1, e1}, 3), g.param(*L.fuse_w)), g.param(*L.fuse_b)));
  Tensor d2 = g.silu(conv_transpose_freq(g, fused, *L.t2_w, *L.t2_b));  // 257
  Tensor head_in = g.concat({d2, features}, 3);
  Tensor m = g.add(g.matmul(head_in, g.param(*L.head_w)), g.param(*L.head_b));

  // Bounded mask activations: magnitude masks live in [0, 2] (logit 0 maps
  // to exactly 1, the identity mask); complex-ratio masks in [-1, 1]^2.
  if (cfg_.mask == MaskType::Magnitude) return g.scale(g.sigmoid(m), 2.0);
  return g.tanh_(m);
}

std::vector<double> spectrogram_features(const Spectrogram &compressed) {
  std::vector<double> out(size_t(compressed.frames) * size_t(compressed.n_bins) * 3);
  size_t k = 0;
  for (int t = 0; t < compressed.frames; ++t)
    for (int f = 0; f < compressed.n_bins; ++f) {
      const auto &z = compressed.at(t, f);
      out[k++] = z.real();
      out[k++] = z.imag();
      out[k++] = std::hypot(z.real(), z.imag());
    }
  return out;
}

Spectrogram apply_mask(const Spectrogram &noisy, const std::vector<double> &mask,
                       MaskType type) {
  const size_t bins = size_t(noisy.frames) * size_t(noisy.n_bins);
  Spectrogram out = noisy;
  if (type == MaskType::Magnitude) {
    if (mask.size() != bins)
      throw ShapeError("magnitude mask must carry frames*bins values");
    for (size_t i = 0; i < bins; ++i) out.bins[i] = noisy.bins[i] * mask[i];
  } else {
    if (mask.size() != 2 * bins)
      throw ShapeError("complex-ratio mask must carry frames*bins*2 values");
    for (size_t i = 0; i < bins; ++i) {
      const std::complex<double> m(mask[2 * i], mask[2 * i + 1]);
      out.bins[i] = noisy.bins[i] * m;
    }
  }
  return out;
}

Waveform Model::enhance(const Waveform &noisy) {
  noisy.validate();
  StftConfig scfg;
  Spectrogram spec = stft(noisy, scfg);
  CompressionConfig ccfg;
  ccfg.gamma = kCompressionGamma;
  Spectrogram comp = compress(spec, ccfg);

  Graph g;
  Tensor x = g.input({1, comp.frames, comp.n_bins, kInChannels},
                     spectrogram_features(comp));
  Tensor m = forward(g, x);
  std::vector<double> mv(m.data(), m.data() + m.numel());
  return istft(apply_mask(spec, mv, cfg_.mask));
}

// ---------------------------------------------------------------------------
// description
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, int64_t>> Model::param_breakdown() const {
  std::vector<std::pair<std::string, int64_t>> rows;
  rows.emplace_back("encoder", store_.total_under("enc."));
  const auto slots = cfg_.slot_specs();
  for (size_t i = 0; i < slots.size(); ++i) {
    std::string label = "slot" + std::to_string(i) + " (";
    for (size_t b = 0; b < slots[i].size(); ++b) {
      if (b) label += " + ";
      label += to_string(slots[i][b].kind);
    }
    label += ")";
    rows.emplace_back(label,
                      store_.total_under("slot" + std::to_string(i) + "."));
  }
  rows.emplace_back("decoder", store_.total_under("dec."));
  rows.emplace_back("mask head", store_.total_under("head."));
  return rows;
}

std::string Model::describe() const {
  std::ostringstream os;
  os << "model " << to_string(cfg_.variant) << " (scale " << cfg_.scale
     << ", mask " << to_string(cfg_.mask) << ", "
     << (cfg_.causal ? "causal" : "non-causal") << ")\n";
  for (const auto &[label, count] : param_breakdown())
    os << "  " << label << ": " << count << "\n";
  os << "  total: " << param_total() << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'E', 'S', 'W', 'C', 'K', 'P', '1'};

void write_u64(std::ostream &out, uint64_t v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof v);
}

uint64_t read_u64(std::istream &in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char *>(&v), sizeof v);
  if (!in) throw FormatError("truncated checkpoint");
  return v;
}

}  // namespace

void Model::save(const std::string &path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof kMagic);
  const std::string cfg_json = cfg_.to_json_text();
  write_u64(out, cfg_json.size());
  out.write(cfg_json.data(), std::streamsize(cfg_json.size()));
  write_u64(out, store_.all().size());
  for (const auto &p : store_.all()) {
    write_u64(out, p->name.size());
    out.write(p->name.data(), std::streamsize(p->name.size()));
    write_u64(out, p->shape.size());
    for (int64_t d : p->shape) write_u64(out, uint64_t(d));
    out.write(reinterpret_cast<const char *>(p->value.data()),
              std::streamsize(p->value.size() * sizeof(double)));
  }
  if (!out) throw FormatError("failed while writing checkpoint: " + path);
}

Model Model::load(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError("not a model checkpoint: " + path);

  const uint64_t cfg_len = read_u64(in);
  std::string cfg_json(cfg_len, '\0');
  in.read(cfg_json.data(), std::streamsize(cfg_len));
  if (!in) throw FormatError("truncated checkpoint config");
  Model model(ModelConfig::from_json_text(cfg_json));

  const uint64_t n_params = read_u64(in);
  if (n_params != model.store_.all().size())
    throw FormatError("checkpoint parameter count does not match its config");
  for (uint64_t i = 0; i < n_params; ++i) {
    const uint64_t name_len = read_u64(in);
    if (name_len > 4096) throw FormatError("implausible parameter name length");
    std::string name(name_len, '\0');
    in.read(name.data(), std::streamsize(name_len));
    Param *p = model.store_.find(name);
    if (p == nullptr)
      throw FormatError("checkpoint carries unknown parameter: " + name);
    const uint64_t rank = read_u64(in);
    if (rank != p->shape.size())
      throw FormatError("checkpoint shape mismatch for " + name);
    for (uint64_t d = 0; d < rank; ++d)
      if (int64_t(read_u64(in)) != p->shape[d])
        throw FormatError("checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char *>(p->value.data()),
            std::streamsize(p->value.size() * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint tensor: " + name);
  }
  return model;
}

}  // namespace sesw::nn
