// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sesw/rng.hpp"
#include "sesw/signal.hpp"
#include "sesw/tensor.hpp"

namespace sesw::nn {

// ---------------------------------------------------------------------------
// block specs
// ---------------------------------------------------------------------------

enum class BlockKind {
  TimeAttention,
  FreqAttention,
  TimeRnn,
  FreqRnn,
  Dprnn,
  ConformerTime,
  ConformerFreq,
};

enum class RnnCell { Gru, Lstm };

BlockKind block_kind_from_string(const std::string &s);
std::string to_string(BlockKind k);
RnnCell cell_from_string(const std::string &s);
std::string to_string(RnnCell c);

/// One bottleneck building block. All blocks map [B, T, F, C] -> same shape;
/// time-axis kinds mix only along T, frequency-axis kinds only along F.
struct BlockSpec {
  BlockKind kind = BlockKind::FreqRnn;
  int width = 16;   // channel count C the block expects
  int heads = 2;    // attention kinds: heads must divide width
  int hidden = 16;  // recurrent kinds: hidden state size
  RnnCell cell = RnnCell::Gru;
  /// Frequency-axis recurrent kinds only. freq_rnn honors it; dprnn's
  /// frequency stage is bidirectional by definition (the flag is accepted
  /// there as documentation). true on any other kind is a ConfigError.
  bool bidirectional = false;
  bool causal = true;  // time-axis kinds mask/scan the past only
  int ffn_mult = 4;           // conformer kinds: feed-forward expansion
  int conv_kernel = 7;        // conformer kinds: depthwise kernel size
  /// conformer_freq only: what sits at the attention site. FreqAttention
  /// (default) keeps the attention core; FreqRnn swaps in a bidirectional
  /// recurrent core. Any time-axis kind here is a ConfigError.
  std::optional<BlockKind> conformer_core;

  void validate() const;
};

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

/// Owns every Param of a model; names are unique and hierarchical
/// ("enc.conv1.w", "slot0.time.att.wq", ...).
class ParamStore {
 public:
  Param &create(const std::string &name, Shape shape);
  Param *find(const std::string &name);
  const Param *find(const std::string &name) const;
  std::vector<Param *> params();
  const std::vector<std::unique_ptr<Param>> &all() const { return params_; }
  int64_t total() const;
  /// Sum of parameter counts over names starting with prefix.
  int64_t total_under(const std::string &prefix) const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

struct Block {
  virtual ~Block() = default;
  /// x: [B, T, F, C] with C == spec.width; returns the same shape.
  virtual Tensor forward(Graph &g, Tensor x) = 0;
};

/// Builds one block, registering its parameters under `prefix.` in the store
/// and initializing them from rng.
std::unique_ptr<Block> make_block(const BlockSpec &spec, const std::string &prefix,
                                  ParamStore &store, Rng &rng);

/// Closed-form parameter count for one block (pure arithmetic on the spec;
/// no construction).
int64_t block_param_count(const BlockSpec &spec);

/// Builds a throwaway instance of the block, runs a scalar loss over a small
/// random input, and compares analytic parameter gradients against central
/// finite differences (h = 1e-5). Returns the max relative error.
/// Throws NumericalError if any analytic gradient is non-finite.
double grad_check(const BlockSpec &spec, uint64_t seed = 7);

// ---------------------------------------------------------------------------
// model config
// ---------------------------------------------------------------------------

enum class Variant { MtfaaAttn, MtfaaDprnn, CmganConf, CmganFrnn };
enum class MaskType { Magnitude, ComplexRatio };

Variant variant_from_string(const std::string &s);
std::string to_string(Variant v);
MaskType mask_from_string(const std::string &s);
std::string to_string(MaskType m);

/// Scale/shape of one enhancement model. The encoder ladder is two strided
/// frequency convolutions (kernel 5, stride 4: 257 -> 65 -> 17 bins); the
/// bottleneck holds n_slots variant-specific slots at width
/// encoder_channels[1]; the decoder mirrors the encoder with concat skips.
struct ModelConfig {
  Variant variant = Variant::MtfaaDprnn;
  std::string scale = "toy";  // preset label this config came from
  std::vector<int> encoder_channels = {16, 32};
  int n_slots = 2;
  int heads = 2;
  int hidden = 32;
  RnnCell cell = RnnCell::Gru;
  bool causal = true;
  MaskType mask = MaskType::Magnitude;
  int ffn_mult = 2;
  int conv_kernel = 7;
  uint64_t seed = 1234;

  static ModelConfig preset(Variant v, const std::string &scale);
  static ModelConfig from_json_text(const std::string &text);
  static ModelConfig load(const std::string &path);
  std::string to_json_text() const;
  void validate() const;

  int width() const { return encoder_channels.back(); }
  /// The per-slot block specs this variant expands to (already validated
  /// against the variant's slot rules).
  std::vector<std::vector<BlockSpec>> slot_specs() const;
};

/// Closed-form total parameter count from the config alone.
int64_t model_param_count(const ModelConfig &cfg);

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

/// Applies a model-emitted mask to an (uncompressed) complex spectrogram.
/// Magnitude masks carry frames*bins values; complex-ratio masks
/// frames*bins*2 (re, im interleaved per bin).
Spectrogram apply_mask(const Spectrogram &noisy, const std::vector<double> &mask,
                       MaskType type);

class Model {
 public:
  explicit Model(const ModelConfig &cfg);
  Model(Model &&) noexcept;
  Model &operator=(Model &&) noexcept;
  ~Model();

  const ModelConfig &config() const { return cfg_; }
  ParamStore &store() { return store_; }
  const ParamStore &store() const { return store_; }
  int64_t param_total() const { return store_.total(); }
  /// (group label, parameter count) pairs plus the implicit total;
  /// groups are encoder, slots, decoder, head.
  std::vector<std::pair<std::string, int64_t>> param_breakdown() const;
  std::string describe() const;  // human-readable breakdown table

  /// features: [B, T, F, 3] (compressed re, compressed im, compressed
  /// magnitude). Returns the mask tensor [B, T, F, 1] (magnitude) or
  /// [B, T, F, 2] (complex ratio), already passed through its bounded
  /// activation.
  Tensor forward(Graph &g, Tensor features);

  /// stft -> compress -> forward -> apply_mask on the uncompressed
  /// spectrogram -> istft. Output length == input length.
  Waveform enhance(const Waveform &noisy);

  /// Single-file checkpoint: JSON config + named parameter tensors.
  void save(const std::string &path) const;
  static Model load(const std::string &path);

  static constexpr double kCompressionGamma = 1.0 / 3.0;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::vector<std::unique_ptr<Block>> blocks_;  // flattened slot blocks
  struct Layers;  // encoder/decoder params
  std::unique_ptr<Layers> layers_;
};

/// Feature tensor builder shared by enhance() and the trainer: compressed
/// real, imaginary and magnitude channels, frames-major.
std::vector<double> spectrogram_features(const Spectrogram &compressed);

}  // namespace sesw::nn
