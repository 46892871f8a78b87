// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sesw/nnet.hpp"
#include "sesw/signal.hpp"
#include "sesw/synth.hpp"
#include "sesw/tensor.hpp"

namespace sesw::train {

using nn::Graph;
using nn::Param;
using nn::Tensor;

// ---------------------------------------------------------------------------
// learning-rate schedule
// ---------------------------------------------------------------------------

/// Inverse-square-root warmup: alpha(step) = (1/sqrt(c_scale)) *
/// min(step^-1/2, step * warmup_steps^-3/2). Rises linearly to the peak at
/// warmup_steps, then decays as 1/sqrt(step).
struct WarmupSchedule {
  double c_scale = 64.0;
  int64_t warmup_steps = 8000;

  void validate() const;
  /// step must be >= 1 (DomainError otherwise).
  double at(int64_t step) const;
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  int batch_size = 8;
  double segment_seconds = 8.0;

  void validate() const;
};

/// Bias-corrected Adam over a fixed parameter set. step() consumes the
/// accumulated gradients (the caller zeroes them afterwards).
class Adam {
 public:
  Adam(std::vector<Param *> params, const OptimizerConfig &cfg);
  void step(double lr);
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Param *> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

/// Global-norm gradient clipping: returns the pre-clip norm and scales all
/// gradients in place when it exceeds max_norm.
double clip_grad_norm(const std::vector<Param *> &params, double max_norm);

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Compressed-spectral loss: w_mag * mean((|est|^g - |tgt|^g)^2) +
/// w_cplx * mean(||est|^g e^{j arg est} - |tgt|^g e^{j arg tgt}|^2), means
/// taken over time-frequency bins. Magnitudes are clamped at 1e-8 under the
/// power so the gradient stays finite at silent bins.
struct LossConfig {
  double gamma = 1.0 / 3.0;
  double w_mag = 0.5;
  double w_cplx = 0.5;

  void validate() const;
};

inline constexpr double kMagnitudeClamp = 1e-8;

double spectral_loss(const Spectrogram &est, const Spectrogram &tgt,
                     const LossConfig &cfg);

/// Differentiable route used by the trainer. est is [B, T, F, 2] (re, im);
/// tgt_reim carries the target in the same layout; frame_weight is one
/// weight per (batch, frame) pair ([B*T], typically 1 for real audio and 0
/// for zero-padding) — pass empty for all-ones. Returns the scalar loss
/// node; bin means are taken over weighted frames only.
Tensor spectral_loss_graph(Graph &g, Tensor est,
                           const std::vector<double> &tgt_reim,
                           const std::vector<double> &frame_weight,
                           const LossConfig &cfg);

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct TrainConfig {
  WarmupSchedule schedule;
  OptimizerConfig opt;
  LossConfig loss;
  int64_t steps = 1000;
  uint64_t seed = 1;
  int64_t checkpoint_every = 1000;
  double grad_clip = 5.0;
  /// Where history.csv and checkpoints go. Empty disables file output.
  std::string out_dir;

  void validate() const;
};

struct HistoryRow {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

struct FitResult {
  std::vector<HistoryRow> history;
  double best_loss = 0.0;
  std::string latest_path;  // empty when out_dir is empty
  std::string best_path;
  std::string final_path;
  std::string history_path;
};

/// Trains in place. Deterministic given cfg.seed: item order, crop offsets
/// and every update replay identically. Aborts with NumericalError on a
/// non-finite loss, naming the last good checkpoint in the message.
FitResult fit(nn::Model &model, const std::vector<SynthReportRow> &items,
              const TrainConfig &cfg);

std::string history_csv(const std::vector<HistoryRow> &rows);
std::vector<HistoryRow> parse_history_csv(const std::string &text);

}  // namespace sesw::train
