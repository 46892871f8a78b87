// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sesw/errors.hpp"
#include "sesw/rng.hpp"
#include "sesw/wav.hpp"

namespace sesw::train {

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

void WarmupSchedule::validate() const {
  if (!(c_scale > 0.0)) throw ConfigError("warmup c_scale must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
}

double WarmupSchedule::at(int64_t step) const {
  validate();
  if (step < 1) throw DomainError("schedule step must be >= 1");
  const double s = double(step);
  const double w = double(warmup_steps);
  return (1.0 / std::sqrt(c_scale)) *
         std::min(1.0 / std::sqrt(s), s / std::sqrt(w * w * w));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0))
    throw ConfigError("adam requires 0 < beta1 < beta2 < 1");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(segment_seconds > 0.0))
    throw ConfigError("segment_seconds must be > 0");
}

Adam::Adam(std::vector<Param *> params, const OptimizerConfig &cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param *p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param &p = *params_[pi];
    auto &m = m_[pi];
    auto &v = v_[pi];
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

double clip_grad_norm(const std::vector<Param *> &params, double max_norm) {
  double sq = 0.0;
  for (const Param *p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Param *p : params)
      for (double &g : p->grad) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

void LossConfig::validate() const {
  if (!(gamma > 0.0 && std::isfinite(gamma)))
    throw ConfigError("loss gamma must be positive and finite");
  if (w_mag < 0.0 || w_cplx < 0.0)
    throw ConfigError("loss weights must be >= 0");
  if (w_mag == 0.0 && w_cplx == 0.0)
    throw ConfigError("loss weights must not both be zero");
}

namespace {

// |z|^p with the magnitude clamped at kMagnitudeClamp before exponentiation.
double clamped_mag_pow(double re, double im, double p) {
  const double mag = std::max(std::hypot(re, im), kMagnitudeClamp);
  return std::pow(mag, p);
}

}  // namespace

double spectral_loss(const Spectrogram &est, const Spectrogram &tgt,
                     const LossConfig &cfg) {
  cfg.validate();
  if (est.frames != tgt.frames || est.n_bins != tgt.n_bins)
    throw ShapeError("spectral_loss shapes differ");
  if (est.config.win_len != tgt.config.win_len ||
      est.config.hop != tgt.config.hop ||
      est.config.n_fft != tgt.config.n_fft)
    throw ShapeError("spectral_loss analysis configs differ");

  const size_t n = est.bins.size();
  if (n == 0) throw ShapeError("spectral_loss on empty spectrogram");
  double mag_sum = 0.0, cplx_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const auto &e = est.bins[i];
    const auto &t = tgt.bins[i];
    const double me = clamped_mag_pow(e.real(), e.imag(), cfg.gamma);
    const double mt = clamped_mag_pow(t.real(), t.imag(), cfg.gamma);
    const double dm = me - mt;
    mag_sum += dm * dm;
    // compress keeps the phase: |z|^g * z/|z| = |z|^(g-1) * z, with the
    // clamped magnitude under the power (zero bins stay exactly zero).
    const double re = clamped_mag_pow(e.real(), e.imag(), cfg.gamma - 1.0);
    const double rt = clamped_mag_pow(t.real(), t.imag(), cfg.gamma - 1.0);
    const double dre = re * e.real() - rt * t.real();
    const double dim = re * e.imag() - rt * t.imag();
    cplx_sum += dre * dre + dim * dim;
  }
  return cfg.w_mag * mag_sum / double(n) + cfg.w_cplx * cplx_sum / double(n);
}

Tensor spectral_loss_graph(Graph &g, Tensor est,
                           const std::vector<double> &tgt_reim,
                           const std::vector<double> &frame_weight,
                           const LossConfig &cfg) {
  cfg.validate();
  if (est.rank() != 4 || est.dim(3) != 2)
    throw ShapeError("spectral_loss_graph wants est [B, T, F, 2]");
  const int64_t b = est.dim(0), t = est.dim(1), f = est.dim(2);
  if (int64_t(tgt_reim.size()) != est.numel())
    throw ShapeError("spectral_loss_graph target size mismatch");

  std::vector<double> w(size_t(b * t), 1.0);
  if (!frame_weight.empty()) {
    if (int64_t(frame_weight.size()) != b * t)
      throw ShapeError("spectral_loss_graph frame weights must be [B*T]");
    w = frame_weight;
  }
  double valid_frames = 0.0;
  for (double x : w) valid_frames += x;
  if (valid_frames <= 0.0)
    throw ShapeError("spectral_loss_graph has no weighted frames");
  const double denom = valid_frames * double(f);

  // Precompute the compressed target (constants).
  std::vector<double> tgt_magg(size_t(b * t * f));
  std::vector<double> tgt_comp(size_t(b * t * f * 2));
  for (int64_t i = 0; i < b * t * f; ++i) {
    const double re = tgt_reim[size_t(2 * i)];
    const double im = tgt_reim[size_t(2 * i + 1)];
    tgt_magg[size_t(i)] = clamped_mag_pow(re, im, cfg.gamma);
    const double r = clamped_mag_pow(re, im, cfg.gamma - 1.0);
    tgt_comp[size_t(2 * i)] = r * re;
    tgt_comp[size_t(2 * i + 1)] = r * im;
  }

  Tensor re = g.slice(est, 3, 0, 1);
  Tensor im = g.slice(est, 3, 1, 1);
  // mag^2 >= (1e-8)^2 under the power keeps d|z|^g finite at silence.
  Tensor mag2 = g.add(g.mul(re, re), g.mul(im, im));
  Tensor magg = g.pow_clamped(mag2, cfg.gamma / 2.0,
                              kMagnitudeClamp * kMagnitudeClamp);
  Tensor dmag = g.sub(magg, g.input({b, t, f, 1}, tgt_magg));
  Tensor mag_sq = g.mul(dmag, dmag);

  Tensor ratio = g.pow_clamped(mag2, (cfg.gamma - 1.0) / 2.0,
                               kMagnitudeClamp * kMagnitudeClamp);
  Tensor comp = g.mul(est, ratio);  // broadcast [B,T,F,1] over re/im
  Tensor dc = g.sub(comp, g.input({b, t, f, 2}, tgt_comp));
  Tensor cplx_sq = g.mul(dc, dc);

  Tensor wt = g.input({b, t, 1, 1}, w);
  Tensor mag_term = g.sum_all(g.mul(mag_sq, wt));
  Tensor cplx_term = g.sum_all(g.mul(cplx_sq, wt));
  return g.add(g.scale(mag_term, cfg.w_mag / denom),
               g.scale(cplx_term, cfg.w_cplx / denom));
}

// ---------------------------------------------------------------------------
// history
// ---------------------------------------------------------------------------

std::string history_csv(const std::vector<HistoryRow> &rows) {
  std::ostringstream os;
  os << "step,lr,loss,grad_norm,clipped\n";
  char buf[160];
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%d\n",
                  static_cast<long long>(r.step), r.lr, r.loss, r.grad_norm,
                  r.clipped ? 1 : 0);
    os << buf;
  }
  return os.str();
}

std::vector<HistoryRow> parse_history_csv(const std::string &text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("step,lr,loss", 0) != 0)
    throw FormatError("history csv missing header");
  std::vector<HistoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    HistoryRow r;
    long long step = 0;
    int clipped = 0;
    if (std::sscanf(line.c_str(), "%lld,%lg,%lg,%lg,%d", &step, &r.lr, &r.loss,
                    &r.grad_norm, &clipped) != 5)
      throw FormatError("bad history csv row: " + line);
    r.step = step;
    r.clipped = clipped != 0;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  schedule.validate();
  opt.validate();
  loss.validate();
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
}

namespace {

struct LoadedItem {
  std::vector<double> noisy;
  std::vector<double> target;
};

struct SegmentBatch {
  std::vector<double> features;   // [B, T, F, 3] compressed noisy
  std::vector<double> noisy_reim; // [B, T, F, 2] uncompressed noisy
  std::vector<double> tgt_reim;   // [B, T, F, 2] uncompressed target
  std::vector<double> frame_w;    // [B * T]
  int64_t frames = 0;
  int64_t bins = 0;
};

// Cut one seeded segment pair and append its spectra to the batch buffers.
void append_segment(const LoadedItem &item, size_t seg_len, Rng &rng,
                    SegmentBatch &out) {
  const size_t n = item.noisy.size();
  std::vector<double> noisy_seg(seg_len, 0.0), tgt_seg(seg_len, 0.0);
  size_t valid = 0;
  if (n > seg_len) {
    const size_t off = size_t(rng.below(uint64_t(n - seg_len + 1)));
    std::copy_n(item.noisy.begin() + long(off), seg_len, noisy_seg.begin());
    std::copy_n(item.target.begin() + long(off), seg_len, tgt_seg.begin());
    valid = seg_len;
  } else {
    std::copy(item.noisy.begin(), item.noisy.end(), noisy_seg.begin());
    std::copy(item.target.begin(), item.target.end(), tgt_seg.begin());
    valid = n;
  }

  StftConfig scfg;
  Spectrogram nspec = stft(Waveform(std::move(noisy_seg)), scfg);
  Spectrogram tspec = stft(Waveform(std::move(tgt_seg)), scfg);
  CompressionConfig ccfg;
  ccfg.gamma = nn::Model::kCompressionGamma;
  Spectrogram comp = compress(nspec, ccfg);

  out.frames = nspec.frames;
  out.bins = nspec.n_bins;
  const auto feats = nn::spectrogram_features(comp);
  out.features.insert(out.features.end(), feats.begin(), feats.end());
  for (int t = 0; t < nspec.frames; ++t) {
    for (int f = 0; f < nspec.n_bins; ++f) {
      out.noisy_reim.push_back(nspec.at(t, f).real());
      out.noisy_reim.push_back(nspec.at(t, f).imag());
      out.tgt_reim.push_back(tspec.at(t, f).real());
      out.tgt_reim.push_back(tspec.at(t, f).imag());
    }
    // A frame is weighted while its center sits inside real (non-padding)
    // audio; frames centered in the zero tail carry no loss.
    out.frame_w.push_back(size_t(t) * size_t(scfg.hop) < valid ? 1.0 : 0.0);
  }
}

Tensor masked_estimate(Graph &g, Tensor mask, Tensor noisy_reim,
                       nn::MaskType type) {
  if (type == nn::MaskType::Magnitude) return g.mul(noisy_reim, mask);
  // complex ratio: (mr + j mi) * (re + j im)
  Tensor mr = g.slice(mask, 3, 0, 1);
  Tensor mi = g.slice(mask, 3, 1, 1);
  Tensor re = g.slice(noisy_reim, 3, 0, 1);
  Tensor im = g.slice(noisy_reim, 3, 1, 1);
  Tensor ore = g.sub(g.mul(re, mr), g.mul(im, mi));
  Tensor oim = g.add(g.mul(im, mr), g.mul(re, mi));
  return g.concat({ore, oim}, 3);
}

}  // namespace

FitResult fit(nn::Model &model, const std::vector<SynthReportRow> &items,
              const TrainConfig &cfg) {
  cfg.validate();
  if (items.empty()) throw ConfigError("fit needs a non-empty item list");

  std::vector<LoadedItem> loaded;
  loaded.reserve(items.size());
  for (const auto &row : items) {
    LoadedItem li;
    li.noisy = read_wav(row.noisy_path).samples;
    li.target = read_wav(row.target_path).samples;
    if (li.noisy.size() != li.target.size())
      throw FormatError("noisy/target length mismatch for item " + row.id);
    loaded.push_back(std::move(li));
  }

  const size_t seg_len =
      size_t(std::llround(cfg.opt.segment_seconds * kSampleRate));

  const bool to_files = !cfg.out_dir.empty();
  std::filesystem::path dir(cfg.out_dir);
  if (to_files) std::filesystem::create_directories(dir);
  FitResult res;
  res.best_loss = std::numeric_limits<double>::infinity();
  if (to_files) {
    res.latest_path = (dir / "latest.ckpt").string();
    res.best_path = (dir / "best.ckpt").string();
    res.final_path = (dir / "final.ckpt").string();
    res.history_path = (dir / "history.csv").string();
  }

  auto write_history = [&]() {
    if (!to_files) return;
    std::ofstream out(res.history_path, std::ios::trunc);
    out << history_csv(res.history);
  };

  Rng rng(cfg.seed);
  Adam adam(model.store().params(), cfg.opt);
  std::vector<size_t> order;
  size_t cursor = 0;
  auto next_item = [&]() -> size_t {
    if (cursor >= order.size()) {
      order.resize(loaded.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::string last_good = to_files ? res.latest_path : std::string("<none>");
  bool any_checkpoint = false;
  model.store().zero_grad();

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    SegmentBatch batch;
    const int bsz = int(std::min<size_t>(size_t(cfg.opt.batch_size),
                                         std::max<size_t>(loaded.size(), 1)));
    for (int i = 0; i < bsz; ++i)
      append_segment(loaded[next_item()], seg_len, rng, batch);

    Graph g;
    Tensor feats = g.input({bsz, batch.frames, batch.bins, 3}, batch.features);
    Tensor mask = model.forward(g, feats);
    Tensor noisy = g.input({bsz, batch.frames, batch.bins, 2}, batch.noisy_reim);
    Tensor est = masked_estimate(g, mask, noisy, model.config().mask);
    Tensor loss = spectral_loss_graph(g, est, batch.tgt_reim, batch.frame_w,
                                      cfg.loss);
    const double loss_val = loss.data()[0];
    if (!std::isfinite(loss_val)) {
      write_history();
      throw NumericalError(
          "non-finite loss at step " + std::to_string(step) +
          "; last good checkpoint: " + (any_checkpoint ? last_good : "<none>"));
    }
    g.backward(loss);

    const double norm = clip_grad_norm(model.store().params(), cfg.grad_clip);
    adam.step(cfg.schedule.at(step));
    model.store().zero_grad();

    res.history.push_back(
        {step, cfg.schedule.at(step), loss_val, norm, norm > cfg.grad_clip});

    if (to_files) {
      if (loss_val < res.best_loss) {
        res.best_loss = loss_val;
        model.save(res.best_path);
      }
      if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
        model.save(res.latest_path);
        any_checkpoint = true;
      }
    } else {
      res.best_loss = std::min(res.best_loss, loss_val);
    }
  }

  if (to_files) {
    model.save(res.final_path);
    write_history();
  }
  return res;
}

}  // namespace sesw::train
