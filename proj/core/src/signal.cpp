// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/signal.hpp"

#include <algorithm>
#include <cmath>

#include "sesw/fft.hpp"

namespace sesw {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void Waveform::validate() const {
  if (samples.empty()) throw InvalidSignal("empty waveform");
  for (double s : samples) {
    if (!std::isfinite(s)) throw InvalidSignal("non-finite sample");
  }
}

void StftConfig::validate() const {
  if (win_len <= 0 || hop <= 0 || n_fft <= 0)
    throw ConfigError("stft sizes must be positive");
  if (win_len % hop != 0) throw ConfigError("hop must divide win_len");
  if (win_len > n_fft) throw ConfigError("win_len must not exceed n_fft");
  if (n_fft & (n_fft - 1)) throw ConfigError("n_fft must be a power of two");
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / n);
  return w;
}

namespace {

// Reflection padding by win_len/2 on both sides; frame t starts at t*hop in
// the padded signal, i.e. is centered at t*hop in the original.
std::vector<double> center_pad(const std::vector<double> &x, int pad) {
  const int64_t n = int64_t(x.size());
  std::vector<double> out(n + 2 * int64_t(pad));
  for (int64_t i = 0; i < int64_t(out.size()); ++i) {
    int64_t j = i - pad;
    // reflect without repeating the edge sample
    while (j < 0 || j >= n) {
      if (j < 0) j = -j;
      if (j >= n) j = 2 * (n - 1) - j;
      if (n == 1) j = 0;
    }
    out[i] = x[j];
  }
  return out;
}

}  // namespace

Spectrogram stft(const Waveform &x, const StftConfig &cfg) {
  x.validate();
  cfg.validate();

  const int pad = cfg.win_len / 2;
  const std::vector<double> padded = center_pad(x.samples, pad);
  const std::vector<double> window = hann_window(cfg.win_len);

  Spectrogram spec;
  spec.config = cfg;
  spec.origin_length = x.size();
  spec.frames = int(x.size() / size_t(cfg.hop)) + 1;
  spec.n_bins = cfg.bins();
  spec.bins.resize(size_t(spec.frames) * spec.n_bins);

  std::vector<fft::cd> frame(cfg.n_fft);
  for (int t = 0; t < spec.frames; ++t) {
    const size_t start = size_t(t) * cfg.hop;
    std::fill(frame.begin(), frame.end(), fft::cd(0.0, 0.0));
    for (int i = 0; i < cfg.win_len; ++i)
      frame[i] = padded[start + i] * window[i];
    fft::transform(frame, false);
    for (int f = 0; f < spec.n_bins; ++f) spec.at(t, f) = frame[f];
  }
  return spec;
}

Waveform istft(const Spectrogram &spec) {
  spec.config.validate();
  if (spec.n_bins != spec.config.bins())
    throw InvalidSpectrogram("bin count does not match config");
  if (spec.frames <= 0) throw InvalidSpectrogram("no frames");
  for (const auto &b : spec.bins) {
    if (!std::isfinite(b.real()) || !std::isfinite(b.imag()))
      throw InvalidSpectrogram("non-finite bin");
  }

  const StftConfig &cfg = spec.config;
  const int pad = cfg.win_len / 2;
  const std::vector<double> window = hann_window(cfg.win_len);
  const size_t padded_len = size_t(spec.frames - 1) * cfg.hop + cfg.win_len;

  std::vector<double> acc(padded_len, 0.0);
  std::vector<double> wsum(padded_len, 0.0);

  std::vector<fft::cd> frame(cfg.n_fft);
  for (int t = 0; t < spec.frames; ++t) {
    // rebuild the full transform from the one-sided half
    for (int f = 0; f < spec.n_bins; ++f) frame[f] = spec.at(t, f);
    for (int f = spec.n_bins; f < cfg.n_fft; ++f)
      frame[f] = std::conj(spec.at(t, cfg.n_fft - f));
    fft::transform(frame, true);
    const size_t start = size_t(t) * cfg.hop;
    for (int i = 0; i < cfg.win_len; ++i) {
      acc[start + i] += window[i] * frame[i].real();
      wsum[start + i] += window[i] * window[i];
    }
  }

  Waveform out;
  out.sample_rate = kSampleRate;
  out.samples.resize(spec.origin_length);
  for (size_t i = 0; i < spec.origin_length; ++i) {
    const size_t j = i + pad;
    out.samples[i] = wsum[j] > 1e-12 ? acc[j] / wsum[j] : 0.0;
  }
  return out;
}

Spectrogram compress(const Spectrogram &spec, const CompressionConfig &cfg) {
  // Accept any positive exponent here: gamma > 1 is the inverse (expansion)
  // of the matching 1/gamma compression. The (0, 1] restriction applies to
  // user-facing configs, which validate() separately.
  if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma))
    throw ConfigError("compression gamma must be positive and finite");
  Spectrogram out = spec;
  for (auto &b : out.bins) {
    const double mag = std::abs(b);
    if (mag == 0.0) {
      b = {0.0, 0.0};  // phase of a zero bin is 0
    } else {
      b *= std::pow(mag, cfg.gamma) / mag;
    }
  }
  return out;
}

Waveform convolve_same(const Waveform &x, const std::vector<double> &taps) {
  x.validate();
  if (taps.empty()) throw InvalidSignal("empty impulse response");
  std::vector<double> full = fft::convolve(x.samples, taps);
  full.resize(x.size());
  return Waveform{std::move(full), x.sample_rate};
}

Waveform resample(const Waveform &x, int target_rate) {
  x.validate();
  if (target_rate <= 0) throw ConfigError("target rate must be positive");
  if (target_rate == x.sample_rate) return x;

  const double ratio = double(x.sample_rate) / double(target_rate);
  const double cutoff = std::min(1.0, 1.0 / ratio);  // relative to Nyquist
  const int half_width = 24;
  const size_t out_len = size_t(std::floor(double(x.size()) / ratio));
  if (out_len == 0) throw InvalidSignal("signal too short to resample");

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const int64_t n = int64_t(x.size());
  for (size_t m = 0; m < out_len; ++m) {
    const double center = double(m) * ratio;
    const int64_t lo = int64_t(std::ceil(center)) - half_width;
    const int64_t hi = int64_t(std::floor(center)) + half_width;
    double acc = 0.0, ksum = 0.0;
    for (int64_t i = lo; i <= hi; ++i) {
      const double u = double(i) - center;
      const double t = u / double(half_width + 1);
      const double win = 0.5 + 0.5 * std::cos(3.14159265358979323846 * t);
      double s;
      if (std::abs(u) < 1e-12) {
        s = cutoff;
      } else {
        s = std::sin(3.14159265358979323846 * cutoff * u) /
            (3.14159265358979323846 * u);
      }
      const double k = s * win;
      ksum += k;
      if (i >= 0 && i < n) acc += x.samples[i] * k;
    }
    out.samples[m] = ksum != 0.0 ? acc / ksum : 0.0;
  }
  return out;
}

double mean_power(const Waveform &x) {
  if (x.empty()) return 0.0;
  double e = 0.0;
  for (double s : x.samples) e += s * s;
  return e / double(x.size());
}

}  // namespace sesw
