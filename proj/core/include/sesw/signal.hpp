// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "sesw/errors.hpp"

namespace sesw {

inline constexpr int kSampleRate = 16000;

/// Mono audio buffer. Samples are dimensionless amplitudes, nominally in
/// [-1, 1]; everything in this project runs at 16 kHz.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Throws InvalidSignal if empty or any sample is non-finite.
  void validate() const;
};

/// Analysis parameters: 32 ms window, 8 ms hop, 512-point transform, Hann.
struct StftConfig {
  int win_len = 512;
  int hop = 128;
  int n_fft = 512;

  int bins() const { return n_fft / 2 + 1; }
  /// hop must divide win_len, win_len <= n_fft, both powers of two here.
  void validate() const;
};

/// Complex time-frequency matrix, frames x bins, plus the parameters that
/// produced it. origin_length is the sample count of the analyzed signal so
/// the inverse returns exactly that many samples.
struct Spectrogram {
  std::vector<std::complex<double>> bins;  // row-major, frames x n_bins
  int frames = 0;
  int n_bins = 0;
  StftConfig config;
  size_t origin_length = 0;

  std::complex<double> &at(int t, int f) { return bins[size_t(t) * n_bins + f]; }
  const std::complex<double> &at(int t, int f) const {
    return bins[size_t(t) * n_bins + f];
  }
};

/// Power-law magnitude compression |X|^gamma with phase kept.
struct CompressionConfig {
  double gamma = 1.0 / 3.0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw ConfigError("compression gamma must be in (0, 1]");
  }
};

/// Periodic Hann analysis window of length n.
std::vector<double> hann_window(int n);

/// Forward transform. The input is reflection-padded by win_len/2 on both
/// sides so frame t is centered at t*hop; frame count is
/// floor(len(x)/hop) + 1.
Spectrogram stft(const Waveform &x, const StftConfig &cfg = {});

/// Weighted overlap-add inverse with per-sample window-energy normalization;
/// returns exactly origin_length samples and reconstructs stft input to
/// round-off.
Waveform istft(const Spectrogram &spec);

/// Magnitude -> magnitude^gamma, phase untouched. The phase of a zero bin is
/// defined as 0, so zero maps to zero.
Spectrogram compress(const Spectrogram &spec, const CompressionConfig &cfg);

/// Linear convolution truncated to len(x) samples (alignment from sample 0).
Waveform convolve_same(const Waveform &x, const std::vector<double> &taps);

/// Windowed-sinc resampler (used by the 10 kHz intelligibility front-end and
/// the CLI --resample path).
Waveform resample(const Waveform &x, int target_rate);

/// Mean power (sum of squares / length).
double mean_power(const Waveform &x);

}  // namespace sesw
