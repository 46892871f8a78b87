// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "sesw/errors.hpp"
#include "sesw/fft.hpp"
#include "sesw/metrics.hpp"
#include "sesw/signal.hpp"

namespace sesw::metrics {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr int kStoiRate = 10000;   // analysis sample rate
constexpr int kWinLen = 256;       // analysis frame
constexpr int kHop = 128;          // 50% overlap
constexpr int kFftLen = 512;
constexpr int kBins = kFftLen / 2 + 1;
constexpr int kBands = 15;         // one-third-octave bands
constexpr double kBandStart = 150.0;  // centre of the first band, Hz
constexpr int kSegFrames = 30;     // 384 ms intelligibility segments
constexpr double kDynRange = 40.0;  // silent-frame threshold below peak
constexpr double kClipDb = -15.0;   // SDR clipping bound

std::vector<double> hanning(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k)
    w[size_t(k)] = 0.5 * (1.0 - std::cos(2.0 * kPi * double(k + 1) / double(n + 1)));
  return w;
}

/// Frame starts at a fixed hop; the final flush-fitting frame is excluded,
/// matching the measure's reference framing.
std::vector<size_t> frame_starts(size_t n) {
  std::vector<size_t> starts;
  if (n > size_t(kWinLen))
    for (size_t s = 0; s + size_t(kWinLen) < n; s += size_t(kHop)) starts.push_back(s);
  return starts;
}

/// Drops frames whose reference energy is more than kDynRange dB below the
/// loudest frame, overlap-adding the kept (windowed) frames of both signals
/// back-to-back at the analysis hop.
void remove_silent_frames(std::vector<double> &x, std::vector<double> &y) {
  static const std::vector<double> w = hanning(kWinLen);
  const auto starts = frame_starts(x.size());
  if (starts.empty()) throw InsufficientSpeech("signal shorter than one frame");

  std::vector<double> energy_db(starts.size());
  for (size_t j = 0; j < starts.size(); ++j) {
    double e = 0.0;
    for (int i = 0; i < kWinLen; ++i) {
      const double v = x[starts[j] + size_t(i)] * w[size_t(i)];
      e += v * v;
    }
    energy_db[j] = 20.0 * std::log10(std::sqrt(e) / std::sqrt(double(kWinLen)));
  }
  const double peak = *std::max_element(energy_db.begin(), energy_db.end());
  if (!std::isfinite(peak)) throw InsufficientSpeech("signal is silent");

  std::vector<double> xs(x.size(), 0.0), ys(y.size(), 0.0);
  size_t count = 0, out_end = 0;
  for (size_t j = 0; j < starts.size(); ++j) {
    if (!(energy_db[j] - peak + kDynRange > 0.0)) continue;
    const size_t out = count * size_t(kHop);
    for (int i = 0; i < kWinLen; ++i) {
      xs[out + size_t(i)] += x[starts[j] + size_t(i)] * w[size_t(i)];
      ys[out + size_t(i)] += y[starts[j] + size_t(i)] * w[size_t(i)];
    }
    out_end = out + size_t(kWinLen);
    ++count;
  }
  if (count == 0) throw InsufficientSpeech("no active speech frames");
  xs.resize(out_end);
  ys.resize(out_end);
  x = std::move(xs);
  y = std::move(ys);
}

/// Windowed 512-point magnitude spectra, frames x kBins.
std::vector<std::array<double, kBins>> stdft_mag(const std::vector<double> &x) {
  static const std::vector<double> w = hanning(kWinLen);
  const auto starts = frame_starts(x.size());
  std::vector<std::array<double, kBins>> mag(starts.size());
  std::vector<fft::cd> buf;
  for (size_t j = 0; j < starts.size(); ++j) {
    buf.assign(size_t(kFftLen), fft::cd(0.0));
    for (int i = 0; i < kWinLen; ++i)
      buf[size_t(i)] = x[starts[j] + size_t(i)] * w[size_t(i)];
    fft::transform(buf, false);
    for (int b = 0; b < kBins; ++b) mag[j][size_t(b)] = std::abs(buf[size_t(b)]);
  }
  return mag;
}

struct Band {
  int lo = 0;  // first FFT bin, inclusive
  int hi = 0;  // past-the-end FFT bin
};

/// One-third-octave bands from 150 Hz with edges snapped to the nearest FFT
/// bin; a band covers [lo, hi).
const std::array<Band, kBands> &third_octave_bands() {
  static const std::array<Band, kBands> bands = [] {
    std::array<Band, kBands> out;
    auto nearest_bin = [](double hz) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < kBins; ++i) {
        const double f = double(i) * double(kStoiRate) / double(kFftLen);
        const double d = (f - hz) * (f - hz);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      return best;
    };
    for (int k = 0; k < kBands; ++k) {
      const double fl = kBandStart * std::pow(2.0, (2.0 * k - 1.0) / 6.0);
      const double fr = kBandStart * std::pow(2.0, (2.0 * k + 1.0) / 6.0);
      out[size_t(k)] = {nearest_bin(fl), nearest_bin(fr)};
    }
    return out;
  }();
  return bands;
}

/// Band magnitude: root of the summed bin powers inside each band.
std::vector<std::array<double, kBands>> band_envelope(
    const std::vector<std::array<double, kBins>> &mag) {
  const auto &bands = third_octave_bands();
  std::vector<std::array<double, kBands>> env(mag.size());
  for (size_t m = 0; m < mag.size(); ++m) {
    for (int k = 0; k < kBands; ++k) {
      double acc = 0.0;
      for (int b = bands[size_t(k)].lo; b < bands[size_t(k)].hi; ++b)
        acc += mag[m][size_t(b)] * mag[m][size_t(b)];
      env[m][size_t(k)] = std::sqrt(acc);
    }
  }
  return env;
}

/// Normalized mean-subtracted correlation; zero-variance vectors contribute
/// nothing rather than poisoning the mean.
double correlation(const double *a, const double *b, int n) {
  double ma = 0.0, mb = 0.0;
  for (int i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sa = 0.0, sb = 0.0, dot = 0.0;
  for (int i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sa += da * da;
    sb += db * db;
    dot += da * db;
  }
  if (sa == 0.0 || sb == 0.0) return 0.0;
  return dot / std::sqrt(sa * sb);
}

}  // namespace

double stoi(const Waveform &deg, const Waveform &ref) {
  if (deg.size() != ref.size())
    throw ShapeError("signal lengths differ: " + std::to_string(deg.size()) +
                     " vs " + std::to_string(ref.size()));
  if (ref.empty()) throw InvalidSignal("empty signals");

  std::vector<double> x = resample(ref, kStoiRate).samples;
  std::vector<double> y = resample(deg, kStoiRate).samples;
  remove_silent_frames(x, y);

  const auto xe = band_envelope(stdft_mag(x));
  const auto ye = band_envelope(stdft_mag(y));
  const int frames = int(xe.size());
  if (frames < kSegFrames)
    throw InsufficientSpeech("fewer than " + std::to_string(kSegFrames) +
                             " active frames (" + std::to_string(frames) + ")");

  const double clip_factor = 1.0 + std::pow(10.0, -kClipDb / 20.0);
  double acc = 0.0;
  const int segments = frames - kSegFrames + 1;
  std::array<double, kSegFrames> xs, ys;
  for (int m = 0; m < segments; ++m) {
    for (int k = 0; k < kBands; ++k) {
      double ex = 0.0, ey = 0.0;
      for (int i = 0; i < kSegFrames; ++i) {
        xs[size_t(i)] = xe[size_t(m + i)][size_t(k)];
        ys[size_t(i)] = ye[size_t(m + i)][size_t(k)];
        ex += xs[size_t(i)] * xs[size_t(i)];
        ey += ys[size_t(i)] * ys[size_t(i)];
      }
      const double alpha = ey > 0.0 ? std::sqrt(ex / ey) : 0.0;
      for (int i = 0; i < kSegFrames; ++i)
        ys[size_t(i)] = std::min(alpha * ys[size_t(i)], clip_factor * xs[size_t(i)]);
      acc += correlation(xs.data(), ys.data(), kSegFrames);
    }
  }
  return acc / (double(kBands) * double(segments));
}

}  // namespace sesw::metrics
