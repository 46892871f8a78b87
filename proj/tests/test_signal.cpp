// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "sesw/fft.hpp"
#include "sesw/rng.hpp"
#include "sesw/signal.hpp"
#include "sesw/wav.hpp"

using namespace sesw;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform sine(double freq_hz, double seconds, double amp = 0.5,
              int rate = kSampleRate) {
  Waveform x;
  x.sample_rate = rate;
  const size_t n = size_t(seconds * rate);
  x.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    x.samples[i] = amp * std::sin(2.0 * kPi * freq_hz * double(i) / rate);
  return x;
}

Waveform noise(size_t n, uint64_t seed, double amp = 0.5) {
  Rng rng(seed);
  Waveform x;
  x.samples.resize(n);
  for (auto &s : x.samples) s = amp * rng.uniform(-1.0, 1.0);
  return x;
}

double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fft: matches naive DFT on small input") {
  Rng rng(99);
  const int n = 64;
  std::vector<fft::cd> x(n);
  for (auto &v : x) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  auto got = x;
  fft::transform(got, false);
  for (int k = 0; k < n; ++k) {
    fft::cd want{0.0, 0.0};
    for (int t = 0; t < n; ++t) {
      const double ang = -2.0 * kPi * k * t / n;
      want += x[size_t(t)] * fft::cd{std::cos(ang), std::sin(ang)};
    }
    CHECK(std::abs(got[size_t(k)] - want) < 1e-10);
  }
  // inverse undoes forward
  fft::transform(got, true);
  for (int t = 0; t < n; ++t) CHECK(std::abs(got[size_t(t)] - x[size_t(t)]) < 1e-12);
}

TEST_CASE("fft: linear convolution of short sequences") {
  std::vector<double> a{1.0, 2.0, 3.0};
  std::vector<double> b{4.0, 5.0};
  auto c = fft::convolve(a, b);
  REQUIRE(c.size() == 4);
  CHECK(c[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(13.0).epsilon(1e-12));
  CHECK(c[2] == doctest::Approx(22.0).epsilon(1e-12));
  CHECK(c[3] == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("hann window is periodic and COLA at hop win/4") {
  auto w = hann_window(512);
  REQUIRE(w.size() == 512);
  CHECK(w[0] == doctest::Approx(0.0));
  CHECK(w[256] == doctest::Approx(1.0));
  // periodic symmetry: w[k] == w[512-k]
  for (int k = 1; k < 512; ++k)
    CHECK(w[size_t(k)] == doctest::Approx(w[size_t(512 - k)]).epsilon(1e-12));
  // squared-window overlap-add at hop 128 is flat (value 1.5 for Hann^2)
  std::vector<double> cola(512 + 128 * 8, 0.0);
  for (int t = 0; t <= 8; ++t)
    for (int i = 0; i < 512; ++i) cola[size_t(t * 128 + i)] += w[size_t(i)] * w[size_t(i)];
  for (size_t i = 512; i + 512 < cola.size(); ++i)
    CHECK(cola[i] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("stft: frame count and shape") {
  StftConfig cfg;
  CHECK(cfg.bins() == 257);

  auto spec = stft(noise(128000, 1), cfg);
  CHECK(spec.frames == 1001);  // floor(128000/128) + 1
  CHECK(spec.n_bins == 257);
  CHECK(spec.origin_length == 128000);

  CHECK(stft(noise(32000, 2), cfg).frames == 251);  // 2 s
  CHECK(stft(noise(1, 3), cfg).frames == 1);
  CHECK(stft(noise(128, 4), cfg).frames == 2);
}

TEST_CASE("stft: rejects bad input") {
  CHECK_THROWS_AS(stft(Waveform{}), InvalidSignal);
  Waveform bad(std::vector<double>{0.0, std::nan("")});
  CHECK_THROWS_AS(stft(bad), InvalidSignal);
  StftConfig odd;
  odd.hop = 100;  // does not divide 512
  CHECK_THROWS_AS(stft(noise(1000, 5), odd), ConfigError);
}

TEST_CASE("stft: zeros map to zeros") {
  Waveform z;
  z.samples.assign(5000, 0.0);
  auto spec = stft(z);
  for (const auto &b : spec.bins) CHECK(std::abs(b) == 0.0);
}

TEST_CASE("stft: 1 kHz sine concentrates energy at bin 32") {
  auto spec = stft(sine(1000.0, 1.0));
  // interior frames only: away from the reflect-padded edges
  for (int t = 10; t < spec.frames - 10; t += 17) {
    double total = 0.0, local = 0.0;
    double best = -1.0;
    int best_bin = -1;
    for (int f = 0; f < spec.n_bins; ++f) {
      const double e = std::norm(spec.at(t, f));
      total += e;
      if (f >= 31 && f <= 33) local += e;
      if (e > best) {
        best = e;
        best_bin = f;
      }
    }
    CHECK(best_bin == 32);
    CHECK(local / total >= 0.99);
  }
}

TEST_CASE("stft: linearity") {
  auto x = noise(4000, 10);
  auto y = noise(4000, 11);
  const double a = 1.7, b = -0.35;
  Waveform z;
  z.samples.resize(4000);
  for (size_t i = 0; i < 4000; ++i)
    z.samples[i] = a * x.samples[i] + b * y.samples[i];

  auto sx = stft(x), sy = stft(y), sz = stft(z);
  double worst = 0.0;
  for (size_t i = 0; i < sz.bins.size(); ++i) {
    const auto want = a * sx.bins[i] + b * sy.bins[i];
    worst = std::max(worst, std::abs(sz.bins[i] - want));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("stft: per-frame energy identity (Parseval, interior frames)") {
  auto x = noise(6000, 12);
  StftConfig cfg;
  auto spec = stft(x, cfg);
  auto w = hann_window(cfg.win_len);
  // frame t covers original samples [t*hop - 256, t*hop + 256); pick frames
  // fully inside the signal so padding plays no role.
  for (int t = 2; t * cfg.hop + 256 <= 6000 && t < 40; ++t) {
    if (t * cfg.hop < 256) continue;
    double sig = 0.0;
    for (int i = 0; i < cfg.win_len; ++i) {
      const double v = w[size_t(i)] * x.samples[size_t(t * cfg.hop - 256 + i)];
      sig += v * v;
    }
    double bins = std::norm(spec.at(t, 0)) + std::norm(spec.at(t, 256));
    for (int f = 1; f < 256; ++f) bins += 2.0 * std::norm(spec.at(t, f));
    CHECK(bins == doctest::Approx(cfg.n_fft * sig).epsilon(1e-9));
  }
}

TEST_CASE("istft: round trip within 1e-6 (and much better)") {
  auto x = noise(16000, 20);
  auto back = istft(stft(x));
  CHECK(back.size() == x.size());
  CHECK(max_abs_diff(back.samples, x.samples) <= 1e-6);
  CHECK(max_abs_diff(back.samples, x.samples) <= 1e-10);

  // non-multiple-of-hop length
  auto y = noise(5003, 21);
  auto back2 = istft(stft(y));
  CHECK(back2.size() == 5003);
  CHECK(max_abs_diff(back2.samples, y.samples) <= 1e-6);
}

TEST_CASE("istft: impulse round trip keeps position") {
  Waveform x;
  x.samples.assign(16000, 0.0);
  x.samples[5000] = 1.0;
  auto back = istft(stft(x));
  REQUIRE(back.size() == x.size());
  CHECK(back.samples[5000] == doctest::Approx(1.0).epsilon(1e-9));
  double side = 0.0;
  for (size_t i = 0; i < back.size(); ++i)
    if (i != 5000) side = std::max(side, std::abs(back.samples[i]));
  CHECK(side <= 1e-6);
}

TEST_CASE("istft: zero spectrogram gives zero waveform") {
  auto spec = stft(noise(3000, 22));
  std::fill(spec.bins.begin(), spec.bins.end(), std::complex<double>{0.0, 0.0});
  auto out = istft(spec);
  REQUIRE(out.size() == 3000);
  for (double s : out.samples) CHECK(s == 0.0);
}

TEST_CASE("istft: rejects inconsistent bin count") {
  auto spec = stft(noise(3000, 23));
  spec.n_bins = 129;
  spec.bins.resize(size_t(spec.frames) * 129);
  CHECK_THROWS_AS(istft(spec), InvalidSpectrogram);
}

TEST_CASE("compress: magnitude 8 at phase pi/4 -> magnitude 2, phase kept") {
  Spectrogram spec;
  spec.frames = 1;
  spec.n_bins = 257;
  spec.origin_length = 1;
  spec.bins.assign(257, {0.0, 0.0});
  spec.at(0, 5) = std::polar(8.0, kPi / 4.0);
  spec.at(0, 7) = {3.0, 4.0};

  auto out = compress(spec, CompressionConfig{1.0 / 3.0});
  CHECK(std::abs(out.at(0, 5)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::arg(out.at(0, 5)) == doctest::Approx(kPi / 4.0).epsilon(1e-12));
  CHECK(std::abs(out.at(0, 7)) == doctest::Approx(std::pow(5.0, 1.0 / 3.0)).epsilon(1e-12));
  CHECK(std::arg(out.at(0, 7)) == doctest::Approx(std::atan2(4.0, 3.0)).epsilon(1e-12));
  // zero stays zero
  CHECK(std::abs(out.at(0, 0)) == 0.0);
}

TEST_CASE("compress: gamma 1 is the identity") {
  auto spec = stft(noise(2000, 30));
  auto out = compress(spec, CompressionConfig{1.0});
  for (size_t i = 0; i < spec.bins.size(); ++i)
    CHECK(std::abs(out.bins[i] - spec.bins[i]) <= 1e-12 * (1.0 + std::abs(spec.bins[i])));
}

TEST_CASE("compress: gamma 1/3 then 3 recovers magnitudes within 1e-9 relative") {
  auto spec = stft(noise(2000, 31));
  auto round = compress(compress(spec, CompressionConfig{1.0 / 3.0}),
                        CompressionConfig{3.0});
  for (size_t i = 0; i < spec.bins.size(); ++i) {
    const double want = std::abs(spec.bins[i]);
    const double got = std::abs(round.bins[i]);
    CHECK(std::abs(got - want) <= 1e-9 * std::max(1e-30, want));
  }
}

TEST_CASE("compress: config validation bounds gamma for user configs") {
  CHECK_THROWS_AS(CompressionConfig{0.0}.validate(), ConfigError);
  CHECK_THROWS_AS(CompressionConfig{1.5}.validate(), ConfigError);
  CHECK_NOTHROW(CompressionConfig{1.0}.validate());
  CHECK_NOTHROW(CompressionConfig{1.0 / 3.0}.validate());
  // the op itself only requires a positive exponent (expansion allowed)
  Spectrogram spec = stft(noise(640, 32));
  CHECK_NOTHROW(compress(spec, CompressionConfig{3.0}));
  CHECK_THROWS_AS(compress(spec, CompressionConfig{-1.0}), ConfigError);
}

TEST_CASE("convolve_same: delta identity and shift") {
  auto x = noise(1000, 40);
  auto same = convolve_same(x, {1.0});
  CHECK(max_abs_diff(same.samples, x.samples) <= 1e-12);

  std::vector<double> shift(11, 0.0);
  shift[10] = 1.0;
  auto moved = convolve_same(x, shift);
  REQUIRE(moved.size() == x.size());
  for (size_t i = 10; i < x.size(); ++i)
    CHECK(moved.samples[i] == doctest::Approx(x.samples[i - 10]).epsilon(1e-10));
  for (size_t i = 0; i < 10; ++i) CHECK(std::abs(moved.samples[i]) <= 1e-10);
}

TEST_CASE("resample: 16 kHz tone survives the trip to 10 kHz") {
  auto x = sine(400.0, 0.5, 0.5);
  auto y = resample(x, 10000);
  CHECK(y.sample_rate == 10000);
  CHECK(y.size() == 5000);
  double worst = 0.0;
  for (size_t m = 200; m + 200 < y.size(); ++m) {
    const double want = 0.5 * std::sin(2.0 * kPi * 400.0 * double(m) / 10000.0);
    worst = std::max(worst, std::abs(y.samples[m] - want));
  }
  CHECK(worst <= 2e-3);
  // same rate: pass-through
  auto z = resample(x, 16000);
  CHECK(max_abs_diff(z.samples, x.samples) == 0.0);
}

TEST_CASE("mean_power") {
  Waveform x(std::vector<double>{3.0, -4.0});
  CHECK(mean_power(x) == doctest::Approx(12.5).epsilon(1e-12));
  CHECK(mean_power(Waveform{}) == 0.0);
}

TEST_CASE("wav: float32 round trip is exact within float precision") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "sesw_test_wav";
  fs::create_directories(dir);
  auto x = noise(2048, 50, 0.9);
  const auto path = (dir / "f32.wav").string();
  write_wav(path, x, WavEncoding::Float32);
  auto back = read_wav(path);
  REQUIRE(back.size() == x.size());
  CHECK(back.sample_rate == 16000);
  CHECK(max_abs_diff(back.samples, x.samples) <= 1e-7);
}

TEST_CASE("wav: pcm16 round trip within one quantization step") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "sesw_test_wav";
  fs::create_directories(dir);
  auto x = noise(2048, 51, 0.9);
  const auto path = (dir / "p16.wav").string();
  write_wav(path, x, WavEncoding::Pcm16);
  auto back = read_wav(path);
  REQUIRE(back.size() == x.size());
  CHECK(max_abs_diff(back.samples, x.samples) <= 1.0 / 32768.0 + 1e-9);
}

TEST_CASE("wav: rejects foreign rates unless resampling is requested") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "sesw_test_wav";
  fs::create_directories(dir);
  auto x = sine(400.0, 0.25, 0.5, 48000);
  const auto path = (dir / "r48.wav").string();
  write_wav(path, x, WavEncoding::Float32);
  CHECK_THROWS_AS(read_wav(path), FormatError);
  auto y = read_wav(path, /*allow_resample=*/true);
  CHECK(y.sample_rate == 16000);
  CHECK(y.size() == 4000);
}

TEST_CASE("wav: deterministic bytes") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "sesw_test_wav";
  fs::create_directories(dir);
  auto x = noise(999, 52);
  const auto p1 = (dir / "d1.wav").string();
  const auto p2 = (dir / "d2.wav").string();
  write_wav(p1, x, WavEncoding::Pcm16);
  write_wav(p2, x, WavEncoding::Pcm16);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(sa.size() > 44);
}
