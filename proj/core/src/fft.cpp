// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace sesw::fft {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void transform(std::vector<cd> &a, bool inverse) {
  const size_t n = a.size();
  if (n == 0) return;
  if (n & (n - 1)) throw std::invalid_argument("fft size must be a power of two");

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? kTwoPi : -kTwoPi) / double(len);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cd u = a[i + j];
        cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / double(n);
    for (auto &x : a) x *= scale;
  }
}

std::vector<cd> forward(const std::vector<cd> &a) {
  std::vector<cd> out = a;
  transform(out, false);
  return out;
}

std::vector<cd> inverse(const std::vector<cd> &a) {
  std::vector<cd> out = a;
  transform(out, true);
  return out;
}

std::vector<double> convolve(const std::vector<double> &x,
                             const std::vector<double> &h) {
  if (x.empty() || h.empty()) return {};
  const size_t out_len = x.size() + h.size() - 1;
  const size_t n = next_pow2(out_len);
  std::vector<cd> fx(n), fh(n);
  for (size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
  for (size_t i = 0; i < h.size(); ++i) fh[i] = h[i];
  transform(fx, false);
  transform(fh, false);
  for (size_t i = 0; i < n; ++i) fx[i] *= fh[i];
  transform(fx, true);
  std::vector<double> out(out_len);
  for (size_t i = 0; i < out_len; ++i) out[i] = fx[i].real();
  return out;
}

}  // namespace sesw::fft
