// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace sesw::fft {

using cd = std::complex<double>;

// In-place iterative radix-2 transform. n must be a power of two.
// inverse=true applies the 1/n scale.
void transform(std::vector<cd> &a, bool inverse);

std::vector<cd> forward(const std::vector<cd> &a);
std::vector<cd> inverse(const std::vector<cd> &a);

// Linear convolution of two real sequences via zero-padded FFT.
std::vector<double> convolve(const std::vector<double> &x,
                             const std::vector<double> &h);

size_t next_pow2(size_t n);

}  // namespace sesw::fft
