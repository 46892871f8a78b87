// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>

#include "sesw/signal.hpp"

namespace sesw {

enum class WavEncoding { Pcm16, Float32 };

/// Reads a mono RIFF/WAVE file (16-bit PCM or 32-bit float, little-endian).
/// Rejects other encodings and channel counts with FormatError. When
/// allow_resample is false (the default) a sample rate other than 16 kHz is
/// also a FormatError; otherwise the signal is resampled to 16 kHz.
Waveform read_wav(const std::string &path, bool allow_resample = false);

/// Writes a mono WAV at the waveform's sample rate.
void write_wav(const std::string &path, const Waveform &x,
               WavEncoding enc = WavEncoding::Float32);

}  // namespace sesw
