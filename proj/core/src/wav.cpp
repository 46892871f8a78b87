// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace sesw {

namespace {

uint32_t rd_u32(const uint8_t *p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t *p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

void wr_u32(std::vector<uint8_t> &v, uint32_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 24));
}
void wr_u16(std::vector<uint8_t> &v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}

}  // namespace

Waveform read_wav(const std::string &path, bool allow_resample) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (data.size() < 44 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path + ": not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t *samples = nullptr;
  size_t sample_bytes = 0;

  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const uint32_t chunk_size = rd_u32(data.data() + pos + 4);
    const uint8_t *body = data.data() + pos + 8;
    if (pos + 8 + chunk_size > data.size())
      throw FormatError(path + ": truncated chunk");
    if (std::memcmp(data.data() + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw FormatError(path + ": malformed fmt chunk");
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
    } else if (std::memcmp(data.data() + pos, "data", 4) == 0) {
      samples = body;
      sample_bytes = chunk_size;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }

  if (!samples) throw FormatError(path + ": no data chunk");
  if (channels != 1) throw FormatError(path + ": only mono is supported");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw FormatError(path + ": only 16-bit PCM or 32-bit float supported");

  Waveform x;
  x.sample_rate = int(rate);
  if (pcm16) {
    const size_t n = sample_bytes / 2;
    x.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t v = int16_t(rd_u16(samples + 2 * i));
      x.samples[i] = double(v) / 32768.0;
    }
  } else {
    const size_t n = sample_bytes / 4;
    x.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bitsv = rd_u32(samples + 4 * i);
      float f;
      std::memcpy(&f, &bitsv, 4);
      x.samples[i] = double(f);
    }
  }

  if (x.sample_rate != kSampleRate) {
    if (!allow_resample)
      throw FormatError(path + ": sample rate " + std::to_string(x.sample_rate) +
                        " != 16000 (pass --resample to convert)");
    x = resample(x, kSampleRate);
  }
  x.validate();
  return x;
}

void write_wav(const std::string &path, const Waveform &x, WavEncoding enc) {
  x.validate();
  const uint32_t n = uint32_t(x.size());
  const uint16_t bytes_per = enc == WavEncoding::Pcm16 ? 2 : 4;
  const uint32_t data_size = n * bytes_per;

  std::vector<uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wr_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32(out, 16);
  wr_u16(out, enc == WavEncoding::Pcm16 ? 1 : 3);
  wr_u16(out, 1);
  wr_u32(out, uint32_t(x.sample_rate));
  wr_u32(out, uint32_t(x.sample_rate) * bytes_per);
  wr_u16(out, bytes_per);
  wr_u16(out, uint16_t(bytes_per * 8));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wr_u32(out, data_size);

  if (enc == WavEncoding::Pcm16) {
    for (double s : x.samples) {
      // symmetric with the reader's /32768 so a round trip stays within
      // half an LSB (full scale +1.0 clamps to 32767)
      long v = std::lrint(std::clamp(s, -1.0, 1.0) * 32768.0);
      int16_t q = int16_t(std::clamp<long>(v, -32768, 32767));
      wr_u16(out, uint16_t(q));
    }
  } else {
    for (double s : x.samples) {
      float f = float(s);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      wr_u32(out, bits);
    }
  }

  std::ofstream of(path, std::ios::binary | std::ios::trunc);
  if (!of) throw FormatError("cannot write " + path);
  of.write(reinterpret_cast<const char *>(out.data()), std::streamsize(out.size()));
  if (!of) throw FormatError("short write to " + path);
}

}  // namespace sesw
