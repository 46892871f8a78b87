// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sesw/signal.hpp"

namespace sesw::metrics {

// ---------------------------------------------------------------------------
// Scale-invariant signal-to-distortion ratio
// ---------------------------------------------------------------------------

/// SiSDR in dB, without mean removal: the estimate is projected onto the
/// reference and the ratio of projected power to residual power is returned.
/// Invariant to positive rescaling of `est`. Degenerate cases return infinity
/// sentinels: est == projection exactly -> +inf, est orthogonal to ref -> -inf.
/// Throws ShapeError on length mismatch, DegenerateSignal on a silent ref.
double sisdr_db(const Waveform &est, const Waveform &ref);

/// Reporting clamp for the infinity sentinels (and any value beyond them).
inline constexpr double kSisdrClampDb = 60.0;
double clamp_sisdr_db(double v);

// ---------------------------------------------------------------------------
// Short-time objective intelligibility
// ---------------------------------------------------------------------------

/// Intelligibility of `deg` against the clean `ref`, in [-1, 1] (typically
/// [0, 1]). Both signals are resampled to 10 kHz, frames more than 40 dB
/// below the loudest reference frame are removed, and the mean clipped
/// correlation of one-third-octave band envelopes over 384 ms segments is
/// returned. Throws ShapeError on length mismatch and InsufficientSpeech
/// when fewer than one full segment of active speech survives.
double stoi(const Waveform &deg, const Waveform &ref);

// ---------------------------------------------------------------------------
// Composite-measure decomposition
// ---------------------------------------------------------------------------

/// Log-likelihood ratio: trimmed frame mean (best 95%) of the log Itakura
/// distance between order-10 LPC fits of `deg` and `ref` over 30 ms frames.
/// >= 0, exactly 0 when the frames are identical.
double llr(const Waveform &deg, const Waveform &ref);

/// Weighted spectral-slope distance over 25 critical bands, trimmed frame
/// mean (best 95%). >= 0, exactly 0 on identity.
double wss(const Waveform &deg, const Waveform &ref);

/// Segmental SNR in dB: mean per-frame SNR over 30 ms frames at a 7.5 ms
/// hop, each frame clamped to [-10, 35] dB. Identity sits at the 35 dB
/// ceiling exactly.
double seg_snr(const Waveform &deg, const Waveform &ref);

// ---------------------------------------------------------------------------
// Composite MOS predictors
// ---------------------------------------------------------------------------

/// One affine regression over (PESQ, LLR, WSS, segSNR).
struct CompositeTerm {
  double intercept = 0.0;
  double pesq = 0.0;
  double llr = 0.0;
  double wss = 0.0;
  double segsnr = 0.0;
};

struct CompositeCoeffs {
  CompositeTerm csig;
  CompositeTerm cbak;
  CompositeTerm covl;
  double clamp_lo = 1.0;
  double clamp_hi = 5.0;
  std::string source;

  /// The shipped regression set (see core/data/composite_coeffs.json, which
  /// carries the same values together with their provenance label).
  static CompositeCoeffs defaults();
  /// Loads a coefficient file; throws FormatError on malformed input and
  /// ConfigError on non-finite values or an inverted clamp range.
  static CompositeCoeffs load(const std::string &path);
  void validate() const;
};

struct CompositeScores {
  double csig = 0.0;
  double cbak = 0.0;
  double covl = 0.0;
};

/// Applies the three regressions and clamps each output to [1, 5].
/// Throws DomainError on non-finite inputs.
CompositeScores composite(double pesq, double llr_v, double wss_v,
                          double seg_snr_db, const CompositeCoeffs &coeffs);

// ---------------------------------------------------------------------------
// PESQ provider
// ---------------------------------------------------------------------------

/// Environment variable naming an executable invoked as
/// `$PESQ_PROVIDER <ref.wav> <deg.wav>`; its last numeric stdout token is
/// taken as the score.
inline constexpr const char *kPesqProviderEnv = "PESQ_PROVIDER";

/// True when the provider variable is set and non-empty.
bool pesq_provider_available();

/// Runs the configured provider on two 16 kHz wav files and returns its
/// score. Throws MetricUnavailable when no provider is configured,
/// FormatError when either file is not 16 kHz mono (checked before the
/// provider runs), and ProviderError when the provider exits nonzero,
/// prints no parsable score, or reports a score outside [-0.5, 4.5];
/// captured stderr is included in the message.
double pesq_provider(const std::string &ref_path, const std::string &deg_path);

// ---------------------------------------------------------------------------
// Metric rows
// ---------------------------------------------------------------------------

/// One evaluated utterance. pesq and the composite scores are absent when no
/// PESQ provider is configured; sisdr_clamped marks rows whose SiSDR hit an
/// infinity sentinel and was reported at the +/-60 dB clamp.
struct MetricRow {
  std::string utterance_id;
  double snr_db = 0.0;
  std::optional<double> pesq;
  double stoi = 0.0;
  double sisdr_db = 0.0;
  bool sisdr_clamped = false;
  std::optional<double> csig;
  std::optional<double> cbak;
  std::optional<double> covl;

  /// Range checks: stoi in [-1, 1], pesq in [-0.5, 4.5], composites in
  /// [1, 5], everything finite. Throws DomainError.
  void validate() const;

  std::string to_json() const;
  static MetricRow from_json(const std::string &line);

  static std::string csv_header();
  std::string to_csv() const;
  static MetricRow from_csv(const std::string &line);
};

std::string rows_to_jsonl(const std::vector<MetricRow> &rows);
std::vector<MetricRow> rows_from_jsonl(const std::string &text);
std::string rows_to_csv(const std::vector<MetricRow> &rows);
std::vector<MetricRow> rows_from_csv(const std::string &text);

}  // namespace sesw::metrics
