// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sesw/signal.hpp"

namespace sesw {

/// Room impulse response at 16 kHz. direct_index marks the direct-path peak
/// (argmax of |taps|).
struct Rir {
  std::vector<double> taps;
  int64_t direct_index = 0;

  static Rir from_taps(std::vector<double> taps);
  void validate() const;
};

/// Truncates the response early_ms milliseconds after the direct-path peak,
/// zero-padded back to the original length. early_ms = +inf means no split.
/// Returns {early, full}.
std::pair<Rir, Rir> split_rir(const Rir &r, double early_ms);

/// One line of a synthesis manifest.
struct ManifestRecord {
  std::string id;
  std::string clean_path;
  std::string noise_path;
  std::optional<std::string> rir_path;
  uint64_t seed = 0;
  double snr_db = 0.0;
  std::string split;  // "train" | "test"
};

struct CorpusManifest {
  std::vector<ManifestRecord> records;

  /// Parses JSON-lines. Enforces: train snr in [-15, 0], test snr in
  /// [-15, 15], unique seeds, known split values. Missing ids are filled
  /// with the zero-padded line number.
  static CorpusManifest load(const std::string &path);
  static CorpusManifest parse(const std::string &jsonl_text);
  void save(const std::string &path) const;
  void validate() const;
};

/// A synthesized train/test item. `target` is the early-reverberant speech;
/// `noisy` the reverberant speech plus scaled noise. Both share one length
/// and one joint post-scale, so the component SNR is exactly snr_db.
struct MixtureRecord {
  std::string id;
  Waveform noisy;
  Waveform target;
  double snr_db = 0.0;
  double noise_gain = 0.0;
  double post_scale = 1.0;  // joint anti-clipping scale, 1.0 when unused
  double achieved_snr_db = 0.0;
  std::string split;
};

/// noisy = speech + g * noise with g chosen so the component power ratio is
/// exactly snr_db. noise must be at least as long as speech; its prefix is
/// used. snr_db = +inf returns speech untouched with g = 0.
std::pair<Waveform, double> mix_at_snr(const Waveform &speech,
                                       const Waveform &noise, double snr_db);

struct SynthConfig {
  double early_ms = 50.0;
  bool resample_inputs = false;
};

/// Deterministic synthesis of one record: clean * rir -> reverberant input,
/// clean * early(rir) -> target, noise looped/cropped at a seeded offset,
/// mixed at snr_db, jointly rescaled if |noisy| would exceed 1.
MixtureRecord synthesize(const ManifestRecord &rec, const SynthConfig &cfg);

/// A synth_report.jsonl line: where the files went plus the bookkeeping the
/// evaluation stage needs.
struct SynthReportRow {
  std::string id;
  std::string noisy_path;
  std::string target_path;
  double snr_db = 0.0;
  double achieved_snr_db = 0.0;
  double noise_gain = 0.0;
  double post_scale = 1.0;
  std::string split;

  std::string to_json() const;
  static SynthReportRow from_json(const std::string &line);
};

/// Runs the whole manifest into out_dir, writing <id>_noisy.wav,
/// <id>_target.wav and synth_report.jsonl. Records whose clean clip is
/// silent are skipped with a log line on stderr. Returns the report rows.
std::vector<SynthReportRow> synthesize_manifest(const CorpusManifest &manifest,
                                                const std::string &out_dir,
                                                const SynthConfig &cfg,
                                                int jobs = 1);

std::vector<SynthReportRow> load_synth_report(const std::string &path);

}  // namespace sesw
