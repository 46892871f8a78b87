// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sesw/metrics.hpp"
#include "sesw/synth.hpp"

namespace sesw::bench {

// ---------------------------------------------------------------------------
// SNR buckets
// ---------------------------------------------------------------------------

inline constexpr int kNumBuckets = 3;

struct SnrBucket {
  std::string label;
  double lo = 0.0;
  double hi = 0.0;
};

/// The three reporting buckets partitioning [-15, 15] dB.
const std::array<SnrBucket, kNumBuckets> &snr_buckets();

/// Bucket for a test SNR. Boundaries are lo-inclusive / hi-exclusive except
/// that 15 dB belongs to the top bucket. Throws DomainError outside
/// [-15, 15].
int bucket_index(double snr_db);
const SnrBucket &bucketize(double snr_db);

// ---------------------------------------------------------------------------
// Aggregated tables
// ---------------------------------------------------------------------------

inline constexpr int kNumMetrics = 6;

/// Reporting column order: PESQ, STOI, SiSDR, CSIG, CBAK, COVL.
const std::array<std::string, kNumMetrics> &metric_names();

struct MetricCells {
  bool present = false;  // false renders as an em-dash column
  std::array<double, kNumBuckets> bucket{};
  double avg = 0.0;  // invariant: arithmetic mean of the three bucket means
};

struct BucketTable {
  std::string system = "system";
  std::array<MetricCells, kNumMetrics> metric{};
  std::array<int64_t, kNumBuckets> counts{};
};

/// Bucket means plus the Avg column (unweighted mean of the three bucket
/// means, not the pooled per-row mean). Rows are re-sorted by utterance id
/// internally, so the result is permutation-invariant. Optional metrics are
/// averaged over the rows that carry them and must either be absent
/// everywhere or present in every bucket. Throws IncompleteEvaluation on an
/// empty or partially-covered bucket and DomainError on an out-of-range SNR.
BucketTable aggregate(std::vector<metrics::MetricRow> rows,
                      const std::string &system_name);

// ---------------------------------------------------------------------------
// End-to-end evaluation
// ---------------------------------------------------------------------------

enum class SystemKind {
  Model,        // enhance through a trained checkpoint
  Passthrough,  // enhanced := noisy (the Noisy baseline)
  Oracle,       // enhanced := target (upper bound)
};

struct EvalOptions {
  SystemKind system = SystemKind::Passthrough;
  std::string checkpoint_path;  // required for SystemKind::Model
  std::string system_name;      // defaults to Model/Noisy/Oracle
  std::string enhanced_dir;     // when set, keep <id>_enhanced.wav here
  bool with_pesq = true;        // consult the PESQ provider when configured
  int jobs = 1;                 // worker threads over utterances
};

struct EvalFailure {
  std::string utterance_id;
  std::string error;
};

struct EvalResult {
  std::vector<metrics::MetricRow> rows;  // sorted by utterance id
  std::vector<EvalFailure> failures;     // sorted by utterance id
  std::optional<BucketTable> table;      // absent when aggregation failed
  std::string table_error;               // why, when absent
};

/// Enhances and scores every record of a synthesized test set. Rows are
/// deterministic for a given record set and system. Per-utterance failures
/// are captured (a failed required metric drops the row; a failed PESQ call
/// keeps the row without pesq/composites) and never abort the run. The
/// table is aggregated at the end; an IncompleteEvaluation lands in
/// table_error instead of throwing.
EvalResult evaluate(const std::vector<SynthReportRow> &records,
                    const EvalOptions &opt);

// ---------------------------------------------------------------------------
// Table emission
// ---------------------------------------------------------------------------

/// One markdown row per system: columns are metric x (three buckets + Avg),
/// 3-decimal cells, absent metrics as em-dashes.
std::string emit_markdown(const BucketTable &t);

/// Long-form CSV: a count row plus one row per metric. parse_csv inverts it,
/// recomputing Avg from the parsed bucket means (it is derived data).
std::string emit_csv(const BucketTable &t);
BucketTable parse_csv(const std::string &text);

}  // namespace sesw::bench
