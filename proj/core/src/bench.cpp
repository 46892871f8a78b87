// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "sesw/errors.hpp"
#include "sesw/nnet.hpp"
#include "sesw/wav.hpp"

namespace sesw::bench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// buckets
// ---------------------------------------------------------------------------

const std::array<SnrBucket, kNumBuckets> &snr_buckets() {
  static const std::array<SnrBucket, kNumBuckets> buckets = {
      SnrBucket{"-15~-5", -15.0, -5.0},
      SnrBucket{"-5~5", -5.0, 5.0},
      SnrBucket{"5~15", 5.0, 15.0},
  };
  return buckets;
}

int bucket_index(double snr_db) {
  if (!std::isfinite(snr_db) || snr_db < -15.0 || snr_db > 15.0)
    throw DomainError("snr " + std::to_string(snr_db) +
                      " dB outside the reporting range [-15, 15]");
  // lo-inclusive, hi-exclusive; the top edge belongs to the top bucket
  if (snr_db < -5.0) return 0;
  if (snr_db < 5.0) return 1;
  return 2;
}

const SnrBucket &bucketize(double snr_db) {
  return snr_buckets()[size_t(bucket_index(snr_db))];
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

const std::array<std::string, kNumMetrics> &metric_names() {
  static const std::array<std::string, kNumMetrics> names = {
      "PESQ", "STOI", "SiSDR (dB)", "CSIG", "CBAK", "COVL"};
  return names;
}

namespace {

std::optional<double> metric_value(const metrics::MetricRow &r, int m) {
  switch (m) {
    case 0: return r.pesq;
    case 1: return r.stoi;
    case 2: return r.sisdr_db;
    case 3: return r.csig;
    case 4: return r.cbak;
    case 5: return r.covl;
    default: throw DomainError("bad metric index");
  }
}

}  // namespace

BucketTable aggregate(std::vector<metrics::MetricRow> rows,
                      const std::string &system_name) {
  if (rows.empty()) throw IncompleteEvaluation("no rows to aggregate");
  std::sort(rows.begin(), rows.end(),
            [](const metrics::MetricRow &a, const metrics::MetricRow &b) {
              return a.utterance_id < b.utterance_id;
            });

  BucketTable t;
  t.system = system_name;
  std::array<std::array<double, kNumBuckets>, kNumMetrics> sum{};
  std::array<std::array<int64_t, kNumBuckets>, kNumMetrics> n{};
  for (const auto &row : rows) {
    const int b = bucket_index(row.snr_db);
    ++t.counts[size_t(b)];
    for (int m = 0; m < kNumMetrics; ++m) {
      const auto v = metric_value(row, m);
      if (!v) continue;
      sum[size_t(m)][size_t(b)] += *v;
      ++n[size_t(m)][size_t(b)];
    }
  }
  for (int b = 0; b < kNumBuckets; ++b)
    if (t.counts[size_t(b)] == 0)
      throw IncompleteEvaluation("bucket " + snr_buckets()[size_t(b)].label +
                                 " has no rows");
  for (int m = 0; m < kNumMetrics; ++m) {
    int64_t total = 0;
    for (int b = 0; b < kNumBuckets; ++b) total += n[size_t(m)][size_t(b)];
    if (total == 0) continue;  // metric absent everywhere: em-dash column
    auto &cells = t.metric[size_t(m)];
    for (int b = 0; b < kNumBuckets; ++b) {
      if (n[size_t(m)][size_t(b)] == 0)
        throw IncompleteEvaluation(
            "metric " + metric_names()[size_t(m)] + " has no values in bucket " +
            snr_buckets()[size_t(b)].label);
      cells.bucket[size_t(b)] =
          sum[size_t(m)][size_t(b)] / double(n[size_t(m)][size_t(b)]);
    }
    cells.avg = (cells.bucket[0] + cells.bucket[1] + cells.bucket[2]) / 3.0;
    cells.present = true;
  }
  return t;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

std::string default_system_name(SystemKind k) {
  switch (k) {
    case SystemKind::Model: return "Model";
    case SystemKind::Passthrough: return "Noisy";
    case SystemKind::Oracle: return "Oracle";
  }
  return "system";
}

}  // namespace

EvalResult evaluate(const std::vector<SynthReportRow> &records,
                    const EvalOptions &opt) {
  if (records.empty()) throw ConfigError("no records to evaluate");
  if (opt.jobs < 1) throw ConfigError("jobs must be >= 1");
  std::optional<nn::Model> model;
  if (opt.system == SystemKind::Model) {
    if (opt.checkpoint_path.empty())
      throw ConfigError("model evaluation needs a checkpoint path");
    model.emplace(nn::Model::load(opt.checkpoint_path));
  }

  std::vector<SynthReportRow> items = records;
  std::sort(items.begin(), items.end(),
            [](const SynthReportRow &a, const SynthReportRow &b) {
              return a.id < b.id;
            });

  const bool pesq_on = opt.with_pesq && metrics::pesq_provider_available();
  const bool keep_enhanced = !opt.enhanced_dir.empty();
  fs::path enh_dir;
  if (keep_enhanced) {
    enh_dir = opt.enhanced_dir;
    fs::create_directories(enh_dir);
  } else if (pesq_on) {
    enh_dir = fs::temp_directory_path() /
              ("sesw_eval_" + std::to_string(::getpid()));
    fs::create_directories(enh_dir);
  }

  struct Slot {
    std::optional<metrics::MetricRow> row;
    std::vector<EvalFailure> failures;
  };
  std::vector<Slot> slots(items.size());
  std::atomic<size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      const SynthReportRow &item = items[i];
      Slot &slot = slots[i];
      try {
        const Waveform noisy = read_wav(item.noisy_path);
        const Waveform target = read_wav(item.target_path);
        Waveform enhanced;
        switch (opt.system) {
          case SystemKind::Model: enhanced = model->enhance(noisy); break;
          case SystemKind::Passthrough: enhanced = noisy; break;
          case SystemKind::Oracle: enhanced = target; break;
        }

        metrics::MetricRow row;
        row.utterance_id = item.id;
        row.snr_db = item.snr_db;
        const double raw_sisdr = metrics::sisdr_db(enhanced, target);
        row.sisdr_db = metrics::clamp_sisdr_db(raw_sisdr);
        row.sisdr_clamped = row.sisdr_db != raw_sisdr;
        row.stoi = metrics::stoi(enhanced, target);

        if (!enh_dir.empty()) {
          const fs::path p = enh_dir / (item.id + "_enhanced.wav");
          // 16-bit PCM keeps external PESQ tools happy
          write_wav(p.string(), enhanced,
                    pesq_on ? WavEncoding::Pcm16 : WavEncoding::Float32);
          if (pesq_on) {
            try {
              const double pesq =
                  metrics::pesq_provider(item.target_path, p.string());
              const double llr_v = metrics::llr(enhanced, target);
              const double wss_v = metrics::wss(enhanced, target);
              const double seg_v = metrics::seg_snr(enhanced, target);
              const auto comp = metrics::composite(
                  pesq, llr_v, wss_v, seg_v, metrics::CompositeCoeffs::defaults());
              row.pesq = pesq;
              row.csig = comp.csig;
              row.cbak = comp.cbak;
              row.covl = comp.covl;
            } catch (const Error &e) {
              // soft: keep the row without pesq/composites
              slot.failures.push_back({item.id, std::string("pesq: ") + e.what()});
            }
          }
        }
        row.validate();
        slot.row = std::move(row);
      } catch (const std::exception &e) {
        slot.failures.push_back({item.id, e.what()});
      }
    }
  };

  const int jobs = std::min<int>(opt.jobs, int(items.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(size_t(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto &th : pool) th.join();
  }

  if (!keep_enhanced && !enh_dir.empty()) {
    std::error_code ec;
    fs::remove_all(enh_dir, ec);
  }

  EvalResult res;
  for (auto &slot : slots) {
    if (slot.row) res.rows.push_back(std::move(*slot.row));
    for (auto &f : slot.failures) res.failures.push_back(std::move(f));
  }
  const std::string name =
      opt.system_name.empty() ? default_system_name(opt.system) : opt.system_name;
  try {
    res.table = aggregate(res.rows, name);
  } catch (const Error &e) {
    res.table_error = e.what();
  }
  return res;
}

// ---------------------------------------------------------------------------
// table emission
// ---------------------------------------------------------------------------

namespace {

std::string cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

constexpr const char *kDash = "—";  // em dash for absent cells

std::vector<std::string> split_cells(const std::string &line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string &s, const std::string &what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw FormatError("bad numeric cell for " + what + ": '" + s + "'");
  }
}

}  // namespace

std::string emit_markdown(const BucketTable &t) {
  std::string head = "| System |";
  std::string rule = "|---|";
  for (const auto &name : metric_names()) {
    for (const auto &b : snr_buckets()) {
      head += " " + name + " " + b.label + " |";
      rule += "---|";
    }
    head += " " + name + " Avg |";
    rule += "---|";
  }
  std::string row = "| " + t.system + " |";
  for (int m = 0; m < kNumMetrics; ++m) {
    const auto &cells = t.metric[size_t(m)];
    for (int b = 0; b < kNumBuckets; ++b)
      row += " " + (cells.present ? cell(cells.bucket[size_t(b)]) : kDash) + " |";
    row += " " + (cells.present ? cell(cells.avg) : kDash) + " |";
  }
  return head + "\n" + rule + "\n" + row + "\n";
}

std::string emit_csv(const BucketTable &t) {
  std::string out = "system,metric";
  for (const auto &b : snr_buckets()) out += "," + b.label;
  out += ",Avg\n";
  out += t.system + ",count";
  for (int b = 0; b < kNumBuckets; ++b)
    out += "," + std::to_string(t.counts[size_t(b)]);
  out += ",\n";
  for (int m = 0; m < kNumMetrics; ++m) {
    const auto &cells = t.metric[size_t(m)];
    out += t.system + "," + metric_names()[size_t(m)];
    for (int b = 0; b < kNumBuckets; ++b)
      out += "," + (cells.present ? cell(cells.bucket[size_t(b)]) : std::string(kDash));
    out += "," + (cells.present ? cell(cells.avg) : std::string(kDash)) + "\n";
  }
  return out;
}

BucketTable parse_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("empty bucket table");
  {
    std::string want = "system,metric";
    for (const auto &b : snr_buckets()) want += "," + b.label;
    want += ",Avg";
    if (line != want)
      throw FormatError("bucket table header mismatch: '" + line + "'");
  }

  BucketTable t;
  bool have_counts = false;
  std::array<bool, kNumMetrics> seen{};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != size_t(2 + kNumBuckets + 1))
      throw FormatError("bucket table row has " + std::to_string(cells.size()) +
                        " cells: '" + line + "'");
    t.system = cells[0];
    const std::string &metric = cells[1];
    if (metric == "count") {
      for (int b = 0; b < kNumBuckets; ++b) {
        const double v = parse_cell(cells[size_t(2 + b)], "count");
        if (v < 1.0 || v != std::floor(v))
          throw FormatError("bucket counts must be positive integers");
        t.counts[size_t(b)] = int64_t(v);
      }
      have_counts = true;
      continue;
    }
    int m = -1;
    for (int i = 0; i < kNumMetrics; ++i)
      if (metric_names()[size_t(i)] == metric) m = i;
    if (m < 0) throw FormatError("unknown metric row '" + metric + "'");
    if (seen[size_t(m)]) throw FormatError("duplicate metric row '" + metric + "'");
    seen[size_t(m)] = true;
    auto &mc = t.metric[size_t(m)];
    if (cells[2] == kDash) {
      for (int b = 0; b < kNumBuckets; ++b)
        if (cells[size_t(2 + b)] != kDash)
          throw FormatError("metric " + metric + " mixes values and dashes");
      if (cells[size_t(2 + kNumBuckets)] != kDash)
        throw FormatError("metric " + metric + " mixes values and dashes");
      mc.present = false;
      continue;
    }
    for (int b = 0; b < kNumBuckets; ++b)
      mc.bucket[size_t(b)] = parse_cell(cells[size_t(2 + b)], metric);
    // Avg is derived data (the type invariant pins it to the bucket means),
    // so it is recomputed rather than trusted
    mc.avg = (mc.bucket[0] + mc.bucket[1] + mc.bucket[2]) / 3.0;
    mc.present = true;
  }
  if (!have_counts) throw FormatError("bucket table lacks a count row");
  for (int m = 0; m < kNumMetrics; ++m)
    if (!seen[size_t(m)])
      throw FormatError("bucket table lacks a row for " + metric_names()[size_t(m)]);
  return t;
}

}  // namespace sesw::bench
