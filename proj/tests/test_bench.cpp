// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "sesw/errors.hpp"
#include "sesw/metrics.hpp"
#include "sesw/rng.hpp"
#include "sesw/wav.hpp"

using namespace sesw;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// speech-shaped test tone: harmonic stack under a syllabic envelope
Waveform fake_speech(uint64_t seed, double seconds = 2.5) {
  Rng rng(seed);
  const double f1 = 220.0 + 120.0 * rng.uniform();
  const double f2 = 850.0 + 400.0 * rng.uniform();
  const double f3 = 2100.0 + 800.0 * rng.uniform();
  const double syllable = 2.5 + 2.0 * rng.uniform();
  const double ph1 = 2.0 * kPi * rng.uniform();
  const double ph2 = 2.0 * kPi * rng.uniform();
  const double ph3 = 2.0 * kPi * rng.uniform();
  const auto n = size_t(seconds * 16000.0);
  std::vector<double> x(n);
  double noise_state = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = double(i) / 16000.0;
    const double env = 0.2 + 0.8 * std::pow(std::abs(std::sin(kPi * syllable * t + ph1)), 1.5);
    const double vib = 3.0 * std::sin(2.0 * kPi * 1.7 * t);
    const double voiced = 0.5 * std::sin(2.0 * kPi * (f1 + vib) * t + ph1) +
                          0.3 * std::sin(2.0 * kPi * (f2 + 2.0 * vib) * t + ph2) +
                          0.15 * std::sin(2.0 * kPi * f3 * t + ph3);
    noise_state = 0.7 * noise_state + 0.3 * rng.normal();
    x[i] = 0.35 * env * voiced + 0.02 * noise_state + 0.008 * rng.normal();
  }
  return Waveform(std::move(x), 16000);
}

metrics::MetricRow make_row(const std::string &id, double snr, double pesq,
                            double stoi_v, double sisdr, double csig,
                            double cbak, double covl) {
  metrics::MetricRow r;
  r.utterance_id = id;
  r.snr_db = snr;
  r.pesq = pesq;
  r.stoi = stoi_v;
  r.sisdr_db = sisdr;
  r.csig = csig;
  r.cbak = cbak;
  r.covl = covl;
  return r;
}

// one row per bucket, loaded with the published Noisy-baseline bucket means
std::vector<metrics::MetricRow> noisy_baseline_rows() {
  return {
      make_row("u_low", -10.0, 1.122, 0.432, -12.849, 1.098, 1.036, 1.036),
      make_row("u_mid", 0.0, 1.052, 0.628, -2.540, 1.333, 1.240, 1.113),
      make_row("u_hi", 10.0, 1.142, 0.793, 5.131, 1.926, 1.724, 1.447),
  };
}

bool tables_equal(const bench::BucketTable &a, const bench::BucketTable &b) {
  if (a.system != b.system || a.counts != b.counts) return false;
  for (int m = 0; m < bench::kNumMetrics; ++m) {
    const auto &x = a.metric[size_t(m)];
    const auto &y = b.metric[size_t(m)];
    if (x.present != y.present) return false;
    if (!x.present) continue;
    if (x.avg != y.avg) return false;
    for (int c = 0; c < bench::kNumBuckets; ++c)
      if (x.bucket[size_t(c)] != y.bucket[size_t(c)]) return false;
  }
  return true;
}

struct EvalFixture {
  fs::path dir;
  std::vector<SynthReportRow> records;

  EvalFixture() {
    dir = fs::temp_directory_path() / "sesw_test_bench";
    fs::remove_all(dir);
    fs::create_directories(dir);
    // two utterances in each snr bucket
    const double snrs[6] = {-12.0, -7.0, -2.0, 3.0, 7.0, 12.0};
    for (int i = 0; i < 6; ++i) {
      const std::string id = "utt" + std::to_string(i);
      const Waveform target = fake_speech(100 + uint64_t(i));
      Rng rng(900 + uint64_t(i));
      std::vector<double> noise(target.samples.size());
      for (auto &v : noise) v = rng.normal();
      double ps = 0.0, pn = 0.0;
      for (size_t k = 0; k < noise.size(); ++k) {
        ps += target.samples[k] * target.samples[k];
        pn += noise[k] * noise[k];
      }
      const double gain = std::sqrt(ps / (pn * std::pow(10.0, snrs[i] / 10.0)));
      std::vector<double> mix(target.samples.size());
      for (size_t k = 0; k < mix.size(); ++k)
        mix[k] = target.samples[k] + gain * noise[k];
      SynthReportRow rec;
      rec.id = id;
      rec.snr_db = snrs[i];
      rec.split = "test";
      rec.target_path = (dir / (id + "_target.wav")).string();
      rec.noisy_path = (dir / (id + "_noisy.wav")).string();
      write_wav(rec.target_path, target);
      write_wav(rec.noisy_path, Waveform(std::move(mix), 16000));
      records.push_back(rec);
    }
  }
  ~EvalFixture() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

struct ProviderGuard {
  fs::path script;
  explicit ProviderGuard(const std::string &body) {
    script = fs::temp_directory_path() / "sesw_bench_pesq.sh";
    std::ofstream out(script);
    out << "#!/bin/sh\n" << body << "\n";
    out.close();
    fs::permissions(script, fs::perms::owner_all);
    setenv(metrics::kPesqProviderEnv, script.c_str(), 1);
  }
  ~ProviderGuard() {
    unsetenv(metrics::kPesqProviderEnv);
    std::error_code ec;
    fs::remove(script, ec);
  }
};

}  // namespace

TEST_CASE("snr buckets cover [-15, 15] with lo-inclusive edges") {
  CHECK(bench::bucket_index(-15.0) == 0);
  CHECK(bench::bucket_index(-10.0) == 0);
  CHECK(bench::bucket_index(-5.0) == 1);
  CHECK(bench::bucket_index(0.0) == 1);
  CHECK(bench::bucket_index(4.999) == 1);
  CHECK(bench::bucket_index(5.0) == 2);
  CHECK(bench::bucket_index(10.0) == 2);
  CHECK(bench::bucket_index(15.0) == 2);  // top edge belongs to the top bucket
  CHECK(bench::bucketize(-10.0).label == "-15~-5");
  CHECK(bench::bucketize(0.0).label == "-5~5");
  CHECK(bench::bucketize(15.0).label == "5~15");
  CHECK_THROWS_AS(bench::bucket_index(-15.0001), DomainError);
  CHECK_THROWS_AS(bench::bucket_index(15.0001), DomainError);
  CHECK_THROWS_AS(bench::bucket_index(std::nan("")), DomainError);
}

TEST_CASE("aggregate reproduces the published Noisy baseline averages") {
  const auto table = bench::aggregate(noisy_baseline_rows(), "Noisy");
  CHECK(table.system == "Noisy");
  CHECK(table.counts == std::array<int64_t, 3>{1, 1, 1});
  for (int m = 0; m < bench::kNumMetrics; ++m) CHECK(table.metric[size_t(m)].present);

  // bucket means are the row values themselves (one row per bucket)
  CHECK(table.metric[0].bucket[0] == doctest::Approx(1.122).epsilon(1e-12));
  CHECK(table.metric[2].bucket[1] == doctest::Approx(-2.540).epsilon(1e-12));

  // published Avg column, rounded to three decimals
  const double avg_paper[6] = {1.105, 0.617, -3.419, 1.452, 1.333, 1.199};
  for (int m = 0; m < bench::kNumMetrics; ++m) {
    const double got = table.metric[size_t(m)].avg;
    if (m == 1) {
      // the published STOI average is off by ~0.0007 from the mean of its
      // own bucket cells; hold it to the looser bound and pin the defect
      CHECK(std::abs(got - avg_paper[m]) <= 0.001);
      CHECK(std::abs(got - avg_paper[m]) > 0.0005);
    } else {
      CHECK(std::abs(got - avg_paper[m]) <= 0.0005);
    }
  }
  // exact arithmetic: Avg is the mean of bucket means
  for (int m = 0; m < bench::kNumMetrics; ++m) {
    const auto &c = table.metric[size_t(m)];
    CHECK(c.avg == (c.bucket[0] + c.bucket[1] + c.bucket[2]) / 3.0);
  }
}

TEST_CASE("aggregate is invariant to row order") {
  auto rows = noisy_baseline_rows();
  // add more rows so sums have multiple terms per bucket
  rows.push_back(make_row("a0", -14.0, 1.3, 0.4, -10.0, 1.2, 1.1, 1.0));
  rows.push_back(make_row("z9", 14.0, 1.9, 0.9, 9.0, 2.2, 1.9, 1.6));
  rows.push_back(make_row("m5", 2.0, 1.4, 0.7, 1.0, 1.5, 1.4, 1.2));
  const auto base = bench::aggregate(rows, "S");
  std::mt19937 g(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(rows.begin(), rows.end(), g);
    CHECK(tables_equal(bench::aggregate(rows, "S"), base));
  }
}

TEST_CASE("aggregate of constant rows yields that constant everywhere") {
  std::vector<metrics::MetricRow> rows;
  for (int i = 0; i < 9; ++i)
    rows.push_back(make_row("u" + std::to_string(i), -14.0 + 3.5 * i, 2.0, 0.5,
                            1.25, 3.0, 2.5, 2.75));
  const auto t = bench::aggregate(rows, "S");
  const double vals[6] = {2.0, 0.5, 1.25, 3.0, 2.5, 2.75};
  for (int m = 0; m < bench::kNumMetrics; ++m) {
    for (int b = 0; b < bench::kNumBuckets; ++b)
      CHECK(t.metric[size_t(m)].bucket[size_t(b)] == vals[m]);
    CHECK(t.metric[size_t(m)].avg == vals[m]);
  }
}

TEST_CASE("aggregate rejects missing coverage") {
  CHECK_THROWS_AS(bench::aggregate({}, "S"), IncompleteEvaluation);

  // no rows in the top bucket
  std::vector<metrics::MetricRow> rows = {
      make_row("a", -10.0, 1, 0.5, 0, 1, 1, 1),
      make_row("b", 0.0, 1, 0.5, 0, 1, 1, 1),
  };
  CHECK_THROWS_AS(bench::aggregate(rows, "S"), IncompleteEvaluation);

  // optional metric present in some buckets but not all
  rows = noisy_baseline_rows();
  rows[2].pesq.reset();
  rows[2].csig.reset();
  rows[2].cbak.reset();
  rows[2].covl.reset();
  CHECK_THROWS_AS(bench::aggregate(rows, "S"), IncompleteEvaluation);
}

TEST_CASE("optional metrics absent everywhere produce dash columns") {
  auto rows = noisy_baseline_rows();
  for (auto &r : rows) {
    r.pesq.reset();
    r.csig.reset();
    r.cbak.reset();
    r.covl.reset();
  }
  const auto t = bench::aggregate(rows, "NoPesq");
  CHECK_FALSE(t.metric[0].present);  // PESQ
  CHECK(t.metric[1].present);        // STOI
  CHECK(t.metric[2].present);        // SiSDR
  CHECK_FALSE(t.metric[3].present);
  CHECK_FALSE(t.metric[4].present);
  CHECK_FALSE(t.metric[5].present);
  const std::string md = bench::emit_markdown(t);
  CHECK(md.find("—") != std::string::npos);
  const std::string csv = bench::emit_csv(t);
  CHECK(csv.find("NoPesq,PESQ,—,—,—,—") != std::string::npos);
  // dash columns survive a parse round trip
  const auto back = bench::parse_csv(csv);
  CHECK(tables_equal(back, t));
}

TEST_CASE("markdown table matches the published layout") {
  const auto t = bench::aggregate(noisy_baseline_rows(), "Noisy");
  const std::string md = bench::emit_markdown(t);
  // header, rule, one data row
  CHECK(std::count(md.begin(), md.end(), '\n') == 3);
  CHECK(md.find("| System | PESQ -15~-5 | PESQ -5~5 | PESQ 5~15 | PESQ Avg | STOI -15~-5 |") == 0);
  CHECK(md.find("| Noisy | 1.122 | 1.052 | 1.142 | 1.105 | 0.432 | 0.628 | 0.793 | 0.618 |") != std::string::npos);
  CHECK(md.find("| -12.849 | -2.540 | 5.131 | -3.419 |") != std::string::npos);
  CHECK(md.find("| 1.036 | 1.113 | 1.447 | 1.199 |\n") != std::string::npos);
}

TEST_CASE("csv emit and parse invert each other") {
  const auto t = bench::aggregate(noisy_baseline_rows(), "Noisy");
  const std::string csv = bench::emit_csv(t);
  CHECK(csv.find("system,metric,-15~-5,-5~5,5~15,Avg\n") == 0);
  CHECK(csv.find("Noisy,count,1,1,1,") != std::string::npos);
  CHECK(csv.find("Noisy,SiSDR (dB),-12.849,-2.540,5.131,-3.419") != std::string::npos);

  const auto parsed = bench::parse_csv(csv);
  CHECK(parsed.system == "Noisy");
  CHECK(parsed.counts == t.counts);
  // bucket cells round-trip exactly because the fixture values have three decimals
  for (int m = 0; m < bench::kNumMetrics; ++m)
    for (int b = 0; b < bench::kNumBuckets; ++b)
      CHECK(parsed.metric[size_t(m)].bucket[size_t(b)] ==
            doctest::Approx(t.metric[size_t(m)].bucket[size_t(b)]).epsilon(1e-12));
  // Avg is recomputed from the parsed bucket means
  for (int m = 0; m < bench::kNumMetrics; ++m) {
    const auto &c = parsed.metric[size_t(m)];
    CHECK(c.avg == (c.bucket[0] + c.bucket[1] + c.bucket[2]) / 3.0);
  }
  // emit∘parse reaches a fixed point after one round
  const std::string csv2 = bench::emit_csv(parsed);
  CHECK(csv2 == csv);
  CHECK(bench::emit_csv(bench::parse_csv(csv2)) == csv2);
}

TEST_CASE("parse_csv rejects malformed tables") {
  const auto t = bench::aggregate(noisy_baseline_rows(), "Noisy");
  const std::string csv = bench::emit_csv(t);
  CHECK_THROWS_AS(bench::parse_csv(""), FormatError);
  CHECK_THROWS_AS(bench::parse_csv("nonsense\n"), FormatError);
  // header with renamed bucket
  std::string bad = csv;
  bad.replace(bad.find("-15~-5"), 6, "-15~-6");
  CHECK_THROWS_AS(bench::parse_csv(bad), FormatError);
  // drop the count row
  bad = csv;
  const auto pos = bad.find("Noisy,count");
  bad.erase(pos, bad.find('\n', pos) - pos + 1);
  CHECK_THROWS_AS(bench::parse_csv(bad), FormatError);
  // drop a metric row
  bad = csv;
  const auto cpos = bad.find("Noisy,CSIG");
  bad.erase(cpos, bad.find('\n', cpos) - cpos + 1);
  CHECK_THROWS_AS(bench::parse_csv(bad), FormatError);
  // corrupt a numeric cell
  bad = csv;
  bad.replace(bad.find("1.122"), 5, "1.1x2");
  CHECK_THROWS_AS(bench::parse_csv(bad), FormatError);
  // mixed dash and value in one metric row
  bad = csv;
  bad.replace(bad.find("1.122"), 5, "—");
  CHECK_THROWS_AS(bench::parse_csv(bad), FormatError);
}

TEST_CASE("evaluate passthrough matches direct metric computation") {
  EvalFixture fx;
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  opt.with_pesq = false;
  const auto res = bench::evaluate(fx.records, opt);
  REQUIRE(res.rows.size() == 6);
  CHECK(res.failures.empty());
  REQUIRE(res.table.has_value());
  CHECK(res.table->system == "Noisy");
  CHECK(res.table->counts == std::array<int64_t, 3>{2, 2, 2});

  for (const auto &row : res.rows) {
    const auto it = std::find_if(fx.records.begin(), fx.records.end(),
                                 [&](const SynthReportRow &r) { return r.id == row.utterance_id; });
    REQUIRE(it != fx.records.end());
    const Waveform noisy = read_wav(it->noisy_path);
    const Waveform target = read_wav(it->target_path);
    CHECK(row.snr_db == it->snr_db);
    CHECK(row.stoi == metrics::stoi(noisy, target));
    CHECK(row.sisdr_db == metrics::clamp_sisdr_db(metrics::sisdr_db(noisy, target)));
    CHECK_FALSE(row.pesq.has_value());
    CHECK_FALSE(row.csig.has_value());
  }
  // low-snr mixtures carry low si-sdr; scores ascend across buckets
  CHECK(res.table->metric[2].bucket[0] < res.table->metric[2].bucket[1]);
  CHECK(res.table->metric[2].bucket[1] < res.table->metric[2].bucket[2]);
}

TEST_CASE("evaluate oracle saturates the scores") {
  EvalFixture fx;
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Oracle;
  opt.with_pesq = false;
  const auto res = bench::evaluate(fx.records, opt);
  REQUIRE(res.rows.size() == 6);
  CHECK(res.table.has_value());
  CHECK(res.table->system == "Oracle");
  for (const auto &row : res.rows) {
    CHECK(row.sisdr_db == metrics::kSisdrClampDb);
    CHECK(row.sisdr_clamped);
    CHECK(row.stoi >= 0.999);
  }
}

TEST_CASE("evaluate is deterministic across worker counts") {
  EvalFixture fx;
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  opt.with_pesq = false;
  const auto one = bench::evaluate(fx.records, opt);
  opt.jobs = 3;
  const auto three = bench::evaluate(fx.records, opt);
  REQUIRE(one.rows.size() == three.rows.size());
  for (size_t i = 0; i < one.rows.size(); ++i) {
    CHECK(one.rows[i].utterance_id == three.rows[i].utterance_id);
    CHECK(one.rows[i].stoi == three.rows[i].stoi);
    CHECK(one.rows[i].sisdr_db == three.rows[i].sisdr_db);
  }
  REQUIRE(three.table.has_value());
  CHECK(tables_equal(*one.table, *three.table));
}

TEST_CASE("evaluate records per-utterance failures without aborting") {
  EvalFixture fx;
  auto records = fx.records;
  records[1].noisy_path = (fx.dir / "missing.wav").string();
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  opt.with_pesq = false;
  const auto res = bench::evaluate(records, opt);
  CHECK(res.rows.size() == 5);
  REQUIRE(res.failures.size() == 1);
  CHECK(res.failures[0].utterance_id == records[1].id);
  // the surviving rows still cover every bucket, so the table aggregates
  CHECK(res.table.has_value());

  // knock out both low-bucket utterances: rows remain, the table does not
  records = fx.records;
  records[0].noisy_path = (fx.dir / "gone0.wav").string();
  records[1].noisy_path = (fx.dir / "gone1.wav").string();
  const auto res2 = bench::evaluate(records, opt);
  CHECK(res2.rows.size() == 4);
  CHECK(res2.failures.size() == 2);
  CHECK_FALSE(res2.table.has_value());
  CHECK(res2.table_error.find("-15~-5") != std::string::npos);
}

TEST_CASE("evaluate with a pesq provider fills the full row") {
  EvalFixture fx;
  ProviderGuard guard("echo 'MOS-LQO 2.500'");
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  opt.enhanced_dir = (fx.dir / "enhanced").string();
  const auto res = bench::evaluate(fx.records, opt);
  REQUIRE(res.rows.size() == 6);
  CHECK(res.failures.empty());
  for (const auto &row : res.rows) {
    REQUIRE(row.pesq.has_value());
    CHECK(*row.pesq == 2.5);
    CHECK(row.csig.has_value());
    CHECK(row.cbak.has_value());
    CHECK(row.covl.has_value());
    CHECK(fs::exists(fs::path(opt.enhanced_dir) / (row.utterance_id + "_enhanced.wav")));
  }
  REQUIRE(res.table.has_value());
  for (int m = 0; m < bench::kNumMetrics; ++m) CHECK(res.table->metric[size_t(m)].present);
  CHECK(res.table->metric[0].avg == 2.5);
}

TEST_CASE("a failing pesq provider degrades rows instead of dropping them") {
  EvalFixture fx;
  ProviderGuard guard("echo 'license check failed' >&2; exit 3");
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  const auto res = bench::evaluate(fx.records, opt);
  REQUIRE(res.rows.size() == 6);
  CHECK(res.failures.size() == 6);
  for (const auto &f : res.failures)
    CHECK(f.error.find("license check failed") != std::string::npos);
  for (const auto &row : res.rows) {
    CHECK_FALSE(row.pesq.has_value());
    CHECK(row.stoi > 0.0);
  }
  // PESQ and composite columns go to dashes; the table still aggregates
  REQUIRE(res.table.has_value());
  CHECK_FALSE(res.table->metric[0].present);
  CHECK(res.table->metric[1].present);
}

TEST_CASE("evaluate without pesq leaves no enhanced directory behind") {
  EvalFixture fx;
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  opt.with_pesq = false;
  (void)bench::evaluate(fx.records, opt);
  const fs::path temp_enh =
      fs::temp_directory_path() / ("sesw_eval_" + std::to_string(::getpid()));
  CHECK_FALSE(fs::exists(temp_enh));
}

TEST_CASE("evaluate validates its configuration") {
  EvalFixture fx;
  bench::EvalOptions opt;
  opt.system = bench::SystemKind::Passthrough;
  CHECK_THROWS_AS(bench::evaluate({}, opt), ConfigError);
  opt.jobs = 0;
  CHECK_THROWS_AS(bench::evaluate(fx.records, opt), ConfigError);
  opt.jobs = 1;
  opt.system = bench::SystemKind::Model;
  CHECK_THROWS_AS(bench::evaluate(fx.records, opt), ConfigError);
}
