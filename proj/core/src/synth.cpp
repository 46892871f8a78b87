// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "sesw/rng.hpp"
#include "sesw/wav.hpp"

namespace sesw {

using nlohmann::json;

Rir Rir::from_taps(std::vector<double> taps) {
  Rir r;
  r.taps = std::move(taps);
  if (r.taps.empty()) throw InvalidRir("empty impulse response");
  size_t best = 0;
  for (size_t i = 1; i < r.taps.size(); ++i)
    if (std::abs(r.taps[i]) > std::abs(r.taps[best])) best = i;
  r.direct_index = int64_t(best);
  r.validate();
  return r;
}

void Rir::validate() const {
  if (taps.empty()) throw InvalidRir("empty impulse response");
  if (direct_index < 0 || direct_index >= int64_t(taps.size()))
    throw InvalidRir("direct-path index out of range");
  for (double t : taps)
    if (!std::isfinite(t)) throw InvalidRir("non-finite tap");
}

std::pair<Rir, Rir> split_rir(const Rir &r, double early_ms) {
  r.validate();
  if (!(early_ms > 0.0)) throw InvalidRir("early_ms must be positive");

  Rir early = r;
  if (std::isfinite(early_ms)) {
    const int64_t cutoff =
        r.direct_index + int64_t(std::llround(early_ms * kSampleRate / 1000.0));
    for (int64_t i = cutoff; i < int64_t(early.taps.size()); ++i)
      early.taps[size_t(i)] = 0.0;
  }
  return {early, r};
}

std::pair<Waveform, double> mix_at_snr(const Waveform &speech,
                                       const Waveform &noise, double snr_db) {
  speech.validate();
  if (std::isinf(snr_db) && snr_db > 0) return {speech, 0.0};

  noise.validate();
  if (noise.size() < speech.size())
    throw InvalidSignal("noise shorter than speech; loop it first");

  const double p_speech = mean_power(speech);
  double p_noise = 0.0;
  for (size_t i = 0; i < speech.size(); ++i)
    p_noise += noise.samples[i] * noise.samples[i];
  p_noise /= double(speech.size());

  if (p_speech <= 0.0) throw DegenerateSignal("zero-power speech");
  if (p_noise <= 0.0) throw DegenerateSignal("zero-power noise");

  const double g = std::sqrt(p_speech / (p_noise * std::pow(10.0, snr_db / 10.0)));
  Waveform noisy = speech;
  for (size_t i = 0; i < speech.size(); ++i)
    noisy.samples[i] += g * noise.samples[i];
  return {std::move(noisy), g};
}

namespace {

// Loop (seeded circular offset) or crop (seeded offset) the noise to exactly
// n samples. The draw comes from the record's own generator so every record
// is reproducible in isolation.
Waveform fit_noise(const Waveform &noise, size_t n, Rng &rng) {
  Waveform out;
  out.sample_rate = noise.sample_rate;
  out.samples.resize(n);
  const size_t m = noise.size();
  if (m >= n) {
    const size_t offset = size_t(rng.below(uint64_t(m - n + 1)));
    std::copy(noise.samples.begin() + int64_t(offset),
              noise.samples.begin() + int64_t(offset + n), out.samples.begin());
  } else {
    const size_t offset = size_t(rng.below(uint64_t(m)));
    for (size_t i = 0; i < n; ++i) out.samples[i] = noise.samples[(offset + i) % m];
  }
  return out;
}

double component_snr_db(const Waveform &speech, const Waveform &scaled_noise) {
  double ps = 0.0, pn = 0.0;
  for (double s : speech.samples) ps += s * s;
  for (double s : scaled_noise.samples) pn += s * s;
  return 10.0 * std::log10(ps / pn);
}

}  // namespace

MixtureRecord synthesize(const ManifestRecord &rec, const SynthConfig &cfg) {
  Waveform clean = read_wav(rec.clean_path, cfg.resample_inputs);
  if (mean_power(clean) <= 0.0) throw DegenerateSignal(rec.id + ": silent clean clip");

  Waveform reverberant = clean;
  Waveform target = clean;
  if (rec.rir_path) {
    Waveform rir_wav = read_wav(*rec.rir_path, cfg.resample_inputs);
    Rir rir = Rir::from_taps(rir_wav.samples);
    auto [early, full] = split_rir(rir, cfg.early_ms);
    reverberant = convolve_same(clean, full.taps);
    target = convolve_same(clean, early.taps);
  }

  MixtureRecord out;
  out.id = rec.id;
  out.split = rec.split;
  out.snr_db = rec.snr_db;

  Rng rng(rec.seed);
  if (std::isinf(rec.snr_db) && rec.snr_db > 0) {
    out.noisy = reverberant;
    out.noise_gain = 0.0;
    out.achieved_snr_db = rec.snr_db;
  } else {
    Waveform noise = read_wav(rec.noise_path, cfg.resample_inputs);
    if (mean_power(noise) <= 0.0)
      throw DegenerateSignal(rec.id + ": silent noise clip");
    Waveform fitted = fit_noise(noise, reverberant.size(), rng);
    auto [noisy, gain] = mix_at_snr(reverberant, fitted, rec.snr_db);
    out.noisy = std::move(noisy);
    out.noise_gain = gain;
    Waveform scaled_noise = fitted;
    for (auto &s : scaled_noise.samples) s *= gain;
    out.achieved_snr_db = component_snr_db(reverberant, scaled_noise);
  }
  out.target = std::move(target);

  double peak = 0.0;
  for (double s : out.noisy.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0) {
    // scale noisy and target together so the component SNR is untouched
    out.post_scale = 1.0 / peak;
    for (auto &s : out.noisy.samples) s *= out.post_scale;
    for (auto &s : out.target.samples) s *= out.post_scale;
  }
  return out;
}

// ---- manifest ----

namespace {

ManifestRecord record_from_json(const json &j, size_t line_no) {
  ManifestRecord r;
  char fallback[32];
  std::snprintf(fallback, sizeof fallback, "%06zu", line_no);
  r.id = j.value("id", std::string(fallback));
  r.clean_path = j.at("clean_path").get<std::string>();
  r.noise_path = j.value("noise_path", std::string());
  if (j.contains("rir_path") && !j["rir_path"].is_null())
    r.rir_path = j["rir_path"].get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  if (j.at("snr_db").is_string()) {
    const auto s = j["snr_db"].get<std::string>();
    if (s == "inf" || s == "+inf")
      r.snr_db = std::numeric_limits<double>::infinity();
    else
      throw FormatError("bad snr_db string: " + s);
  } else {
    r.snr_db = j.at("snr_db").get<double>();
  }
  r.split = j.at("split").get<std::string>();
  return r;
}

json record_to_json(const ManifestRecord &r) {
  json j;
  j["id"] = r.id;
  j["clean_path"] = r.clean_path;
  j["noise_path"] = r.noise_path;
  if (r.rir_path)
    j["rir_path"] = *r.rir_path;
  else
    j["rir_path"] = nullptr;
  j["seed"] = r.seed;
  if (std::isinf(r.snr_db))
    j["snr_db"] = "inf";
  else
    j["snr_db"] = r.snr_db;
  j["split"] = r.split;
  return j;
}

}  // namespace

CorpusManifest CorpusManifest::parse(const std::string &jsonl_text) {
  CorpusManifest m;
  std::istringstream in(jsonl_text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      ++line_no;
      continue;
    }
    json j = json::parse(line);
    m.records.push_back(record_from_json(j, line_no));
    ++line_no;
  }
  m.validate();
  return m;
}

CorpusManifest CorpusManifest::load(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void CorpusManifest::save(const std::string &path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest " + path);
  for (const auto &r : records) out << record_to_json(r).dump() << "\n";
}

void CorpusManifest::validate() const {
  std::set<uint64_t> seeds;
  for (const auto &r : records) {
    if (r.split != "train" && r.split != "test")
      throw FormatError(r.id + ": split must be train or test");
    if (r.split == "train" && !(r.snr_db >= -15.0 && r.snr_db <= 0.0))
      throw FormatError(r.id + ": train snr_db outside [-15, 0]");
    if (r.split == "test" && !(r.snr_db >= -15.0 && r.snr_db <= 15.0))
      throw FormatError(r.id + ": test snr_db outside [-15, 15]");
    if (!seeds.insert(r.seed).second)
      throw FormatError(r.id + ": duplicate seed " + std::to_string(r.seed));
  }
}

// ---- report ----

std::string SynthReportRow::to_json() const {
  json j;
  j["id"] = id;
  j["noisy_path"] = noisy_path;
  j["target_path"] = target_path;
  j["snr_db"] = snr_db;
  j["achieved_snr_db"] = achieved_snr_db;
  j["noise_gain"] = noise_gain;
  j["post_scale"] = post_scale;
  j["split"] = split;
  return j.dump();
}

SynthReportRow SynthReportRow::from_json(const std::string &line) {
  json j = json::parse(line);
  SynthReportRow r;
  r.id = j.at("id").get<std::string>();
  r.noisy_path = j.at("noisy_path").get<std::string>();
  r.target_path = j.at("target_path").get<std::string>();
  r.snr_db = j.at("snr_db").get<double>();
  r.achieved_snr_db = j.at("achieved_snr_db").get<double>();
  r.noise_gain = j.at("noise_gain").get<double>();
  r.post_scale = j.value("post_scale", 1.0);
  r.split = j.value("split", std::string("test"));
  return r;
}

std::vector<SynthReportRow> load_synth_report(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report " + path);
  std::vector<SynthReportRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(SynthReportRow::from_json(line));
  }
  return rows;
}

std::vector<SynthReportRow> synthesize_manifest(const CorpusManifest &manifest,
                                                const std::string &out_dir,
                                                const SynthConfig &cfg,
                                                int jobs) {
  manifest.validate();
  std::filesystem::create_directories(out_dir);
  const size_t n = manifest.records.size();
  std::vector<SynthReportRow> rows(n);
  std::vector<char> ok(n, 0);

  auto work = [&](size_t i) {
    const ManifestRecord &rec = manifest.records[i];
    try {
      MixtureRecord mix = synthesize(rec, cfg);
      SynthReportRow row;
      row.id = rec.id;
      row.noisy_path = out_dir + "/" + rec.id + "_noisy.wav";
      row.target_path = out_dir + "/" + rec.id + "_target.wav";
      row.snr_db = rec.snr_db;
      row.achieved_snr_db = mix.achieved_snr_db;
      row.noise_gain = mix.noise_gain;
      row.post_scale = mix.post_scale;
      row.split = rec.split;
      write_wav(row.noisy_path, mix.noisy);
      write_wav(row.target_path, mix.target);
      rows[i] = std::move(row);
      ok[i] = 1;
    } catch (const DegenerateSignal &e) {
      std::fprintf(stderr, "synth: skipping %s: %s\n", rec.id.c_str(), e.what());
    }
  };

  if (jobs <= 1) {
    for (size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    const int count = std::min<int>(jobs, int(n ? n : 1));
    pool.reserve(size_t(count));
    for (int t = 0; t < count; ++t) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) work(i);
      });
    }
    for (auto &th : pool) th.join();
  }

  std::vector<SynthReportRow> kept;
  kept.reserve(n);
  for (size_t i = 0; i < n; ++i)
    if (ok[i]) kept.push_back(std::move(rows[i]));

  std::ofstream report(out_dir + "/synth_report.jsonl", std::ios::trunc);
  if (!report) throw FormatError("cannot write synth report in " + out_dir);
  for (const auto &r : kept) report << r.to_json() << "\n";
  return kept;
}

}  // namespace sesw
