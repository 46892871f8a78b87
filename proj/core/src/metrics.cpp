// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "sesw/errors.hpp"
#include "sesw/fft.hpp"
#include "sesw/wav.hpp"

namespace sesw::metrics {

namespace {

constexpr double kPi = 3.14159265358979323846;

// 30 ms analysis frames at a quarter-frame hop, shared by the composite
// decomposition measures.
constexpr int kFrameLen = 480;   // 30 ms at 16 kHz
constexpr int kFrameHop = 120;   // 7.5 ms

// Hanning window without zero endpoints: w[k] = 0.5(1 - cos(2pi(k+1)/(N+1))).
std::vector<double> hanning(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k)
    w[size_t(k)] = 0.5 * (1.0 - std::cos(2.0 * kPi * double(k + 1) / double(n + 1)));
  return w;
}

void require_pair(const Waveform &deg, const Waveform &ref) {
  if (deg.size() != ref.size())
    throw ShapeError("signal lengths differ: " + std::to_string(deg.size()) +
                     " vs " + std::to_string(ref.size()));
  if (ref.empty()) throw InvalidSignal("empty signals");
}

double total_energy(const Waveform &x) {
  double e = 0.0;
  for (double s : x.samples) e += s * s;
  return e;
}

int frame_count(size_t n) {
  return n >= size_t(kFrameLen) ? int((n - size_t(kFrameLen)) / size_t(kFrameHop)) + 1 : 0;
}

/// Mean of the smallest round(95%) values; used by llr and wss so isolated
/// pathological frames cannot dominate the utterance score.
double trimmed_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t keep = size_t(std::llround(double(v.size()) * 0.95));
  keep = std::max<size_t>(1, std::min(keep, v.size()));
  double acc = 0.0;
  for (size_t i = 0; i < keep; ++i) acc += v[i];
  return acc / double(keep);
}

}  // namespace

// ---------------------------------------------------------------------------
// SiSDR
// ---------------------------------------------------------------------------

double sisdr_db(const Waveform &est, const Waveform &ref) {
  require_pair(est, ref);
  double dot = 0.0, ref_energy = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    ref_energy += ref.samples[i] * ref.samples[i];
  }
  if (ref_energy == 0.0) throw DegenerateSignal("reference signal is silent");
  const double a = dot / ref_energy;
  double sig = 0.0, err = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double s = a * ref.samples[i];
    const double e = est.samples[i] - s;
    sig += s * s;
    err += e * e;
  }
  if (sig == 0.0) return -std::numeric_limits<double>::infinity();
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

double clamp_sisdr_db(double v) {
  if (std::isnan(v)) throw DomainError("SiSDR is NaN");
  return std::clamp(v, -kSisdrClampDb, kSisdrClampDb);
}

// ---------------------------------------------------------------------------
// LLR
// ---------------------------------------------------------------------------

namespace {

/// Autocorrelation-method LPC via Levinson-Durbin. Returns false on a silent
/// or numerically singular frame. a[0] == 1 (prediction-error filter), r has
/// order+1 lags.
bool lpc_fit(const double *x, int n, int order, std::vector<double> &a,
             std::vector<double> &r) {
  r.assign(size_t(order) + 1, 0.0);
  for (int k = 0; k <= order; ++k) {
    double s = 0.0;
    for (int i = k; i < n; ++i) s += x[i] * x[i - k];
    r[size_t(k)] = s;
  }
  if (!(r[0] > 0.0)) return false;
  a.assign(size_t(order) + 1, 0.0);
  a[0] = 1.0;
  double err = r[0];
  std::vector<double> prev(size_t(order) + 1);
  for (int m = 1; m <= order; ++m) {
    double acc = r[size_t(m)];
    for (int i = 1; i < m; ++i) acc += a[size_t(i)] * r[size_t(m - i)];
    const double k = -acc / err;
    prev = a;
    for (int i = 1; i < m; ++i)
      a[size_t(i)] = prev[size_t(i)] + k * prev[size_t(m - i)];
    a[size_t(m)] = k;
    err *= (1.0 - k * k);
    if (!(err > 0.0)) return false;
  }
  return true;
}

/// a' R a with R the Toeplitz autocorrelation matrix of lags r.
double lpc_quadratic(const std::vector<double> &a, const std::vector<double> &r) {
  const int p = int(a.size()) - 1;
  double acc = 0.0;
  for (int i = 0; i <= p; ++i)
    for (int j = 0; j <= p; ++j)
      acc += a[size_t(i)] * a[size_t(j)] * r[size_t(std::abs(i - j))];
  return acc;
}

}  // namespace

double llr(const Waveform &deg, const Waveform &ref) {
  require_pair(deg, ref);
  if (total_energy(ref) == 0.0) throw DegenerateSignal("reference signal is silent");
  constexpr int kOrder = 10;
  const int frames = frame_count(ref.size());
  if (frames == 0) throw InvalidSignal("shorter than one 30 ms analysis frame");
  static const std::vector<double> window = hanning(kFrameLen);

  std::vector<double> dist;
  std::vector<double> fr(static_cast<size_t>(kFrameLen));
  std::vector<double> fd(static_cast<size_t>(kFrameLen));
  std::vector<double> a_ref, r_ref, a_deg, r_deg;
  for (int f = 0; f < frames; ++f) {
    const size_t s = size_t(f) * size_t(kFrameHop);
    for (int i = 0; i < kFrameLen; ++i) {
      fr[size_t(i)] = ref.samples[s + size_t(i)] * window[size_t(i)];
      fd[size_t(i)] = deg.samples[s + size_t(i)] * window[size_t(i)];
    }
    if (!lpc_fit(fr.data(), kFrameLen, kOrder, a_ref, r_ref)) continue;
    if (!lpc_fit(fd.data(), kFrameLen, kOrder, a_deg, r_deg)) continue;
    const double num = lpc_quadratic(a_deg, r_ref);
    const double den = lpc_quadratic(a_ref, r_ref);
    if (!(num > 0.0) || !(den > 0.0)) continue;
    // the reference LPC minimizes the quadratic form, so the ratio is >= 1
    // up to rounding; the floor absorbs the rounding side
    dist.push_back(std::max(0.0, std::log(num / den)));
  }
  if (dist.empty()) throw DegenerateSignal("no analyzable speech frames");
  return trimmed_mean(std::move(dist));
}

// ---------------------------------------------------------------------------
// WSS
// ---------------------------------------------------------------------------

namespace {

constexpr int kNumCrit = 25;
constexpr int kWssFft = 1024;  // next power of two above twice the frame
constexpr int kWssBins = kWssFft / 2;
constexpr double kKmax = 20.0;    // global-peak weighting constant
constexpr double kKlocmax = 1.0;  // nearest-peak weighting constant

constexpr std::array<double, kNumCrit> kCritCenter = {
    50.0,     120.0,    190.0,    260.0,   330.0,   400.0,   470.0,
    540.0,    617.372,  703.378,  798.717, 904.128, 1020.38, 1148.30,
    1288.72,  1442.54,  1610.70,  1794.16, 1993.93, 2211.08, 2446.71,
    2701.97,  2978.04,  3276.17,  3597.63};
constexpr std::array<double, kNumCrit> kCritWidth = {
    70.0,     70.0,     70.0,     70.0,    70.0,    70.0,    70.0,
    77.3724,  86.0056,  95.3398,  105.411, 116.256, 127.914, 140.423,
    153.823,  168.154,  183.457,  199.776, 217.153, 235.631, 255.255,
    276.072,  298.126,  321.465,  346.136};

/// Gaussian critical-band filters over the first kWssBins FFT bins,
/// area-normalized against the narrowest band and floored 30 dB down.
const std::vector<std::vector<double>> &crit_filters() {
  static const std::vector<std::vector<double>> filt = [] {
    const double max_freq = double(kSampleRate) / 2.0;
    const double min_factor = std::exp(-30.0 / (2.0 * 2.303));
    std::vector<std::vector<double>> f(kNumCrit, std::vector<double>(kWssBins));
    for (int b = 0; b < kNumCrit; ++b) {
      const double cf = kCritCenter[size_t(b)] / max_freq * kWssBins;
      const double bw = kCritWidth[size_t(b)] / max_freq * kWssBins;
      const double norm = std::log(kCritWidth[0]) - std::log(kCritWidth[size_t(b)]);
      for (int j = 0; j < kWssBins; ++j) {
        const double u = (double(j) - std::floor(cf)) / bw;
        const double v = std::exp(-11.0 * u * u + norm);
        f[size_t(b)][size_t(j)] = v > min_factor ? v : 0.0;
      }
    }
    return f;
  }();
  return filt;
}

/// Critical-band energies in dB for one windowed frame.
std::array<double, kNumCrit> band_energies_db(const std::vector<double> &frame) {
  std::vector<fft::cd> buf(static_cast<size_t>(kWssFft));
  for (int i = 0; i < kFrameLen; ++i) buf[size_t(i)] = frame[size_t(i)];
  fft::transform(buf, false);
  std::array<double, size_t(kWssBins)> power;
  for (int j = 0; j < kWssBins; ++j) power[size_t(j)] = std::norm(buf[size_t(j)]);
  std::array<double, kNumCrit> e{};
  const auto &filt = crit_filters();
  for (int b = 0; b < kNumCrit; ++b) {
    double acc = 0.0;
    for (int j = 0; j < kWssBins; ++j) acc += power[size_t(j)] * filt[size_t(b)][size_t(j)];
    e[size_t(b)] = 10.0 * std::log10(std::max(acc, 1e-10));
  }
  return e;
}

/// Klatt nearest-peak location per band: walk uphill to the closest local
/// maximum of the band-energy contour.
std::array<double, kNumCrit - 1> nearest_peaks(
    const std::array<double, kNumCrit> &e,
    const std::array<double, kNumCrit - 1> &slope) {
  std::array<double, kNumCrit - 1> peak;
  for (int i = 0; i < kNumCrit - 1; ++i) {
    if (slope[size_t(i)] > 0.0) {
      int n = i;
      while (n < kNumCrit - 1 && slope[size_t(n)] > 0.0) ++n;
      peak[size_t(i)] = e[size_t(n)];
    } else {
      int n = i;
      while (n > 0 && slope[size_t(n)] <= 0.0) --n;
      peak[size_t(i)] = slope[size_t(n)] <= 0.0 ? e[0] : e[size_t(n + 1)];
    }
  }
  return peak;
}

}  // namespace

double wss(const Waveform &deg, const Waveform &ref) {
  require_pair(deg, ref);
  if (total_energy(ref) == 0.0) throw DegenerateSignal("reference signal is silent");
  const int frames = frame_count(ref.size());
  if (frames == 0) throw InvalidSignal("shorter than one 30 ms analysis frame");
  static const std::vector<double> window = hanning(kFrameLen);

  std::vector<double> dist;
  dist.reserve(size_t(frames));
  std::vector<double> fr(static_cast<size_t>(kFrameLen));
  std::vector<double> fd(static_cast<size_t>(kFrameLen));
  for (int f = 0; f < frames; ++f) {
    const size_t s = size_t(f) * size_t(kFrameHop);
    for (int i = 0; i < kFrameLen; ++i) {
      fr[size_t(i)] = ref.samples[s + size_t(i)] * window[size_t(i)];
      fd[size_t(i)] = deg.samples[s + size_t(i)] * window[size_t(i)];
    }
    const auto er = band_energies_db(fr);
    const auto ed = band_energies_db(fd);

    std::array<double, kNumCrit - 1> sr, sd;
    for (int i = 0; i < kNumCrit - 1; ++i) {
      sr[size_t(i)] = er[size_t(i + 1)] - er[size_t(i)];
      sd[size_t(i)] = ed[size_t(i + 1)] - ed[size_t(i)];
    }
    const auto pr = nearest_peaks(er, sr);
    const auto pd = nearest_peaks(ed, sd);
    const double max_r = *std::max_element(er.begin(), er.end());
    const double max_d = *std::max_element(ed.begin(), ed.end());

    double num = 0.0, den = 0.0;
    for (int i = 0; i < kNumCrit - 1; ++i) {
      const double wr = (kKmax / (kKmax + max_r - er[size_t(i)])) *
                        (kKlocmax / (kKlocmax + pr[size_t(i)] - er[size_t(i)]));
      const double wd = (kKmax / (kKmax + max_d - ed[size_t(i)])) *
                        (kKlocmax / (kKlocmax + pd[size_t(i)] - ed[size_t(i)]));
      const double w = 0.5 * (wr + wd);
      const double diff = sr[size_t(i)] - sd[size_t(i)];
      num += w * diff * diff;
      den += w;
    }
    dist.push_back(num / den);
  }
  return trimmed_mean(std::move(dist));
}

// ---------------------------------------------------------------------------
// Segmental SNR
// ---------------------------------------------------------------------------

double seg_snr(const Waveform &deg, const Waveform &ref) {
  require_pair(deg, ref);
  if (total_energy(ref) == 0.0) throw DegenerateSignal("reference signal is silent");
  const int frames = frame_count(ref.size());
  if (frames == 0) throw InvalidSignal("shorter than one 30 ms analysis frame");

  double acc = 0.0;
  for (int f = 0; f < frames; ++f) {
    const size_t s = size_t(f) * size_t(kFrameHop);
    double sig = 0.0, err = 0.0;
    for (int i = 0; i < kFrameLen; ++i) {
      const double r = ref.samples[s + size_t(i)];
      const double d = deg.samples[s + size_t(i)] - r;
      sig += r * r;
      err += d * d;
    }
    double snr;
    if (err == 0.0) {
      snr = 35.0;  // identical frame sits at the ceiling exactly
    } else if (sig == 0.0) {
      snr = -10.0;
    } else {
      snr = std::clamp(10.0 * std::log10(sig / err), -10.0, 35.0);
    }
    acc += snr;
  }
  return acc / double(frames);
}

// ---------------------------------------------------------------------------
// Composite MOS predictors
// ---------------------------------------------------------------------------

namespace {

void check_term(const CompositeTerm &t, const char *name) {
  for (double v : {t.intercept, t.pesq, t.llr, t.wss, t.segsnr})
    if (!std::isfinite(v))
      throw ConfigError(std::string("non-finite coefficient in ") + name);
}

CompositeTerm term_from_json(const nlohmann::json &j, const char *name) {
  CompositeTerm t;
  if (!j.is_object()) throw FormatError(std::string(name) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string &k = it.key();
    if (!it.value().is_number())
      throw FormatError("coefficient " + k + " in " + name + " is not a number");
    const double v = it.value().get<double>();
    if (k == "intercept") t.intercept = v;
    else if (k == "pesq") t.pesq = v;
    else if (k == "llr") t.llr = v;
    else if (k == "wss") t.wss = v;
    else if (k == "segsnr") t.segsnr = v;
    else throw FormatError("unknown coefficient '" + k + "' in " + name);
  }
  return t;
}

}  // namespace

CompositeCoeffs CompositeCoeffs::defaults() {
  CompositeCoeffs c;
  c.csig = {3.093, 0.603, -1.029, -0.009, 0.0};
  c.cbak = {1.634, 0.478, 0.0, -0.007, 0.063};
  c.covl = {1.594, 0.805, -0.512, -0.007, 0.0};
  c.clamp_lo = 1.0;
  c.clamp_hi = 5.0;
  c.source = "Hu & Loizou (2008) regression set";
  return c;
}

CompositeCoeffs CompositeCoeffs::load(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open coefficient file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("malformed coefficient file " + path + ": " + e.what());
  }
  CompositeCoeffs c;
  if (!j.contains("csig") || !j.contains("cbak") || !j.contains("covl"))
    throw FormatError("coefficient file must define csig, cbak and covl");
  c.csig = term_from_json(j.at("csig"), "csig");
  c.cbak = term_from_json(j.at("cbak"), "cbak");
  c.covl = term_from_json(j.at("covl"), "covl");
  if (j.contains("clamp")) {
    const auto &cl = j.at("clamp");
    if (!cl.is_array() || cl.size() != 2 || !cl[0].is_number() || !cl[1].is_number())
      throw FormatError("clamp must be a [lo, hi] number pair");
    c.clamp_lo = cl[0].get<double>();
    c.clamp_hi = cl[1].get<double>();
  }
  if (j.contains("source") && j.at("source").is_string())
    c.source = j.at("source").get<std::string>();
  c.validate();
  return c;
}

void CompositeCoeffs::validate() const {
  check_term(csig, "csig");
  check_term(cbak, "cbak");
  check_term(covl, "covl");
  if (!std::isfinite(clamp_lo) || !std::isfinite(clamp_hi) || clamp_lo >= clamp_hi)
    throw ConfigError("invalid clamp range");
}

CompositeScores composite(double pesq, double llr_v, double wss_v,
                          double seg_snr_db, const CompositeCoeffs &coeffs) {
  for (double v : {pesq, llr_v, wss_v, seg_snr_db})
    if (!std::isfinite(v)) throw DomainError("composite inputs must be finite");
  coeffs.validate();
  auto apply = [&](const CompositeTerm &t) {
    const double raw = t.intercept + t.pesq * pesq + t.llr * llr_v +
                       t.wss * wss_v + t.segsnr * seg_snr_db;
    return std::clamp(raw, coeffs.clamp_lo, coeffs.clamp_hi);
  };
  return {apply(coeffs.csig), apply(coeffs.cbak), apply(coeffs.covl)};
}

// ---------------------------------------------------------------------------
// PESQ provider
// ---------------------------------------------------------------------------

namespace {

std::string shell_quote(const std::string &s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

std::string read_text_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

bool pesq_provider_available() {
  const char *v = std::getenv(kPesqProviderEnv);
  return v != nullptr && *v != '\0';
}

double pesq_provider(const std::string &ref_path, const std::string &deg_path) {
  const char *provider = std::getenv(kPesqProviderEnv);
  if (provider == nullptr || *provider == '\0')
    throw MetricUnavailable(std::string("no PESQ provider configured (set ") +
                            kPesqProviderEnv + ")");
  // validate rate/format before spawning anything; throws FormatError
  (void)read_wav(ref_path);
  (void)read_wav(deg_path);

  const auto err_file = std::filesystem::temp_directory_path() /
                        ("sesw_pesq_" + std::to_string(::getpid()) + "_" +
                         std::to_string(uintptr_t(&ref_path)) + ".err");
  const std::string cmd = shell_quote(provider) + " " + shell_quote(ref_path) +
                          " " + shell_quote(deg_path) + " 2>" +
                          shell_quote(err_file.string());
  FILE *pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw ProviderError("failed to launch PESQ provider");
  std::string out;
  char buf[4096];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, got);
  const int status = ::pclose(pipe);
  std::string errs = read_text_file(err_file);
  std::error_code ec;
  std::filesystem::remove(err_file, ec);

  if (status != 0)
    throw ProviderError("PESQ provider exited with status " +
                        std::to_string(status) + "; stderr: " + errs);

  // take the last stdout token that parses fully as a number
  std::istringstream toks(out);
  std::string tok;
  bool found = false;
  double score = 0.0;
  while (toks >> tok) {
    try {
      size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used == tok.size() && std::isfinite(v)) {
        score = v;
        found = true;
      }
    } catch (const std::exception &) {
    }
  }
  if (!found)
    throw ProviderError("PESQ provider printed no parsable score; stdout: " +
                        out + "; stderr: " + errs);
  if (score < -0.5 || score > 4.5)
    throw ProviderError("PESQ provider score " + std::to_string(score) +
                        " outside [-0.5, 4.5]");
  return score;
}

// ---------------------------------------------------------------------------
// Metric rows
// ---------------------------------------------------------------------------

namespace {

void put_opt(nlohmann::json &j, const char *key, const std::optional<double> &v) {
  if (v.has_value()) j[key] = *v;
  else j[key] = nullptr;
}

std::optional<double> get_opt(const nlohmann::json &j, const char *key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) throw FormatError(std::string(key) + " is not a number");
  return j.at(key).get<double>();
}

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void MetricRow::validate() const {
  if (utterance_id.empty()) throw DomainError("utterance_id is empty");
  if (!std::isfinite(snr_db) || !std::isfinite(stoi) || !std::isfinite(sisdr_db))
    throw DomainError("non-finite metric value in row " + utterance_id);
  if (stoi < -1.0 - 1e-9 || stoi > 1.0 + 1e-9)
    throw DomainError("stoi out of range in row " + utterance_id);
  if (pesq && (*pesq < -0.5 || *pesq > 4.5))
    throw DomainError("pesq out of range in row " + utterance_id);
  for (const auto *c : {&csig, &cbak, &covl})
    if (*c && (!std::isfinite(**c) || **c < 1.0 || **c > 5.0))
      throw DomainError("composite score out of range in row " + utterance_id);
}

std::string MetricRow::to_json() const {
  nlohmann::json j;
  j["utterance_id"] = utterance_id;
  j["snr_db"] = snr_db;
  put_opt(j, "pesq", pesq);
  j["stoi"] = stoi;
  j["sisdr_db"] = sisdr_db;
  j["sisdr_clamped"] = sisdr_clamped;
  put_opt(j, "csig", csig);
  put_opt(j, "cbak", cbak);
  put_opt(j, "covl", covl);
  return j.dump();
}

MetricRow MetricRow::from_json(const std::string &line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed metric row: ") + e.what());
  }
  MetricRow r;
  try {
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.snr_db = j.at("snr_db").get<double>();
    r.stoi = j.at("stoi").get<double>();
    r.sisdr_db = j.at("sisdr_db").get<double>();
    r.sisdr_clamped = j.value("sisdr_clamped", false);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("metric row missing required field: ") + e.what());
  }
  r.pesq = get_opt(j, "pesq");
  r.csig = get_opt(j, "csig");
  r.cbak = get_opt(j, "cbak");
  r.covl = get_opt(j, "covl");
  return r;
}

std::string MetricRow::csv_header() {
  return "utterance_id,snr_db,pesq,stoi,sisdr_db,sisdr_clamped,csig,cbak,covl";
}

std::string MetricRow::to_csv() const {
  auto opt = [](const std::optional<double> &v) {
    return v ? fmt_num(*v) : std::string();
  };
  std::string s = utterance_id;
  s += "," + fmt_num(snr_db);
  s += "," + opt(pesq);
  s += "," + fmt_num(stoi);
  s += "," + fmt_num(sisdr_db);
  s += sisdr_clamped ? ",1" : ",0";
  s += "," + opt(csig);
  s += "," + opt(cbak);
  s += "," + opt(covl);
  return s;
}

MetricRow MetricRow::from_csv(const std::string &line) {
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
  if (cells.size() != 9)
    throw FormatError("metric csv row must have 9 cells, got " +
                      std::to_string(cells.size()));
  auto num = [&](const std::string &s, const char *what) {
    try {
      size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception &) {
      throw FormatError(std::string("bad number for ") + what + ": '" + s + "'");
    }
  };
  auto opt = [&](const std::string &s, const char *what) {
    return s.empty() ? std::optional<double>{} : std::optional<double>(num(s, what));
  };
  MetricRow r;
  r.utterance_id = cells[0];
  r.snr_db = num(cells[1], "snr_db");
  r.pesq = opt(cells[2], "pesq");
  r.stoi = num(cells[3], "stoi");
  r.sisdr_db = num(cells[4], "sisdr_db");
  if (cells[5] != "0" && cells[5] != "1")
    throw FormatError("sisdr_clamped must be 0 or 1");
  r.sisdr_clamped = cells[5] == "1";
  r.csig = opt(cells[6], "csig");
  r.cbak = opt(cells[7], "cbak");
  r.covl = opt(cells[8], "covl");
  return r;
}

std::string rows_to_jsonl(const std::vector<MetricRow> &rows) {
  std::string out;
  for (const auto &r : rows) {
    out += r.to_json();
    out += '\n';
  }
  return out;
}

std::vector<MetricRow> rows_from_jsonl(const std::string &text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(MetricRow::from_json(line));
  }
  return rows;
}

std::string rows_to_csv(const std::vector<MetricRow> &rows) {
  std::string out = MetricRow::csv_header() + "\n";
  for (const auto &r : rows) {
    out += r.to_csv();
    out += '\n';
  }
  return out;
}

std::vector<MetricRow> rows_from_csv(const std::string &text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != MetricRow::csv_header())
    throw FormatError("metric csv must start with the canonical header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(MetricRow::from_csv(line));
  }
  return rows;
}

}  // namespace sesw::metrics
