// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// sesw: command line front end for the speech-enhancement workbench.
//   sesw synth   synthesize a noisy corpus from a manifest
//   sesw train   fit a model on a synthesized corpus
//   sesw eval    run a system over a synthesized test set and report metrics
//   sesw report  aggregate a metric-row file into a bucket table

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sesw/bench.hpp"
#include "sesw/errors.hpp"
#include "sesw/metrics.hpp"
#include "sesw/nnet.hpp"
#include "sesw/synth.hpp"
#include "sesw/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sesw::FormatError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sesw::FormatError("cannot write " + path);
  out << text;
  if (!out) throw sesw::FormatError("short write to " + path);
}

std::vector<sesw::SynthReportRow> load_report_rows(const std::string &path,
                                                   const std::string &split) {
  auto rows = sesw::load_synth_report(path);
  if (!split.empty()) {
    std::vector<sesw::SynthReportRow> kept;
    for (auto &r : rows)
      if (r.split == split) kept.push_back(std::move(r));
    if (kept.empty())
      throw sesw::ConfigError("no rows with split '" + split + "' in " + path);
    rows = std::move(kept);
  }
  return rows;
}

// --- synth ------------------------------------------------------------

struct SynthArgs {
  std::string manifest;
  std::string out_dir;
  double early_ms = 50.0;
  bool resample = false;
  int jobs = 1;
};

int run_synth(const SynthArgs &a) {
  const auto manifest = sesw::CorpusManifest::load(a.manifest);
  sesw::SynthConfig cfg;
  cfg.early_ms = a.early_ms;
  cfg.resample_inputs = a.resample;
  const auto rows = sesw::synthesize_manifest(manifest, a.out_dir, cfg, a.jobs);
  std::cout << "synthesized " << rows.size() << " mixtures into " << a.out_dir
            << "\n";
  return 0;
}

// --- train ------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string out_dir;
  std::string split;
  int64_t steps = 1000;
  uint64_t seed = 1;
  int batch_size = 8;
  double segment_seconds = 8.0;
  int64_t checkpoint_every = 1000;
  int64_t warmup_steps = 8000;
  double grad_clip = 5.0;
};

int run_train(const TrainArgs &a) {
  const auto model_cfg = sesw::nn::ModelConfig::load(a.config);
  sesw::nn::Model model(model_cfg);
  const auto items = load_report_rows(a.manifest, a.split);

  sesw::train::TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.seed = a.seed;
  cfg.opt.batch_size = a.batch_size;
  cfg.opt.segment_seconds = a.segment_seconds;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.schedule.warmup_steps = a.warmup_steps;
  cfg.grad_clip = a.grad_clip;
  cfg.out_dir = a.out_dir;

  std::cerr << "training " << sesw::nn::to_string(model_cfg.variant) << " ("
            << model.param_total() << " parameters) on " << items.size()
            << " utterances for " << cfg.steps << " steps\n";
  const auto result = sesw::train::fit(model, items, cfg);
  std::cout << "best loss " << result.best_loss << "\n"
            << "latest checkpoint: " << result.latest_path << "\n"
            << "best checkpoint:   " << result.best_path << "\n"
            << "history:           " << result.history_path << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------

struct EvalArgs {
  std::string report;
  std::string out_dir;
  std::string system = "model";
  std::string checkpoint;
  std::string name;
  std::string enhanced_dir;
  std::string split;
  bool no_pesq = false;
  int jobs = 1;
};

int run_eval(const EvalArgs &a) {
  sesw::bench::EvalOptions opt;
  if (a.system == "model")
    opt.system = sesw::bench::SystemKind::Model;
  else if (a.system == "passthrough")
    opt.system = sesw::bench::SystemKind::Passthrough;
  else if (a.system == "oracle")
    opt.system = sesw::bench::SystemKind::Oracle;
  else
    throw sesw::ConfigError("unknown system '" + a.system +
                            "' (expected model|passthrough|oracle)");
  opt.checkpoint_path = a.checkpoint;
  opt.system_name = a.name;
  opt.enhanced_dir = a.enhanced_dir;
  opt.with_pesq = !a.no_pesq;
  opt.jobs = a.jobs;

  if (opt.with_pesq && !sesw::metrics::pesq_provider_available())
    std::cerr << "note: " << sesw::metrics::kPesqProviderEnv
              << " is not set; PESQ and composite columns will be absent\n";

  const auto records = load_report_rows(a.report, a.split);
  const auto res = sesw::bench::evaluate(records, opt);

  fs::create_directories(a.out_dir);
  const auto rows_path = (fs::path(a.out_dir) / "rows.jsonl").string();
  write_text(rows_path, sesw::metrics::rows_to_jsonl(res.rows));
  std::cerr << res.rows.size() << " rows -> " << rows_path << "\n";
  for (const auto &f : res.failures)
    std::cerr << "warning: " << f.utterance_id << ": " << f.error << "\n";

  if (!res.table) {
    std::cerr << "error: " << res.table_error << "\n";
    return 1;
  }
  const std::string md = sesw::bench::emit_markdown(*res.table);
  write_text((fs::path(a.out_dir) / "table.md").string(), md);
  write_text((fs::path(a.out_dir) / "table.csv").string(),
             sesw::bench::emit_csv(*res.table));
  std::cout << md;
  return 0;
}

// --- report -----------------------------------------------------------

struct ReportArgs {
  std::string rows;
  std::string format = "md";
  std::string name = "System";
};

int run_report(const ReportArgs &a) {
  const auto rows = sesw::metrics::rows_from_jsonl(read_text(a.rows));
  const auto table = sesw::bench::aggregate(rows, a.name);
  if (a.format == "md")
    std::cout << sesw::bench::emit_markdown(table);
  else if (a.format == "csv")
    std::cout << sesw::bench::emit_csv(table);
  else
    throw sesw::ConfigError("unknown format '" + a.format + "' (expected md|csv)");
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"sesw: speech enhancement workbench"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto *synth = app.add_subcommand(
      "synth", "Synthesize noisy/target wav pairs from a corpus manifest");
  synth->add_option("--manifest", sa.manifest, "corpus manifest (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out_dir, "output directory")->required();
  synth->add_option("--early-ms", sa.early_ms,
                    "early-reflection cutoff for the training target (ms)")
      ->capture_default_str();
  synth->add_flag("--resample", sa.resample,
                  "resample non-16 kHz inputs instead of rejecting them");
  synth->add_option("--jobs", sa.jobs, "worker threads")->capture_default_str();

  TrainArgs ta;
  auto *train = app.add_subcommand("train", "Train a model on a synthesized corpus");
  train->add_option("--config", ta.config, "model config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train
      ->add_option("--manifest", ta.manifest,
                   "synth_report.jsonl of the training corpus")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--steps", ta.steps, "optimization steps")->capture_default_str();
  train->add_option("--seed", ta.seed, "training seed")->capture_default_str();
  train->add_option("--out", ta.out_dir, "checkpoint/history directory")->required();
  train->add_option("--split", ta.split, "use only rows with this split label");
  train->add_option("--batch-size", ta.batch_size, "segments per step")
      ->capture_default_str();
  train->add_option("--segment-seconds", ta.segment_seconds, "crop length")
      ->capture_default_str();
  train->add_option("--checkpoint-every", ta.checkpoint_every, "checkpoint cadence")
      ->capture_default_str();
  train->add_option("--warmup-steps", ta.warmup_steps, "learning-rate warmup knee")
      ->capture_default_str();
  train->add_option("--grad-clip", ta.grad_clip, "global gradient-norm limit")
      ->capture_default_str();

  EvalArgs ea;
  auto *eval = app.add_subcommand(
      "eval", "Evaluate a system over a synthesized test set");
  eval->add_option("--report", ea.report,
                   "synth_report.jsonl of the test corpus")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", ea.out_dir, "output directory for rows and tables")
      ->required();
  eval->add_option("--system", ea.system, "model|passthrough|oracle")
      ->capture_default_str();
  eval->add_option("--checkpoint", ea.checkpoint, "model checkpoint path");
  eval->add_option("--name", ea.name, "system label in the table");
  eval->add_option("--enhanced-dir", ea.enhanced_dir, "keep enhanced wavs here");
  eval->add_option("--split", ea.split, "use only rows with this split label");
  eval->add_flag("--no-pesq", ea.no_pesq, "skip the external PESQ provider");
  eval->add_option("--jobs", ea.jobs, "worker threads")->capture_default_str();

  ReportArgs ra;
  auto *report = app.add_subcommand(
      "report", "Aggregate a rows.jsonl file into a bucket table");
  report->add_option("--rows", ra.rows, "metric rows (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--format", ra.format, "md|csv")->capture_default_str();
  report->add_option("--name", ra.name, "system label in the table")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(sa);
    if (train->parsed()) return run_train(ta);
    if (eval->parsed()) return run_eval(ea);
    if (report->parsed()) return run_report(ra);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
