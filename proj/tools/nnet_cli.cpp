// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// nnet: model-configuration helper.
//   nnet describe <cfg.json>          print the parameter-count breakdown
//   nnet preset <variant> <scale>     print a preset config as JSON

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sesw/errors.hpp"
#include "sesw/nnet.hpp"

int main(int argc, char **argv) {
  CLI::App app{"nnet: model configuration inspector"};
  app.require_subcommand(1);

  std::string cfg_path;
  auto *describe = app.add_subcommand(
      "describe", "Print the parameter-count breakdown of a model config");
  describe->add_option("cfg", cfg_path, "model config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string variant = "mtfaa_dprnn";
  std::string scale = "toy";
  auto *preset = app.add_subcommand("preset", "Print a preset config as JSON");
  preset
      ->add_option("variant", variant,
                   "mtfaa_attn|mtfaa_dprnn|cmgan_conf|cmgan_frnn")
      ->required();
  preset->add_option("scale", scale, "toy|small|paper-ish")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (describe->parsed()) {
      const auto cfg = sesw::nn::ModelConfig::load(cfg_path);
      sesw::nn::Model model(cfg);
      std::cout << model.describe();
      return 0;
    }
    if (preset->parsed()) {
      const auto cfg = sesw::nn::ModelConfig::preset(
          sesw::nn::variant_from_string(variant), scale);
      std::cout << cfg.to_json_text() << "\n";
      return 0;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
