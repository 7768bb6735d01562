#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nncsl/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Continual semi-supervised learning laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> method_override;
  std::string output_override;
  std::vector<std::uint64_t> seed_override;

  auto* run = app.add_subcommand("run", "Run every (method, seed) pair in a config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--method", method_override, "Override methods (repeatable)");
  run->add_option("--seed", seed_override, "Override seeds (repeatable)");
  run->add_option("--output-dir", output_override, "Override the output directory");

  auto* validate = app.add_subcommand("validate", "Check a config and print it resolved");
  validate->add_option("--config", config_path, "Experiment config (JSON)")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Re-aggregate existing per-seed outputs");
  report->add_option("--output-dir", report_dir, "Directory with *_summary.json files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return nncsl::report_experiment(report_dir, std::cout);

    nncsl::ExperimentConfig cfg = nncsl::load_config(config_path);
    if (!method_override.empty()) cfg.methods = method_override;
    if (!seed_override.empty()) cfg.seeds = seed_override;
    if (!output_override.empty()) cfg.output_dir = output_override;

    if (validate->parsed()) {
      auto errs = nncsl::validate_config(cfg);
      if (!errs.empty()) {
        for (const auto& e : errs) std::cerr << "violation: " << e << "\n";
        return 1;
      }
      std::cout << "OK\n" << nncsl::resolved_config_json(cfg).dump(2) << "\n";
      return 0;
    }
    return nncsl::run_experiment(cfg, std::cout);
  } catch (const nncsl::ParamError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const nncsl::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
