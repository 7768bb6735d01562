#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nncsl/trainer.hpp"

namespace nncsl {

struct DatasetSpec {
  std::string kind = "gaussian_blobs";  // gaussian_blobs | concentric_rings | csv
  int classes = 10;
  int per_class = 100;
  int dim = 16;
  double noise = 0.5;
  std::uint64_t seed = 7;
  std::string path;  // csv only
  bool has_header = true;
  std::string label_column = "label";
};

struct ExperimentConfig {
  DatasetSpec dataset;
  int num_tasks = 5;
  double label_ratio = 0.05;
  double test_fraction = 0.25;
  int buffer_capacity = 50;
  std::vector<std::string> methods{"nncsl"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";
  bool dump_embeddings = false;
  TrainConfig train;  // template; method/seed/buffer filled in per run
};

/// Parses with full defaulting; unknown keys are rejected with their path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

nlohmann::json resolved_config_json(const ExperimentConfig& cfg);

/// Constraint checks beyond parsing (tau > eps, divisibility, label floor).
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

/// FNV-1a over the resolved config dump; embedded in every output file.
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct SeedResult {
  std::string method;
  std::uint64_t seed = 0;
  double acc = 0.0, fwt = 0.0, bwt = 0.0;
  std::vector<double> per_task_final;
  double mean_labeled_train_acc = 0.0;
};

/// Runs every (method, seed) pair, writes matrix/summary/curve files per
/// seed plus one aggregate per method. Returns 0, or 2 on divergence.
int run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Re-aggregates existing per-seed summary files in an output directory.
int report_experiment(const std::string& output_dir, std::ostream& log);

/// Builds the dataset and stream for one run seed.
Dataset build_dataset(const DatasetSpec& spec, std::uint64_t run_seed);

/// Resolves the output directory, honoring the NNCSL_OUTPUT_ROOT override.
std::string resolve_output_dir(const std::string& configured);

}  // namespace nncsl
