#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nncsl/errors.hpp"

namespace nncsl {

struct Dataset {
  std::vector<double> features;  // row-major n x dim
  std::vector<int> labels;       // values in [0, class_count)
  int dim = 0;
  int class_count = 0;

  int size() const { return static_cast<int>(labels.size()); }
  const double* row(int i) const { return features.data() + static_cast<std::size_t>(i) * dim; }
};

enum class SyntheticKind { gaussian_blobs, concentric_rings };

Dataset make_synthetic(SyntheticKind kind, int classes, int per_class, int dim,
                       std::uint64_t seed, double noise);

struct Task {
  std::vector<int> class_ids;        // classes owned by this task
  std::vector<int> labeled_idx;      // indices into the parent dataset
  std::vector<int> unlabeled_idx;
  std::vector<int> test_idx;
};

struct TaskStream {
  const Dataset* data = nullptr;
  std::vector<Task> tasks;
  double label_ratio = 0.0;
  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

/// Partitions classes into `num_tasks` disjoint blocks, holds out a test
/// fraction per class, then splits the remaining train samples into labeled
/// and unlabeled parts stratified per class.
TaskStream split_stream(const Dataset& d, int num_tasks, double label_ratio,
                        std::uint64_t seed, double test_fraction = 0.25);

struct AugmentConfig {
  double jitter_sigma = 0.1;    // additive Gaussian noise on global views
  double dropout_p = 0.1;       // per-coordinate zeroing on global views
  int n_local = 2;              // small views per sample (0 disables)
  double local_dropout_p = 0.4; // heavier dropout for small views
};

struct LabeledSample {
  std::vector<double> x;
  int class_id = -1;
  int task_tag = -1;
};

struct ViewBatch {
  // Two global views per unlabeled sample, row-aligned.
  std::vector<double> view_a, view_b;   // N x dim each
  std::vector<std::vector<double>> locals;  // n_local matrices of N x dim
  std::vector<int> unlabeled_true_class;    // monitoring only, never trained on
  int n_unlabeled = 0;
  int dim = 0;

  std::vector<LabeledSample> labeled;   // K current-task samples
  std::vector<LabeledSample> replayed;  // buffer draw, previous tasks
};

/// Builds the two correlated global views (plus optional small views) for a
/// set of unlabeled rows. Labeled samples pass through unaugmented; the
/// caller fills in the labeled/replayed parts of the returned batch.
ViewBatch augment_views(const std::vector<std::vector<double>>& unlabeled_rows,
                        const AugmentConfig& cfg, std::uint64_t seed);

Dataset load_csv(const std::string& path, bool has_header,
                 const std::string& label_column);
void save_csv(const Dataset& d, const std::string& path);

}  // namespace nncsl
