#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nncsl/data.hpp"
#include "nncsl/distill.hpp"
#include "nncsl/metrics.hpp"
#include "nncsl/model.hpp"
#include "nncsl/snn.hpp"

namespace nncsl {

enum class Method { finetune, er, paws, csl, nncsl, csl_kd, csl_fd };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);

struct TrainConfig {
  double lambda_lin = 0.005;
  double lambda_nnd = 0.2;
  double lambda_mem = 1.0;
  double label_smoothing = 0.1;
  double eps = 0.025;
  double tau = 0.1;

  int epochs_per_task = 40;
  // 10 when the budget allows, otherwise 20% of it; see warmup_epochs().
  int warmup_epochs_override = -1;
  double base_lr = 0.02;
  double peak_lr = 0.1;
  double final_lr = 0.008;
  double momentum = 0.9;
  double weight_decay = 1e-5;

  int batch_labeled = 8;    // K, current task
  int batch_buffer = 8;     // draw from the replay buffer
  int batch_unlabeled = 32; // N

  Method method = Method::nncsl;
  std::uint64_t seed = 1;
  int buffer_capacity = 50;  // M, labeled replay buffer

  double kd_temperature = 2.0;
  bool teacher_feature_bank = false;

  // Optional second buffer for unlabeled samples, replayed through the
  // consistency loss. Off by default.
  bool replay_unlabeled = false;
  int unlabeled_buffer_capacity = 0;

  AugmentConfig augment;
  std::vector<int> backbone_widths{64, 64};
  int proj_hidden = 32;
  int proj_dim = 16;

  std::string checkpoint_dir;  // per-task checkpoints when nonempty

  int warmup_epochs() const {
    if (warmup_epochs_override >= 0) return warmup_epochs_override;
    return epochs_per_task >= 50 ? 10 : std::max(1, epochs_per_task / 5);
  }
  void validate() const;
};

struct BufferEntry {
  std::vector<double> x;
  int class_id = -1;
  int task_tag = -1;
};

/// Bounded store of labeled samples with uniform (reservoir) retention over
/// the stream of insertions.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, std::uint64_t seed);

  void insert(BufferEntry e);
  std::vector<BufferEntry> draw(int n, std::mt19937_64& rng) const;

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  long seen() const { return seen_; }
  const std::vector<BufferEntry>& entries() const { return entries_; }

 private:
  int capacity_;
  long seen_ = 0;
  std::vector<BufferEntry> entries_;
  std::mt19937_64 rng_;
};

struct ScheduleSpec {
  long total_steps = 0;
  long warmup_steps = 0;
  double base_lr = 0.0, peak_lr = 0.0, final_lr = 0.0;
};

/// Linear warmup base->peak, then cosine decay peak->final. Restarts per task.
double lr_schedule(long step, const ScheduleSpec& spec);

struct EpochLog {
  int task = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0, loss_snn = 0.0, loss_mem = 0.0, loss_lin = 0.0,
         loss_distill = 0.0;
  double unlabeled_train_acc = 0.0;
  double labeled_train_acc = 0.0;
};

struct RunResult {
  ResultMatrix matrix{1};
  std::vector<EpochLog> curve;
  double mean_labeled_train_acc = 0.0;  // end-of-task labeled accuracy, averaged
  Model final_model;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// Trains tasks in order, evaluating every test split after each task.
  RunResult run_stream(const TaskStream& stream);

  /// Single-task training; tasks must be visited in order.
  std::vector<EpochLog> train_task(Model& m, const TaskStream& stream, int t,
                                   ReplayBuffer& buf,
                                   const std::optional<TeacherSnapshot>& teacher);

  ViewBatch compose_batch(const TaskStream& stream, int t, const ReplayBuffer& buf,
                          std::mt19937_64& rng);

  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  int tasks_done_ = 0;
  std::vector<std::vector<double>> velocity_;
  std::optional<ReplayBuffer> unlabeled_buf_;

  void sgd_step(Model& m, double lr);
};

double accuracy(const Model& m, const Dataset& d, const std::vector<int>& indices);

}  // namespace nncsl
