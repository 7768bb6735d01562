#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nncsl/tensor.hpp"

namespace nncsl {

struct ModelConfig {
  int input_dim = 0;
  std::vector<int> backbone_widths{64, 64};
  int proj_hidden = 32;
  int proj_dim = 16;
  int num_classes = 0;  // total stream classes; the head is sized once
};

struct Linear {
  Tensor W;  // in x out
  Tensor b;  // 1 x out
};

struct ForwardOut {
  Tensor features;     // N x f
  Tensor projections;  // N x q (not normalized; cosine_sim normalizes)
  Tensor logits;       // N x C, unmasked
};

/// Backbone g, projector h and linear head p, with the unified masked head:
/// the head is sized for every stream class up front and unseen columns are
/// excluded at loss and prediction time.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ForwardOut forward(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  void zero_grad();

  const std::vector<std::uint8_t>& seen_classes() const { return seen_; }
  void mark_seen(const std::vector<int>& class_ids);

  /// Deep independent copy with gradients disabled.
  Model clone_frozen() const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  ModelConfig cfg_;
  std::vector<Linear> backbone_;
  std::vector<Linear> projector_;
  Linear classifier_;
  std::vector<std::uint8_t> seen_;

  friend struct ModelIo;
};

struct TeacherSnapshot {
  Model model;       // frozen, produces no gradients
  int task_index = -1;
};

/// Deep copy of the student at a task boundary.
TeacherSnapshot snapshot_teacher(const Model& m, int task_index);

/// Unseen columns driven to a large negative value; no gradient flows into
/// masked entries. Softmax/argmax over the result ignores unseen classes.
Tensor mask_logits(const Tensor& logits, const std::vector<std::uint8_t>& seen);

/// Argmax prediction over masked logits.
std::vector<int> predict(const Model& m, const Tensor& x);

}  // namespace nncsl
