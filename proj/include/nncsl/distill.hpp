#pragma once

#include "nncsl/snn.hpp"

namespace nncsl {

/// One distillation step's inputs: the same unlabeled samples and the same
/// previous-class support samples embedded by student and teacher.
struct DistillBatch {
  Tensor student_proj;        // N x q
  Tensor teacher_proj;        // N x q, from the frozen teacher
  SupportSet student_support; // R, previous classes only
  SupportSet teacher_support; // R^{t-1}, same samples, same order
  double temperature = 0.1;
};

/// Cross-entropy between the student's and the detached teacher's soft
/// nearest-neighbor distributions over the shared previous-class support.
/// Both sides use the same temperature; the teacher is not sharpened.
Tensor nnd_loss(const DistillBatch& b);

/// L_CSL + lambda_nnd * L_NND.
Tensor loss_nncsl(const Tensor& csl, const Tensor& nnd, double lambda_nnd);

/// Class-level distillation baseline: temperature-softened cross-entropy
/// between student and detached teacher logits over previously seen classes.
/// Returns a constant 0 when fewer than one previous class exists.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<std::uint8_t>& seen_prev, double temp);

/// Sample-level distillation baseline: mean (1 - cosine) between student and
/// detached teacher projections.
Tensor feature_distill_loss(const Tensor& student_proj, const Tensor& teacher_proj);

}  // namespace nncsl
