#include "nncsl/distill.hpp"

#include <algorithm>

namespace nncsl {

Tensor nnd_loss(const DistillBatch& b) {
  if (b.student_support.size() < 1 || b.teacher_support.size() < 1)
    throw ParamError("nnd_loss: empty previous-class support");
  if (b.student_support.class_tags != b.teacher_support.class_tags ||
      b.student_support.task_tags != b.teacher_support.task_tags)
    throw ProtocolError("nnd_loss: student and teacher supports are not aligned");
  Tensor w = snn_classify(b.student_proj, b.student_support, b.temperature).distribution;
  Tensor w_prev =
      snn_classify(b.teacher_proj, b.teacher_support, b.temperature).distribution.detach();
  return cross_entropy(w, w_prev);
}

Tensor loss_nncsl(const Tensor& csl, const Tensor& nnd, double lambda_nnd) {
  if (lambda_nnd < 0.0) throw ParamError("loss_nncsl: lambda_nnd must be nonnegative");
  return add(csl, scale(nnd, lambda_nnd));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<std::uint8_t>& seen_prev, double temp) {
  if (temp <= 0.0) throw ParamError("kd_loss: temperature must be positive");
  if (std::find(seen_prev.begin(), seen_prev.end(), std::uint8_t{1}) == seen_prev.end())
    return Tensor::scalar(0.0);
  Tensor p_student = softmax_t(student_logits, temp, &seen_prev);
  Tensor p_teacher = softmax_t(teacher_logits, temp, &seen_prev).detach();
  return cross_entropy(p_student, p_teacher);
}

Tensor feature_distill_loss(const Tensor& student_proj, const Tensor& teacher_proj) {
  if (student_proj.shape() != teacher_proj.shape())
    throw ShapeError("feature_distill_loss: shape mismatch");
  Tensor s = l2_normalize_rows(student_proj);
  Tensor t = l2_normalize_rows(teacher_proj.detach());
  double n = static_cast<double>(student_proj.rows());
  // mean(1 - cos) == 1 - sum(s . t) / N
  return add(Tensor::scalar(1.0), scale(sum(mul(s, t)), -1.0 / n));
}

}  // namespace nncsl
