#include "nncsl/snn.hpp"

#include <algorithm>

namespace nncsl {

PseudoLabel snn_classify(const Tensor& queries, const SupportSet& support, double temp) {
  if (temp <= 0.0) throw ParamError("snn_classify: temperature must be positive");
  if (support.size() < 1) throw ParamError("snn_classify: empty support set");
  Tensor sims = cosine_sim(queries, support.features);       // N x K
  Tensor weights = softmax_t(sims, temp);                    // rows sum to 1
  return {matmul(weights, support.targets), temp};
}

Tensor loss_snn(const Tensor& view_a, const Tensor& view_b, const SupportSet& support,
                double eps, double tau) {
  if (!(tau > eps && eps > 0.0))
    throw ParamError("loss_snn: need tau > eps > 0");
  // The sharpened branch is the target and carries no gradient.
  Tensor target_b = snn_classify(view_b, support, eps).distribution.detach();
  Tensor target_a = snn_classify(view_a, support, eps).distribution.detach();
  Tensor pred_a = snn_classify(view_a, support, tau).distribution;
  Tensor pred_b = snn_classify(view_b, support, tau).distribution;
  return scale(add(cross_entropy(pred_a, target_b), cross_entropy(pred_b, target_a)), 0.5);
}

Tensor loss_mem(const PseudoLabel& pseudo) {
  Tensor m = mean_rows(pseudo.distribution);
  return sum(mul(m, log_floor(m)));  // == -H(mean)
}

std::optional<SupportSet> filter_support(const SupportSet& support, int current_task,
                                         FilterMode mode) {
  if (support.size() < 1) throw ParamError("filter_support: empty support set");
  std::vector<int> keep;
  for (int k = 0; k < support.size(); ++k) {
    bool is_current = support.task_tags[k] == current_task;
    if (mode == FilterMode::current_only ? is_current
                                         : support.task_tags[k] < current_task)
      keep.push_back(k);
  }
  if (keep.empty()) return std::nullopt;
  if (static_cast<int>(keep.size()) == support.size()) return support;
  SupportSet out;
  out.features = gather_rows(support.features, keep);
  out.targets = gather_rows(support.targets, keep);
  for (int k : keep) {
    out.task_tags.push_back(support.task_tags[k]);
    out.class_tags.push_back(support.class_tags[k]);
  }
  return out;
}

Tensor loss_lin(const Tensor& masked_logits, const Tensor& targets) {
  return cross_entropy(softmax_t(masked_logits, 1.0), targets);
}

Tensor smooth_targets(const std::vector<int>& class_ids, int num_classes,
                      const std::vector<std::uint8_t>& seen, double smoothing) {
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ParamError("smooth_targets: smoothing must be in [0, 1)");
  int n_seen = static_cast<int>(std::count(seen.begin(), seen.end(), std::uint8_t{1}));
  if (n_seen < 1) throw ProtocolError("smooth_targets: no seen classes");
  const int n = static_cast<int>(class_ids.size());
  std::vector<double> rows(static_cast<std::size_t>(n) * num_classes, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < num_classes; ++j)
      if (seen[j]) rows[static_cast<std::size_t>(i) * num_classes + j] = smoothing / n_seen;
    rows[static_cast<std::size_t>(i) * num_classes + class_ids[i]] += 1.0 - smoothing;
  }
  return Tensor::from({n, num_classes}, std::move(rows));
}

Tensor loss_csl(const CslParts& parts, double lambda_mem, double lambda_lin) {
  if (lambda_mem < 0.0 || lambda_lin < 0.0)
    throw ParamError("loss_csl: weights must be nonnegative");
  Tensor total = Tensor::scalar(0.0);
  if (parts.snn.defined()) total = add(total, parts.snn);
  if (parts.mem.defined()) total = add(total, scale(parts.mem, lambda_mem));
  if (parts.lin.defined()) total = add(total, scale(parts.lin, lambda_lin));
  return total;
}

}  // namespace nncsl
