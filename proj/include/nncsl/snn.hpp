#pragma once

#include <optional>
#include <vector>

#include "nncsl/tensor.hpp"

namespace nncsl {

/// Labeled embeddings with one-hot (or smoothed) targets the soft
/// nearest-neighbor classifier compares against.
struct SupportSet {
  Tensor features;  // K x q, in-graph so gradients reach support embeddings
  Tensor targets;   // K x C, constant
  std::vector<int> task_tags;
  std::vector<int> class_tags;

  int size() const { return static_cast<int>(task_tags.size()); }
};

struct PseudoLabel {
  Tensor distribution;  // N x C rows on the simplex
  double sharpening = 0.0;
};

enum class FilterMode { current_only, previous_only };

/// Similarity-weighted aggregation of support targets (unit per-support
/// weighting): row i = sum_k softmax_k(cos(h_u[i], S[k]) / temp) * y^k.
PseudoLabel snn_classify(const Tensor& queries, const SupportSet& support, double temp);

/// Symmetrized consistency loss between two views: each view's gentle
/// (tau) prediction is trained toward the other view's sharpened (eps)
/// prediction, which is detached.
Tensor loss_snn(const Tensor& view_a, const Tensor& view_b, const SupportSet& support,
                double eps, double tau);

/// Negative entropy of the batch-mean pseudo-label; minimizing it pushes the
/// mean prediction toward uniform.
Tensor loss_mem(const PseudoLabel& pseudo);

/// Keeps only current-task rows (current_only) or strictly earlier rows
/// (previous_only). An empty result is signalled via nullopt.
std::optional<SupportSet> filter_support(const SupportSet& support, int current_task,
                                         FilterMode mode);

/// Mean cross-entropy of softmaxed (already masked) logits against smoothed
/// one-hot targets.
Tensor loss_lin(const Tensor& masked_logits, const Tensor& targets);

/// Smooth one-hot rows over the seen classes with the given factor.
Tensor smooth_targets(const std::vector<int>& class_ids, int num_classes,
                      const std::vector<std::uint8_t>& seen, double smoothing);

struct CslParts {
  Tensor snn;  // may be undefined when no unlabeled data is available
  Tensor mem;
  Tensor lin;
};

/// L_SNN + lambda_mem * L_MEM + lambda_lin * L_LIN; undefined parts drop out.
Tensor loss_csl(const CslParts& parts, double lambda_mem, double lambda_lin);

}  // namespace nncsl
