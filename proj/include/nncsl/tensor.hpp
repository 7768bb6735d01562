#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "nncsl/errors.hpp"

namespace nncsl {

// Additive floor used by log/division to keep sharpened distributions finite.
inline constexpr double kFloor = 1e-12;

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and scatters into parents' grad buffers.
  std::function<void(Node&)> backprop;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense tensor handle with reverse-mode autodiff. Value-semantic handle to a
/// shared graph node; the graph is define-by-run and freed when the last
/// tensor referencing it goes out of scope.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const { return node_->shape.at(0); }
  int cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }
  std::size_t size() const { return node_->data.size(); }
  bool is_scalar() const { return node_->data.size() == 1; }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }

  double value() const;
  double at(int r, int c) const { return node_->data[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  /// Same values, cut off from the graph; gradients do not flow through it.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::vector<int> shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backprop);
};

Tensor make_op(std::vector<int> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop);

/// Reverse-mode pass from a scalar loss. Populates grads on every reachable
/// tensor with requires_grad. A second backward on the same loss is rejected.
void backward(const Tensor& loss);

// --- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& m, const Tensor& row);  // broadcast 1xC over NxC
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);        // scalar
Tensor mean_rows(const Tensor& a);  // NxC -> 1xC
Tensor log_floor(const Tensor& a);  // log(x + kFloor)
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Row-wise softmax of logits / temperature. Masked columns (mask[c] == 0)
/// get probability exactly 0 and carry no gradient.
Tensor softmax_t(const Tensor& logits, double temperature,
                 const std::vector<std::uint8_t>* mask = nullptr);

/// Rows scaled to unit L2 norm; zero rows use a norm floor of kFloor.
Tensor l2_normalize_rows(const Tensor& a);

/// Pairwise cosine similarity: (n x d, m x d) -> n x m.
Tensor cosine_sim(const Tensor& a, const Tensor& b);

/// Mean over rows of -sum_c target * log(pred + kFloor). The target is
/// treated as a constant; no gradient flows into it.
Tensor cross_entropy(const Tensor& pred, const Tensor& target);

}  // namespace nncsl
