#include "nncsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace nncsl {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data,
                    bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  std::size_t want = shape_product(shape);
  if (data.empty()) data.assign(want, 0.0);
  if (data.size() != want)
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::value() const {
  if (!is_scalar()) throw ShapeError("value() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = false;
  return Tensor(std::move(n));
}

Tensor make_op(std::vector<int> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool needs = false;
  for (const auto& p : parents) {
    needs = needs || p.requires_grad();
    n->parents.push_back(p.node());
  }
  n->requires_grad = needs;
  if (needs) n->backprop = std::move(backprop);
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.is_scalar())
    throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
  auto root = loss.node();
  if (root->backward_done)
    throw StateError("backward already ran on this loss; rebuild the graph first");
  root->backward_done = true;

  // Iterative post-order DFS; the resulting tape is in topological order.
  std::vector<detail::Node*> tape;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// --- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = A[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(i) * n + j] += av * B[static_cast<std::size_t>(p) * n + j];
    }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const auto& G = node.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double g = G[static_cast<std::size_t>(i) * n + j];
          if (g == 0.0) continue;
          for (int p = 0; p < k; ++p)
            pa.grad[static_cast<std::size_t>(i) * k + p] +=
                g * pb.data[static_cast<std::size_t>(p) * n + j];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double av = pa.data[static_cast<std::size_t>(i) * k + p];
          if (av == 0.0) continue;
          for (int j = 0; j < n; ++j)
            pb.grad[static_cast<std::size_t>(p) * n + j] +=
                av * G[static_cast<std::size_t>(i) * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p.grad[static_cast<std::size_t>(i) * n + j] +=
            node.grad[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& node) {
    for (auto& p : node.parents)
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i) p->grad[i] += node.grad[i];
      }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) pb.grad[i] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) pb.grad[i] += node.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_op(a.shape(), std::move(out), {a}, [s](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i] * s;
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != m.cols())
    throw ShapeError("add_rowvec: row " + shape_str(row.shape()) + " does not broadcast over " +
                     shape_str(m.shape()));
  const int n = m.rows(), c = m.cols();
  std::vector<double> out(m.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] =
          m.data()[static_cast<std::size_t>(i) * c + j] + row.data()[j];
  return make_op(m.shape(), std::move(out), {m, row}, [n, c](detail::Node& node) {
    auto& pm = *node.parents[0];
    auto& pr = *node.parents[1];
    if (pm.requires_grad) {
      pm.ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) pm.grad[i] += node.grad[i];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
          pr.grad[j] += node.grad[static_cast<std::size_t>(i) * c + j];
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (p.data[i] > 0.0) p.grad[i] += node.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  return make_op({1}, {s}, {a}, [](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[0];
  });
}

Tensor mean_rows(const Tensor& a) {
  const int n = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[j] += a.data()[static_cast<std::size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) out[j] /= n;
  return make_op({1, c}, std::move(out), {a}, [n, c](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<std::size_t>(i) * c + j] += node.grad[j] / n;
  });
}

Tensor log_floor(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i] + kFloor);
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      p.grad[i] += node.grad[i] / (p.data[i] + kFloor);
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  const int c = a.cols();
  const int n = static_cast<int>(idx.size());
  for (int i : idx)
    if (i < 0 || i >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range");
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i)
    std::copy_n(a.data().begin() + static_cast<std::size_t>(idx[i]) * c, c,
                out.begin() + static_cast<std::size_t>(i) * c);
  return make_op({n, c}, std::move(out), {a}, [idx, c](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j)
        p.grad[static_cast<std::size_t>(idx[i]) * c + j] += node.grad[i * c + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int c = parts.front().cols();
  int n = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    n += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<int> row_counts;
  for (const auto& p : parts) row_counts.push_back(p.rows());
  return make_op({n, c}, std::move(out), parts, [row_counts, c](detail::Node& node) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      auto& p = *node.parents[k];
      std::size_t len = static_cast<std::size_t>(row_counts[k]) * c;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < len; ++i) p.grad[i] += node.grad[offset + i];
      }
      offset += len;
    }
  });
}

Tensor softmax_t(const Tensor& logits, double temperature,
                 const std::vector<std::uint8_t>* mask) {
  if (temperature <= 0.0)
    throw ParamError("softmax_t: temperature must be positive, got " +
                     std::to_string(temperature));
  const int n = logits.rows(), c = logits.cols();
  if (mask) {
    if (static_cast<int>(mask->size()) != c)
      throw ShapeError("softmax_t: mask length does not match column count");
    if (std::find(mask->begin(), mask->end(), std::uint8_t{1}) == mask->end())
      throw ParamError("softmax_t: mask excludes every column");
  }
  std::vector<double> out(logits.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (!mask || (*mask)[j]) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < c; ++j)
      if (!mask || (*mask)[j]) {
        double e = std::exp((logits.at(i, j) - mx) / temperature);
        out[static_cast<std::size_t>(i) * c + j] = e;
        denom += e;
      }
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] /= denom;
  }
  std::vector<std::uint8_t> mask_copy = mask ? *mask : std::vector<std::uint8_t>();
  return make_op(logits.shape(), std::move(out), {logits},
                 [n, c, temperature, mask_copy](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j)
        dot += node.grad[static_cast<std::size_t>(i) * c + j] *
               node.data[static_cast<std::size_t>(i) * c + j];
      for (int j = 0; j < c; ++j) {
        if (!mask_copy.empty() && !mask_copy[j]) continue;
        double y = node.data[static_cast<std::size_t>(i) * c + j];
        p.grad[static_cast<std::size_t>(i) * c + j] +=
            y * (node.grad[static_cast<std::size_t>(i) * c + j] - dot) / temperature;
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& a) {
  const int n = a.rows(), d = a.cols();
  std::vector<double> out(a.size());
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int j = 0; j < d; ++j) {
      double v = a.at(i, j);
      ss += v * v;
    }
    double nm = std::max(std::sqrt(ss), kFloor);
    norms[i] = nm;
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = a.at(i, j) / nm;
  }
  return make_op(a.shape(), std::move(out), {a}, [n, d, norms](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j)
        dot += node.grad[static_cast<std::size_t>(i) * d + j] *
               node.data[static_cast<std::size_t>(i) * d + j];
      for (int j = 0; j < d; ++j)
        p.grad[static_cast<std::size_t>(i) * d + j] +=
            (node.grad[static_cast<std::size_t>(i) * d + j] -
             node.data[static_cast<std::size_t>(i) * d + j] * dot) /
            norms[i];
    }
  });
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw ShapeError("cosine_sim: dimension mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Tensor cross_entropy(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "cross_entropy");
  const int n = pred.rows(), c = pred.cols();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.data()[i] < 0.0 || target.data()[i] < 0.0)
      throw DomainError("cross_entropy: negative entry at flat index " + std::to_string(i));
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double t = target.at(i, j);
      if (t != 0.0) total -= t * std::log(pred.at(i, j) + kFloor);
    }
  total /= n;
  // Target is a constant; only pred is a parent.
  std::vector<double> tcopy = target.data();
  return make_op({1}, {total}, {pred}, [n, c, tcopy](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    double g = node.grad[0];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        double t = tcopy[static_cast<std::size_t>(i) * c + j];
        if (t != 0.0)
          p.grad[static_cast<std::size_t>(i) * c + j] -=
              g * t / ((p.data[static_cast<std::size_t>(i) * c + j] + kFloor) * n);
      }
  });
}

}  // namespace nncsl
