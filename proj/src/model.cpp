#include "nncsl/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace nncsl {

namespace {

constexpr double kMaskValue = -1e30;

Linear init_linear(int fan_in, int fan_out, std::mt19937_64& rng) {
  // He-style uniform fan-in scaling.
  double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> uni(-limit, limit);
  std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& v : w) v = uni(rng);
  Linear l;
  l.W = Tensor::from({fan_in, fan_out}, std::move(w), true);
  l.b = Tensor::zeros({1, fan_out}, true);
  return l;
}

Tensor apply_linear(const Linear& l, const Tensor& x) {
  return add_rowvec(matmul(x, l.W), l.b);
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.num_classes < 1)
    throw ParamError("Model: input_dim and num_classes must be positive");
  std::mt19937_64 rng(seed);
  int in = cfg.input_dim;
  for (int w : cfg.backbone_widths) {
    backbone_.push_back(init_linear(in, w, rng));
    in = w;
  }
  const int feat = in;
  projector_.push_back(init_linear(feat, cfg.proj_hidden, rng));
  projector_.push_back(init_linear(cfg.proj_hidden, cfg.proj_dim, rng));
  classifier_ = init_linear(feat, cfg.num_classes, rng);
  seen_.assign(cfg.num_classes, 0);
}

ForwardOut Model::forward(const Tensor& x) const {
  if (x.cols() != cfg_.input_dim)
    throw ShapeError("Model::forward: input width " + std::to_string(x.cols()) +
                     " != " + std::to_string(cfg_.input_dim));
  Tensor z = x;
  for (const auto& layer : backbone_) z = relu(apply_linear(layer, z));
  Tensor h = apply_linear(projector_[1], relu(apply_linear(projector_[0], z)));
  Tensor p = apply_linear(classifier_, z);
  return {z, h, p};
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : backbone_) { out.push_back(l.W); out.push_back(l.b); }
  for (const auto& l : projector_) { out.push_back(l.W); out.push_back(l.b); }
  out.push_back(classifier_.W);
  out.push_back(classifier_.b);
  return out;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void Model::mark_seen(const std::vector<int>& class_ids) {
  for (int c : class_ids) {
    if (c < 0 || c >= static_cast<int>(seen_.size()))
      throw ProtocolError("mark_seen: class id " + std::to_string(c) + " out of range");
    seen_[c] = 1;
  }
}

Model Model::clone_frozen() const {
  Model copy;
  copy.cfg_ = cfg_;
  copy.seen_ = seen_;
  auto clone = [](const Linear& l) {
    Linear out;
    out.W = l.W.detach();
    out.b = l.b.detach();
    return out;
  };
  for (const auto& l : backbone_) copy.backbone_.push_back(clone(l));
  for (const auto& l : projector_) copy.projector_.push_back(clone(l));
  copy.classifier_ = clone(classifier_);
  return copy;
}

TeacherSnapshot snapshot_teacher(const Model& m, int task_index) {
  return {m.clone_frozen(), task_index};
}

Tensor mask_logits(const Tensor& logits, const std::vector<std::uint8_t>& seen) {
  if (static_cast<int>(seen.size()) != logits.cols())
    throw ShapeError("mask_logits: mask length does not match logit width");
  if (std::find(seen.begin(), seen.end(), std::uint8_t{1}) == seen.end())
    throw ProtocolError("mask_logits: no seen classes");
  const int n = logits.rows(), c = logits.cols();
  std::vector<double> out(logits.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = seen[j] ? logits.at(i, j) : kMaskValue;
  return make_op(logits.shape(), std::move(out), {logits}, [n, c, seen](detail::Node& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        if (seen[j])
          p.grad[static_cast<std::size_t>(i) * c + j] +=
              node.grad[static_cast<std::size_t>(i) * c + j];
  });
}

std::vector<int> predict(const Model& m, const Tensor& x) {
  Tensor logits = mask_logits(m.forward(x).logits, m.seen_classes());
  std::vector<int> out(logits.rows());
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

// --- checkpoint io --------------------------------------------------------

struct ModelIo {
  static nlohmann::json layer_to_json(const Linear& l) {
    nlohmann::json j;
    j["w_shape"] = l.W.shape();
    j["w"] = l.W.data();
    j["b"] = l.b.data();
    return j;
  }
  static Linear layer_from_json(const nlohmann::json& j, bool trainable) {
    Linear l;
    std::vector<int> shape = j.at("w_shape").get<std::vector<int>>();
    l.W = Tensor::from(shape, j.at("w").get<std::vector<double>>(), trainable);
    l.b = Tensor::from({1, shape.at(1)}, j.at("b").get<std::vector<double>>(), trainable);
    return l;
  }
  static void save(const Model& m, const std::string& path) {
    nlohmann::json j;
    j["format"] = "nncsl-checkpoint";
    j["version"] = 1;
    j["config"] = {{"input_dim", m.cfg_.input_dim},
                   {"backbone_widths", m.cfg_.backbone_widths},
                   {"proj_hidden", m.cfg_.proj_hidden},
                   {"proj_dim", m.cfg_.proj_dim},
                   {"num_classes", m.cfg_.num_classes}};
    j["seen"] = m.seen_;
    for (const auto& l : m.backbone_) j["backbone"].push_back(layer_to_json(l));
    for (const auto& l : m.projector_) j["projector"].push_back(layer_to_json(l));
    j["classifier"] = layer_to_json(m.classifier_);
    std::ofstream out(path);
    if (!out) throw StateError("Model::save: cannot open " + path);
    out << j.dump();
  }
  static Model load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StateError("Model::load: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != "nncsl-checkpoint" || j.value("version", 0) != 1)
      throw StateError("Model::load: unsupported checkpoint format in " + path);
    Model m;
    const auto& c = j.at("config");
    m.cfg_.input_dim = c.at("input_dim");
    m.cfg_.backbone_widths = c.at("backbone_widths").get<std::vector<int>>();
    m.cfg_.proj_hidden = c.at("proj_hidden");
    m.cfg_.proj_dim = c.at("proj_dim");
    m.cfg_.num_classes = c.at("num_classes");
    m.seen_ = j.at("seen").get<std::vector<std::uint8_t>>();
    for (const auto& lj : j.at("backbone")) m.backbone_.push_back(layer_from_json(lj, true));
    for (const auto& lj : j.at("projector")) m.projector_.push_back(layer_from_json(lj, true));
    m.classifier_ = layer_from_json(j.at("classifier"), true);
    return m;
  }
};

void Model::save(const std::string& path) const { ModelIo::save(*this, path); }
Model Model::load(const std::string& path) { return ModelIo::load(path); }

}  // namespace nncsl
