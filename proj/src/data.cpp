#include "nncsl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace nncsl {

namespace {

// Class means drawn on a sphere of radius 4, re-drawn while any pair is too
// close so that blob streams stay learnable at moderate noise.
std::vector<std::vector<double>> blob_means(int classes, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double radius = 4.0;
  const double min_dist = 2.5;
  std::vector<std::vector<double>> means;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> m(dim);
    for (int attempt = 0; attempt < 200; ++attempt) {
      double ss = 0.0;
      for (int j = 0; j < dim; ++j) {
        m[j] = gauss(rng);
        ss += m[j] * m[j];
      }
      double nrm = std::sqrt(ss);
      for (int j = 0; j < dim; ++j) m[j] = m[j] / nrm * radius;
      bool ok = true;
      for (const auto& other : means) {
        double d2 = 0.0;
        for (int j = 0; j < dim; ++j) d2 += (m[j] - other[j]) * (m[j] - other[j]);
        if (d2 < min_dist * min_dist) { ok = false; break; }
      }
      if (ok) break;
    }
    means.push_back(m);
  }
  return means;
}

}  // namespace

Dataset make_synthetic(SyntheticKind kind, int classes, int per_class, int dim,
                       std::uint64_t seed, double noise) {
  if (classes < 2) throw ParamError("make_synthetic: need at least 2 classes");
  if (per_class < 4) throw ParamError("make_synthetic: need at least 4 samples per class");
  if (dim < 2) throw ParamError("make_synthetic: need dim >= 2");
  if (noise < 0.0) throw ParamError("make_synthetic: noise must be nonnegative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * M_PI);

  Dataset d;
  d.dim = dim;
  d.class_count = classes;
  d.features.reserve(static_cast<std::size_t>(classes) * per_class * dim);
  d.labels.reserve(static_cast<std::size_t>(classes) * per_class);

  if (kind == SyntheticKind::gaussian_blobs) {
    auto means = blob_means(classes, dim, rng);
    for (int c = 0; c < classes; ++c)
      for (int s = 0; s < per_class; ++s) {
        for (int j = 0; j < dim; ++j) d.features.push_back(means[c][j] + noise * gauss(rng));
        d.labels.push_back(c);
      }
  } else {
    // Concentric rings in the first two coordinates, remaining dims pure noise.
    for (int c = 0; c < classes; ++c)
      for (int s = 0; s < per_class; ++s) {
        double r = 1.0 + c;
        double theta = uni(rng);
        d.features.push_back(r * std::cos(theta) + noise * gauss(rng));
        d.features.push_back(r * std::sin(theta) + noise * gauss(rng));
        for (int j = 2; j < dim; ++j) d.features.push_back(noise * gauss(rng));
        d.labels.push_back(c);
      }
  }
  return d;
}

TaskStream split_stream(const Dataset& d, int num_tasks, double label_ratio,
                        std::uint64_t seed, double test_fraction) {
  if (d.size() == 0) throw ParamError("split_stream: empty dataset");
  if (num_tasks < 1) throw ParamError("split_stream: num_tasks must be >= 1");
  if (d.class_count % num_tasks != 0)
    throw ProtocolError("split_stream: " + std::to_string(d.class_count) +
                        " classes not divisible by " + std::to_string(num_tasks) + " tasks");
  if (label_ratio <= 0.0 || label_ratio > 1.0)
    throw ParamError("split_stream: label_ratio must be in (0, 1]");

  const int classes_per_task = d.class_count / num_tasks;
  std::mt19937_64 rng(seed);

  std::vector<std::vector<int>> by_class(d.class_count);
  for (int i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

  TaskStream stream;
  stream.data = &d;
  stream.label_ratio = label_ratio;
  stream.tasks.resize(num_tasks);

  for (int c = 0; c < d.class_count; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw ProtocolError("split_stream: class " + std::to_string(c) + " is empty");
    std::shuffle(idx.begin(), idx.end(), rng);

    int n_test = static_cast<int>(std::lround(test_fraction * idx.size()));
    n_test = std::min<int>(n_test, static_cast<int>(idx.size()) - 1);
    int n_train = static_cast<int>(idx.size()) - n_test;
    int n_labeled = static_cast<int>(std::lround(label_ratio * n_train));
    if (n_labeled < 1)
      throw ProtocolError("split_stream: label_ratio " + std::to_string(label_ratio) +
                          " leaves class " + std::to_string(c) + " without labeled samples");
    n_labeled = std::min(n_labeled, n_train);

    Task& task = stream.tasks[c / classes_per_task];
    if (std::find(task.class_ids.begin(), task.class_ids.end(), c) == task.class_ids.end())
      task.class_ids.push_back(c);
    for (int i = 0; i < n_labeled; ++i) task.labeled_idx.push_back(idx[i]);
    for (int i = n_labeled; i < n_train; ++i) task.unlabeled_idx.push_back(idx[i]);
    for (int i = n_train; i < static_cast<int>(idx.size()); ++i) task.test_idx.push_back(idx[i]);
  }
  return stream;
}

ViewBatch augment_views(const std::vector<std::vector<double>>& unlabeled_rows,
                        const AugmentConfig& cfg, std::uint64_t seed) {
  if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0)
    throw ParamError("augment_views: dropout probability must be in [0, 1)");
  if (cfg.local_dropout_p < 0.0 || cfg.local_dropout_p >= 1.0)
    throw ParamError("augment_views: local dropout probability must be in [0, 1)");
  if (cfg.jitter_sigma < 0.0) throw ParamError("augment_views: jitter sigma must be >= 0");

  ViewBatch batch;
  batch.n_unlabeled = static_cast<int>(unlabeled_rows.size());
  batch.dim = unlabeled_rows.empty() ? 0 : static_cast<int>(unlabeled_rows.front().size());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto make_view = [&](const std::vector<double>& src, double sigma, double drop,
                       std::vector<double>& out) {
    for (double v : src) {
      double x = v + (sigma > 0.0 ? sigma * gauss(rng) : 0.0);
      if (drop > 0.0 && uni(rng) < drop) x = 0.0;
      out.push_back(x);
    }
  };

  batch.locals.resize(cfg.n_local);
  for (const auto& row : unlabeled_rows) {
    make_view(row, cfg.jitter_sigma, cfg.dropout_p, batch.view_a);
    make_view(row, cfg.jitter_sigma, cfg.dropout_p, batch.view_b);
    for (int l = 0; l < cfg.n_local; ++l)
      make_view(row, cfg.jitter_sigma, cfg.local_dropout_p, batch.locals[l]);
  }
  return batch;
}

Dataset load_csv(const std::string& path, bool has_header, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IngestionError("load_csv: cannot open " + path);

  auto split_line = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
  };

  std::string line;
  int row_no = 0;
  int label_col = -1;
  std::size_t width = 0;

  if (has_header) {
    if (!std::getline(in, line)) throw IngestionError("load_csv: missing header in " + path);
    ++row_no;
    auto header = split_line(line);
    width = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == label_column) label_col = static_cast<int>(i);
  }
  if (label_col < 0) {
    // Fall back to a zero-based index spelled as a number.
    try {
      std::size_t pos = 0;
      label_col = std::stoi(label_column, &pos);
      if (pos != label_column.size()) label_col = -1;
    } catch (...) {
      label_col = -1;
    }
    if (label_col < 0)
      throw IngestionError("load_csv: unknown label column '" + label_column + "'");
  }

  std::vector<std::vector<double>> rows;
  std::vector<double> raw_labels;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw IngestionError("load_csv: ragged row " + std::to_string(row_no) + " in " + path);
    if (label_col >= static_cast<int>(width))
      throw IngestionError("load_csv: label column out of range at row " + std::to_string(row_no));
    std::vector<double> feat;
    double label = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v;
      try {
        std::size_t pos = 0;
        v = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (...) {
        throw IngestionError("load_csv: non-numeric value '" + cells[i] + "' at row " +
                             std::to_string(row_no));
      }
      if (static_cast<int>(i) == label_col)
        label = v;
      else
        feat.push_back(v);
    }
    if (label != std::floor(label))
      throw IngestionError("load_csv: non-integer label at row " + std::to_string(row_no));
    rows.push_back(std::move(feat));
    raw_labels.push_back(label);
  }
  if (rows.empty()) throw IngestionError("load_csv: no data rows in " + path);

  // Relabel to a dense [0, C) range.
  std::vector<double> uniq = raw_labels;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  Dataset d;
  d.dim = static_cast<int>(rows.front().size());
  d.class_count = static_cast<int>(uniq.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.features.insert(d.features.end(), rows[i].begin(), rows[i].end());
    d.labels.push_back(static_cast<int>(
        std::lower_bound(uniq.begin(), uniq.end(), raw_labels[i]) - uniq.begin()));
  }

  // Standardize per column; constant columns become all zeros.
  const int n = d.size();
  for (int j = 0; j < d.dim; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += d.features[static_cast<std::size_t>(i) * d.dim + j];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      double dev = d.features[static_cast<std::size_t>(i) * d.dim + j] - mean;
      var += dev * dev;
    }
    var /= n;
    double sd = std::sqrt(std::max(var, 1e-12));
    for (int i = 0; i < n; ++i) {
      auto& v = d.features[static_cast<std::size_t>(i) * d.dim + j];
      v = var < 1e-12 ? 0.0 : (v - mean) / sd;
    }
  }
  return d;
}

void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("save_csv: cannot open " + path);
  for (int j = 0; j < d.dim; ++j) out << "f" << j << ",";
  out << "label\n";
  char buf[64];
  for (int i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.dim; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", d.row(i)[j]);
      out << buf << ",";
    }
    out << d.labels[i] << "\n";
  }
}

}  // namespace nncsl
