#include "nncsl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace nncsl {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                         const std::string& prefix) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ParamError("config: unknown key '" + prefix + it.key() + "'");
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  reject_unknown_keys(j, {"dataset", "num_tasks", "label_ratio", "test_fraction",
                          "buffer_capacity", "method", "methods", "seeds", "output_dir",
                          "dump_embeddings", "train"},
                      "");
  if (j.contains("dataset")) {
    const auto& dj = j.at("dataset");
    reject_unknown_keys(dj, {"kind", "classes", "per_class", "dim", "noise", "seed",
                             "path", "has_header", "label_column"},
                        "dataset.");
    auto& d = cfg.dataset;
    d.kind = dj.value("kind", d.kind);
    d.classes = dj.value("classes", d.classes);
    d.per_class = dj.value("per_class", d.per_class);
    d.dim = dj.value("dim", d.dim);
    d.noise = dj.value("noise", d.noise);
    d.seed = dj.value("seed", d.seed);
    d.path = dj.value("path", d.path);
    d.has_header = dj.value("has_header", d.has_header);
    d.label_column = dj.value("label_column", d.label_column);
  }
  cfg.num_tasks = j.value("num_tasks", cfg.num_tasks);
  cfg.label_ratio = j.value("label_ratio", cfg.label_ratio);
  cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
  cfg.buffer_capacity = j.value("buffer_capacity", cfg.buffer_capacity);
  if (j.contains("methods"))
    cfg.methods = j.at("methods").get<std::vector<std::string>>();
  else if (j.contains("method"))
    cfg.methods = {j.at("method").get<std::string>()};
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.dump_embeddings = j.value("dump_embeddings", cfg.dump_embeddings);

  if (j.contains("train")) {
    const auto& tj = j.at("train");
    reject_unknown_keys(
        tj,
        {"lambda_lin", "lambda_nnd", "lambda_mem", "label_smoothing", "eps", "tau",
         "epochs_per_task", "warmup_epochs", "base_lr", "peak_lr", "final_lr", "momentum",
         "weight_decay", "batch_labeled", "batch_buffer", "batch_unlabeled",
         "kd_temperature", "teacher_feature_bank", "replay_unlabeled",
         "unlabeled_buffer_capacity", "jitter_sigma", "dropout_p", "n_local",
         "local_dropout_p", "backbone_widths", "proj_hidden", "proj_dim"},
        "train.");
    auto& t = cfg.train;
    t.lambda_lin = tj.value("lambda_lin", t.lambda_lin);
    t.lambda_nnd = tj.value("lambda_nnd", t.lambda_nnd);
    t.lambda_mem = tj.value("lambda_mem", t.lambda_mem);
    t.label_smoothing = tj.value("label_smoothing", t.label_smoothing);
    t.eps = tj.value("eps", t.eps);
    t.tau = tj.value("tau", t.tau);
    t.epochs_per_task = tj.value("epochs_per_task", t.epochs_per_task);
    t.warmup_epochs_override = tj.value("warmup_epochs", t.warmup_epochs_override);
    t.base_lr = tj.value("base_lr", t.base_lr);
    t.peak_lr = tj.value("peak_lr", t.peak_lr);
    t.final_lr = tj.value("final_lr", t.final_lr);
    t.momentum = tj.value("momentum", t.momentum);
    t.weight_decay = tj.value("weight_decay", t.weight_decay);
    t.batch_labeled = tj.value("batch_labeled", t.batch_labeled);
    t.batch_buffer = tj.value("batch_buffer", t.batch_buffer);
    t.batch_unlabeled = tj.value("batch_unlabeled", t.batch_unlabeled);
    t.kd_temperature = tj.value("kd_temperature", t.kd_temperature);
    t.teacher_feature_bank = tj.value("teacher_feature_bank", t.teacher_feature_bank);
    t.replay_unlabeled = tj.value("replay_unlabeled", t.replay_unlabeled);
    t.unlabeled_buffer_capacity =
        tj.value("unlabeled_buffer_capacity", t.unlabeled_buffer_capacity);
    t.augment.jitter_sigma = tj.value("jitter_sigma", t.augment.jitter_sigma);
    t.augment.dropout_p = tj.value("dropout_p", t.augment.dropout_p);
    t.augment.n_local = tj.value("n_local", t.augment.n_local);
    t.augment.local_dropout_p = tj.value("local_dropout_p", t.augment.local_dropout_p);
    t.backbone_widths = tj.value("backbone_widths", t.backbone_widths);
    t.proj_hidden = tj.value("proj_hidden", t.proj_hidden);
    t.proj_dim = tj.value("proj_dim", t.proj_dim);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParamError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ParamError("config: parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"classes", cfg.dataset.classes},
                  {"per_class", cfg.dataset.per_class},
                  {"dim", cfg.dataset.dim},
                  {"noise", cfg.dataset.noise},
                  {"seed", cfg.dataset.seed},
                  {"path", cfg.dataset.path},
                  {"has_header", cfg.dataset.has_header},
                  {"label_column", cfg.dataset.label_column}};
  j["num_tasks"] = cfg.num_tasks;
  j["label_ratio"] = cfg.label_ratio;
  j["test_fraction"] = cfg.test_fraction;
  j["buffer_capacity"] = cfg.buffer_capacity;
  j["methods"] = cfg.methods;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["dump_embeddings"] = cfg.dump_embeddings;
  const auto& t = cfg.train;
  j["train"] = {{"lambda_lin", t.lambda_lin},
                {"lambda_nnd", t.lambda_nnd},
                {"lambda_mem", t.lambda_mem},
                {"label_smoothing", t.label_smoothing},
                {"eps", t.eps},
                {"tau", t.tau},
                {"epochs_per_task", t.epochs_per_task},
                {"warmup_epochs", t.warmup_epochs()},
                {"base_lr", t.base_lr},
                {"peak_lr", t.peak_lr},
                {"final_lr", t.final_lr},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"batch_labeled", t.batch_labeled},
                {"batch_buffer", t.batch_buffer},
                {"batch_unlabeled", t.batch_unlabeled},
                {"kd_temperature", t.kd_temperature},
                {"teacher_feature_bank", t.teacher_feature_bank},
                {"replay_unlabeled", t.replay_unlabeled},
                {"unlabeled_buffer_capacity", t.unlabeled_buffer_capacity},
                {"jitter_sigma", t.augment.jitter_sigma},
                {"dropout_p", t.augment.dropout_p},
                {"n_local", t.augment.n_local},
                {"local_dropout_p", t.augment.local_dropout_p},
                {"backbone_widths", t.backbone_widths},
                {"proj_hidden", t.proj_hidden},
                {"proj_dim", t.proj_dim}};
  return j;
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> errs;
  const auto& d = cfg.dataset;
  if (d.kind != "gaussian_blobs" && d.kind != "concentric_rings" && d.kind != "csv")
    errs.push_back("dataset.kind: unknown kind '" + d.kind + "'");
  if (d.kind == "csv") {
    if (d.path.empty())
      errs.push_back("dataset.path: required for csv datasets");
    else if (!std::filesystem::exists(d.path))
      errs.push_back("dataset.path: file does not exist: " + d.path);
  } else {
    if (d.classes < 2) errs.push_back("dataset.classes: need at least 2");
    if (d.per_class < 4) errs.push_back("dataset.per_class: need at least 4");
    if (d.dim < 2) errs.push_back("dataset.dim: need at least 2");
    if (d.noise < 0) errs.push_back("dataset.noise: must be nonnegative");
    if (d.classes >= 2 && cfg.num_tasks >= 1 && d.classes % cfg.num_tasks != 0)
      errs.push_back("num_tasks: " + std::to_string(d.classes) +
                     " classes not divisible by " + std::to_string(cfg.num_tasks));
    // Stratified labeling needs at least one label per class.
    int train_per_class =
        d.per_class - static_cast<int>(std::lround(cfg.test_fraction * d.per_class));
    if (d.per_class >= 4 &&
        static_cast<int>(std::lround(cfg.label_ratio * train_per_class)) < 1)
      errs.push_back("label_ratio: " + fmt(cfg.label_ratio) +
                     " leaves no labeled sample per class");
  }
  if (cfg.num_tasks < 1) errs.push_back("num_tasks: must be >= 1");
  if (cfg.label_ratio <= 0.0 || cfg.label_ratio > 1.0)
    errs.push_back("label_ratio: must be in (0, 1]");
  if (cfg.test_fraction < 0.0 || cfg.test_fraction >= 1.0)
    errs.push_back("test_fraction: must be in [0, 1)");
  if (cfg.buffer_capacity < 0) errs.push_back("buffer_capacity: must be >= 0");
  if (cfg.seeds.empty()) errs.push_back("seeds: must be nonempty");
  for (const auto& mth : cfg.methods) {
    try {
      method_from_string(mth);
    } catch (const ParamError&) {
      errs.push_back("methods: unknown method '" + mth + "'");
    }
  }
  if (!(cfg.train.tau > cfg.train.eps))
    errs.push_back("train.tau: must be greater than train.eps");
  if (cfg.train.eps <= 0.0) errs.push_back("train.eps: must be positive");
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    errs.push_back(std::string("train: ") + e.what());
  }
  return errs;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::string s = resolved_config_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Dataset build_dataset(const DatasetSpec& spec, std::uint64_t run_seed) {
  if (spec.kind == "csv") return load_csv(spec.path, spec.has_header, spec.label_column);
  SyntheticKind kind = spec.kind == "gaussian_blobs" ? SyntheticKind::gaussian_blobs
                                                     : SyntheticKind::concentric_rings;
  return make_synthetic(kind, spec.classes, spec.per_class, spec.dim,
                        spec.seed + run_seed * 7919, spec.noise);
}

std::string resolve_output_dir(const std::string& configured) {
  const char* root = std::getenv("NNCSL_OUTPUT_ROOT");
  if (!root || !*root) return configured;
  return std::string(root) + "/" + configured;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_curve_csv(const std::string& path, const std::vector<EpochLog>& curve,
                     const std::string& hash) {
  std::ofstream out(path);
  out << "# config_hash=" << hash << "\n";
  out << "task,epoch,lr,loss_total,loss_snn,loss_mem,loss_lin,loss_distill,"
         "unlabeled_train_acc,labeled_train_acc\n";
  for (const auto& e : curve)
    out << (e.task + 1) << "," << (e.epoch + 1) << "," << fmt(e.lr) << ","
        << fmt(e.loss_total) << "," << fmt(e.loss_snn) << "," << fmt(e.loss_mem) << ","
        << fmt(e.loss_lin) << "," << fmt(e.loss_distill) << ","
        << fmt(e.unlabeled_train_acc) << "," << fmt(e.labeled_train_acc) << "\n";
}

void write_embeddings_csv(const std::string& path, const Model& m, const Dataset& d,
                          const TaskStream& stream, const std::string& hash) {
  std::ofstream out(path);
  out << "# config_hash=" << hash << "\n";
  out << "sample_id,class";
  for (int j = 0; j < m.config().proj_dim; ++j) out << ",h" << j;
  out << "\n";
  for (const auto& task : stream.tasks)
    for (int idx : task.test_idx) {
      Tensor x = Tensor::from({1, d.dim}, std::vector<double>(d.row(idx), d.row(idx) + d.dim));
      Tensor h = l2_normalize_rows(m.forward(x).projections);
      out << idx << "," << d.labels[idx];
      for (double v : h.data()) out << "," << fmt(v);
      out << "\n";
    }
}

nlohmann::json summary_json(const SeedResult& r, const ExperimentConfig& cfg,
                            const ResultMatrix& rm, const std::string& hash) {
  nlohmann::json j;
  j["config_hash"] = hash;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["acc"] = r.acc;
  if (rm.T >= 2) {
    j["fwt"] = r.fwt;
    j["bwt"] = r.bwt;
    if (rm.T >= 3) j["bwt_excluding_first"] = bwt(rm, true);
  }
  j["per_task_final"] = r.per_task_final;
  j["mean_labeled_train_acc"] = r.mean_labeled_train_acc;
  j["random_baseline"] = rm.random_baseline;
  j["config"] = resolved_config_json(cfg);
  return j;
}

struct Stats {
  double mean = 0.0, stdev = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= xs.size();
  for (double x : xs) s.stdev += (x - s.mean) * (x - s.mean);
  s.stdev = xs.size() > 1 ? std::sqrt(s.stdev / (xs.size() - 1)) : 0.0;
  return s;
}

void write_aggregate(const std::string& path, const std::string& method,
                     const std::vector<nlohmann::json>& summaries) {
  nlohmann::json agg;
  agg["method"] = method;
  agg["num_seeds"] = summaries.size();
  auto collect = [&](const char* key) {
    std::vector<double> xs;
    for (const auto& s : summaries)
      if (s.contains(key)) xs.push_back(s.at(key).get<double>());
    return xs;
  };
  for (const char* key : {"acc", "fwt", "bwt", "bwt_excluding_first",
                          "mean_labeled_train_acc"}) {
    auto xs = collect(key);
    if (xs.empty()) continue;
    Stats s = stats_of(xs);
    agg[key] = {{"mean", s.mean}, {"stdev", s.stdev}};
  }
  // Per-task finals, element-wise across seeds.
  if (!summaries.empty() && summaries.front().contains("per_task_final")) {
    std::size_t T = summaries.front().at("per_task_final").size();
    std::vector<double> means, stdevs;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> xs;
      for (const auto& s : summaries) xs.push_back(s.at("per_task_final").at(t).get<double>());
      Stats st = stats_of(xs);
      means.push_back(st.mean);
      stdevs.push_back(st.stdev);
    }
    agg["per_task_final"] = {{"mean", means}, {"stdev", stdevs}};
  }
  if (!summaries.empty()) agg["config_hash"] = summaries.front().value("config_hash", "");
  std::ofstream out(path);
  out << agg.dump(2) << "\n";
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  auto errs = validate_config(cfg);
  if (!errs.empty()) {
    for (const auto& e : errs) log << "config error: " << e << "\n";
    return 1;
  }
  std::string out_dir = resolve_output_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);
  std::string hash = hash_hex(config_hash(cfg));

  try {
    for (const auto& method_name : cfg.methods) {
      std::vector<nlohmann::json> summaries;
      for (std::uint64_t seed : cfg.seeds) {
        Dataset data = build_dataset(cfg.dataset, seed);
        TaskStream stream =
            split_stream(data, cfg.num_tasks, cfg.label_ratio, seed, cfg.test_fraction);

        TrainConfig tc = cfg.train;
        tc.method = method_from_string(method_name);
        tc.seed = seed;
        tc.buffer_capacity = cfg.buffer_capacity;
        Trainer trainer(tc);
        RunResult run = trainer.run_stream(stream);

        SeedResult r;
        r.method = method_name;
        r.seed = seed;
        r.acc = acc(run.matrix);
        if (run.matrix.T >= 2) {
          r.fwt = fwt(run.matrix);
          r.bwt = bwt(run.matrix, false);
        }
        r.per_task_final = per_task_final(run.matrix);
        r.mean_labeled_train_acc = run.mean_labeled_train_acc;

        std::string stem = out_dir + "/" + method_name + "_seed" + std::to_string(seed);
        {
          std::ofstream mcsv(stem + "_matrix.csv");
          mcsv << matrix_to_csv(run.matrix, "config_hash=" + hash);
        }
        write_curve_csv(stem + "_curve.csv", run.curve, hash);
        nlohmann::json sj = summary_json(r, cfg, run.matrix, hash);
        {
          std::ofstream sout(stem + "_summary.json");
          sout << sj.dump(2) << "\n";
        }
        if (cfg.dump_embeddings)
          write_embeddings_csv(stem + "_embeddings.csv", run.final_model, data, stream, hash);
        summaries.push_back(std::move(sj));
        log << method_name << " seed " << seed << ": acc=" << fmt(r.acc) << "\n";
      }
      write_aggregate(out_dir + "/" + method_name + "_aggregate.json", method_name,
                      summaries);
    }
  } catch (const DivergenceError& e) {
    log << "divergence: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int report_experiment(const std::string& output_dir, std::ostream& log) {
  std::string dir = resolve_output_dir(output_dir);
  if (!std::filesystem::is_directory(dir)) {
    log << "report: no such directory: " << dir << "\n";
    return 1;
  }
  std::map<std::string, std::vector<nlohmann::json>> by_method;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.size() < 13 || name.substr(name.size() - 13) != "_summary.json") continue;
    std::ifstream in(entry.path());
    nlohmann::json j = nlohmann::json::parse(in);
    by_method[j.value("method", "unknown")].push_back(std::move(j));
  }
  if (by_method.empty()) {
    log << "report: no summaries found in " << dir << "\n";
    return 1;
  }
  for (auto& [method, summaries] : by_method) {
    std::sort(summaries.begin(), summaries.end(),
              [](const auto& a, const auto& b) {
                return a.value("seed", 0) < b.value("seed", 0);
              });
    write_aggregate(dir + "/" + method + "_aggregate.json", method, summaries);
    std::vector<double> accs;
    for (const auto& s : summaries) accs.push_back(s.value("acc", 0.0));
    Stats st = stats_of(accs);
    log << method << ": acc " << fmt(st.mean) << " +/- " << fmt(st.stdev) << " over "
        << summaries.size() << " seeds\n";
  }
  return 0;
}

}  // namespace nncsl
