#include "nncsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace nncsl {

Method method_from_string(const std::string& s) {
  if (s == "finetune") return Method::finetune;
  if (s == "er") return Method::er;
  if (s == "paws") return Method::paws;
  if (s == "csl") return Method::csl;
  if (s == "nncsl") return Method::nncsl;
  if (s == "csl+kd") return Method::csl_kd;
  if (s == "csl+fd") return Method::csl_fd;
  throw ParamError("unknown method '" + s + "'");
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::er: return "er";
    case Method::paws: return "paws";
    case Method::csl: return "csl";
    case Method::nncsl: return "nncsl";
    case Method::csl_kd: return "csl+kd";
    case Method::csl_fd: return "csl+fd";
  }
  throw ParamError("unknown method enum");
}

void TrainConfig::validate() const {
  if (!(tau > eps && eps > 0.0)) throw ParamError("TrainConfig: need tau > eps > 0");
  if (lambda_lin < 0.0 || lambda_nnd < 0.0 || lambda_mem < 0.0)
    throw ParamError("TrainConfig: loss weights must be nonnegative");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ParamError("TrainConfig: label_smoothing must be in [0, 1)");
  if (epochs_per_task < 1) throw ParamError("TrainConfig: epochs_per_task must be >= 1");
  if (batch_labeled < 1 || batch_unlabeled < 0 || batch_buffer < 0)
    throw ParamError("TrainConfig: invalid batch sizes");
  if (momentum < 0.0 || momentum >= 1.0) throw ParamError("TrainConfig: invalid momentum");
}

// --- replay buffer --------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
  if (capacity < 0) throw ParamError("ReplayBuffer: negative capacity");
}

void ReplayBuffer::insert(BufferEntry e) {
  ++seen_;
  if (capacity_ == 0) return;
  if (static_cast<int>(entries_.size()) < capacity_) {
    entries_.push_back(std::move(e));
    return;
  }
  // Reservoir step: keep with probability capacity / seen.
  std::uniform_int_distribution<long> pick(0, seen_ - 1);
  long slot = pick(rng_);
  if (slot < capacity_) entries_[static_cast<std::size_t>(slot)] = std::move(e);
}

std::vector<BufferEntry> ReplayBuffer::draw(int n, std::mt19937_64& rng) const {
  n = std::min<int>(n, static_cast<int>(entries_.size()));
  std::vector<int> idx(entries_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<BufferEntry> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(entries_[idx[i]]);
  return out;
}

// --- learning-rate schedule ----------------------------------------------

double lr_schedule(long step, const ScheduleSpec& spec) {
  if (step < 0 || step > spec.total_steps)
    throw ParamError("lr_schedule: step outside the task budget");
  if (spec.warmup_steps > 0 && step <= spec.warmup_steps) {
    double frac = static_cast<double>(step) / spec.warmup_steps;
    return spec.base_lr + (spec.peak_lr - spec.base_lr) * frac;
  }
  long decay_steps = spec.total_steps - spec.warmup_steps;
  if (decay_steps <= 0) return spec.peak_lr;
  double progress = static_cast<double>(step - spec.warmup_steps) / decay_steps;
  return spec.final_lr +
         0.5 * (spec.peak_lr - spec.final_lr) * (1.0 + std::cos(M_PI * progress));
}

// --- trainer --------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.replay_unlabeled)
    unlabeled_buf_.emplace(cfg_.unlabeled_buffer_capacity,
                           cfg_.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
}

namespace {

Tensor rows_to_tensor(const std::vector<const double*>& rows, int dim) {
  std::vector<double> flat;
  flat.reserve(rows.size() * dim);
  for (const double* r : rows) flat.insert(flat.end(), r, r + dim);
  return Tensor::from({static_cast<int>(rows.size()), dim}, std::move(flat));
}

Tensor one_hot(const std::vector<int>& class_ids, int num_classes) {
  std::vector<double> rows(class_ids.size() * static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    rows[i * num_classes + class_ids[i]] = 1.0;
  return Tensor::from({static_cast<int>(class_ids.size()), num_classes}, std::move(rows));
}

}  // namespace

ViewBatch Trainer::compose_batch(const TaskStream& stream, int t, const ReplayBuffer& buf,
                                 std::mt19937_64& rng) {
  const Dataset& d = *stream.data;
  const Task& task = stream.tasks[t];

  // Unlabeled part: sample N indices, two global views each.
  std::vector<std::vector<double>> unlabeled_rows;
  std::vector<int> true_classes;
  if (!task.unlabeled_idx.empty() && cfg_.batch_unlabeled > 0) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(task.unlabeled_idx.size()) - 1);
    for (int i = 0; i < cfg_.batch_unlabeled; ++i) {
      int idx = task.unlabeled_idx[pick(rng)];
      unlabeled_rows.emplace_back(d.row(idx), d.row(idx) + d.dim);
      true_classes.push_back(d.labels[idx]);
    }
  }
  // Optional unlabeled replay: old unlabeled samples join the view batch.
  if (unlabeled_buf_ && unlabeled_buf_->size() > 0 && cfg_.batch_unlabeled > 0) {
    for (auto& e : unlabeled_buf_->draw(cfg_.batch_unlabeled / 2, rng)) {
      unlabeled_rows.push_back(std::move(e.x));
      true_classes.push_back(-1);
    }
  }
  ViewBatch batch = augment_views(unlabeled_rows, cfg_.augment, rng());
  batch.unlabeled_true_class = std::move(true_classes);

  // K current-task labeled samples.
  std::uniform_int_distribution<int> pickl(0, static_cast<int>(task.labeled_idx.size()) - 1);
  for (int i = 0; i < cfg_.batch_labeled; ++i) {
    int idx = task.labeled_idx[pickl(rng)];
    batch.labeled.push_back(
        {std::vector<double>(d.row(idx), d.row(idx) + d.dim), d.labels[idx], t});
  }

  // Buffer draw from previous tasks; fine-tuning never replays.
  if (cfg_.method != Method::finetune && cfg_.batch_buffer > 0) {
    for (auto& e : buf.draw(cfg_.batch_buffer, rng))
      batch.replayed.push_back({std::move(e.x), e.class_id, e.task_tag});
  }
  return batch;
}

void Trainer::sgd_step(Model& m, double lr) {
  auto params = m.parameters();
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i)
      velocity_[i].assign(params[i].size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data();
    const auto& g = params[i].grad();
    auto& v = velocity_[i];
    if (g.size() != p.size()) continue;  // parameter unused by this loss
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = cfg_.momentum * v[j] + g[j] + cfg_.weight_decay * p[j];
      p[j] -= lr * v[j];
    }
  }
}

std::vector<EpochLog> Trainer::train_task(Model& m, const TaskStream& stream, int t,
                                          ReplayBuffer& buf,
                                          const std::optional<TeacherSnapshot>& teacher) {
  if (t != tasks_done_)
    throw ProtocolError("train_task: task " + std::to_string(t) +
                        " out of order; expected " + std::to_string(tasks_done_));
  bool distills = cfg_.method == Method::nncsl || cfg_.method == Method::csl_kd ||
                  cfg_.method == Method::csl_fd;
  if (distills && t >= 1 && !teacher)
    throw ProtocolError("train_task: method needs a teacher snapshot for task >= 1");

  const Dataset& d = *stream.data;
  const Task& task = stream.tasks[t];
  m.mark_seen(task.class_ids);

  // Classes seen strictly before this task, for the KD baseline mask.
  std::vector<std::uint8_t> seen_prev(m.seen_classes());
  for (int c : task.class_ids) seen_prev[c] = 0;

  // Teacher feature bank: per-buffer-entry projections computed once per task.
  std::vector<std::vector<double>> teacher_bank;
  if (distills && teacher && cfg_.teacher_feature_bank) {
    for (const auto& e : buf.entries()) {
      Tensor x = Tensor::from({1, d.dim}, e.x);
      auto proj = teacher->model.forward(x).projections;
      teacher_bank.push_back(proj.data());
    }
  }

  std::mt19937_64 rng(cfg_.seed * 7919 + static_cast<std::uint64_t>(t) * 104729 + 13);

  const int steps_per_epoch = std::max<int>(
      1, cfg_.batch_unlabeled > 0
             ? static_cast<int>(task.unlabeled_idx.size()) / cfg_.batch_unlabeled
             : static_cast<int>(task.labeled_idx.size()) / cfg_.batch_labeled);
  ScheduleSpec sched{static_cast<long>(steps_per_epoch) * cfg_.epochs_per_task,
                     static_cast<long>(steps_per_epoch) * cfg_.warmup_epochs(),
                     cfg_.base_lr, cfg_.peak_lr, cfg_.final_lr};

  std::vector<EpochLog> logs;
  long step = 0;
  for (int epoch = 0; epoch < cfg_.epochs_per_task; ++epoch) {
    EpochLog log;
    log.task = t;
    log.epoch = epoch;
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      double lr = lr_schedule(step, sched);
      log.lr = lr;
      ViewBatch batch = compose_batch(stream, t, buf, rng);

      // Labeled forward: current-task samples first, then the buffer draw.
      std::vector<const double*> lab_rows;
      std::vector<int> lab_classes, lab_tasks;
      for (const auto& smp : batch.labeled) {
        lab_rows.push_back(smp.x.data());
        lab_classes.push_back(smp.class_id);
        lab_tasks.push_back(smp.task_tag);
      }
      for (const auto& smp : batch.replayed) {
        lab_rows.push_back(smp.x.data());
        lab_classes.push_back(smp.class_id);
        lab_tasks.push_back(smp.task_tag);
      }
      Tensor lab_x = rows_to_tensor(lab_rows, d.dim);
      ForwardOut lab_out = m.forward(lab_x);

      bool supervised_only = cfg_.method == Method::finetune || cfg_.method == Method::er;
      bool have_unlabeled = batch.n_unlabeled > 0 && !supervised_only;

      CslParts parts;
      Tensor distill_term;

      SupportSet full_support{lab_out.projections, one_hot(lab_classes, m.config().num_classes),
                              lab_tasks, lab_classes};

      ForwardOut out_a, out_b;
      if (have_unlabeled) {
        Tensor xa = Tensor::from({batch.n_unlabeled, batch.dim}, batch.view_a);
        Tensor xb = Tensor::from({batch.n_unlabeled, batch.dim}, batch.view_b);
        out_a = m.forward(xa);
        out_b = m.forward(xb);

        std::optional<SupportSet> support;
        if (cfg_.method == Method::paws)
          support = full_support;  // no filter: the continual failure mode
        else
          support = filter_support(full_support, t, FilterMode::current_only);

        if (support) {
          Tensor snn_total = loss_snn(out_a.projections, out_b.projections, *support,
                                      cfg_.eps, cfg_.tau);
          // Optional small views target both globals' sharpened predictions.
          if (!batch.locals.empty() && !batch.locals.front().empty()) {
            Tensor ta = snn_classify(out_a.projections, *support, cfg_.eps)
                            .distribution.detach();
            Tensor tb = snn_classify(out_b.projections, *support, cfg_.eps)
                            .distribution.detach();
            std::vector<Tensor> terms{scale(snn_total, 1.0)};
            for (const auto& local : batch.locals) {
              Tensor xl = Tensor::from({batch.n_unlabeled, batch.dim}, local);
              Tensor hl = m.forward(xl).projections;
              Tensor pl = snn_classify(hl, *support, cfg_.tau).distribution;
              terms.push_back(
                  scale(add(cross_entropy(pl, ta), cross_entropy(pl, tb)), 0.5));
            }
            Tensor acc = terms[0];
            for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
            snn_total = scale(acc, 1.0 / terms.size());
          }
          parts.snn = snn_total;

          // MEM over the sharpened pseudo-labels of both views, with gradient.
          PseudoLabel v_hat{concat_rows({snn_classify(out_a.projections, *support, cfg_.eps).distribution,
                                         snn_classify(out_b.projections, *support, cfg_.eps).distribution}),
                            cfg_.eps};
          parts.mem = loss_mem(v_hat);
        }
      }

      // Linear head on all J labeled samples (finetune uses current only by
      // construction: its batch has no replayed part).
      Tensor masked = mask_logits(lab_out.logits, m.seen_classes());
      Tensor targets = smooth_targets(lab_classes, m.config().num_classes, m.seen_classes(),
                                      cfg_.label_smoothing);
      parts.lin = loss_lin(masked, targets);

      Tensor total;
      if (supervised_only) {
        total = parts.lin;
      } else {
        total = loss_csl(parts, cfg_.lambda_mem, cfg_.lambda_lin);
        if (distills && teacher && t >= 1) {
          if (cfg_.method == Method::nncsl && have_unlabeled) {
            auto student_R = filter_support(full_support, t, FilterMode::previous_only);
            if (student_R) {
              // Teacher embeds the same support samples in the same order.
              std::vector<const double*> prev_rows;
              std::vector<int> prev_classes, prev_tasks;
              for (std::size_t i = 0; i < lab_rows.size(); ++i)
                if (lab_tasks[i] < t) {
                  prev_rows.push_back(lab_rows[i]);
                  prev_classes.push_back(lab_classes[i]);
                  prev_tasks.push_back(lab_tasks[i]);
                }
              Tensor teacher_feats;
              if (cfg_.teacher_feature_bank && !teacher_bank.empty()) {
                // Match entries by identity of the drawn buffer rows.
                std::vector<double> flat;
                for (const double* r : prev_rows) {
                  // Find the bank row for this sample.
                  std::size_t found = teacher_bank.size();
                  for (std::size_t bi = 0; bi < buf.entries().size(); ++bi)
                    if (std::equal(buf.entries()[bi].x.begin(), buf.entries()[bi].x.end(), r)) {
                      found = bi;
                      break;
                    }
                  if (found == teacher_bank.size())
                    throw StateError("teacher feature bank missing a buffer sample");
                  flat.insert(flat.end(), teacher_bank[found].begin(), teacher_bank[found].end());
                }
                teacher_feats = Tensor::from(
                    {static_cast<int>(prev_rows.size()), m.config().proj_dim}, std::move(flat));
              } else {
                teacher_feats =
                    teacher->model.forward(rows_to_tensor(prev_rows, d.dim)).projections;
              }
              SupportSet teacher_R{teacher_feats,
                                   one_hot(prev_classes, m.config().num_classes),
                                   prev_tasks, prev_classes};
              Tensor teacher_proj =
                  teacher->model.forward(Tensor::from({batch.n_unlabeled, batch.dim},
                                                      batch.view_a))
                      .projections;
              DistillBatch db{out_a.projections, teacher_proj, *student_R, teacher_R,
                              cfg_.tau};
              distill_term = nnd_loss(db);
            }
          } else if (cfg_.method == Method::csl_kd && have_unlabeled) {
            Tensor teacher_logits =
                teacher->model.forward(Tensor::from({batch.n_unlabeled, batch.dim},
                                                    batch.view_a))
                    .logits;
            distill_term = kd_loss(out_a.logits, teacher_logits, seen_prev,
                                   cfg_.kd_temperature);
          } else if (cfg_.method == Method::csl_fd && have_unlabeled) {
            Tensor teacher_proj =
                teacher->model.forward(Tensor::from({batch.n_unlabeled, batch.dim},
                                                    batch.view_a))
                    .projections;
            distill_term = feature_distill_loss(out_a.projections, teacher_proj);
          }
          if (distill_term.defined())
            total = loss_nncsl(total, distill_term, cfg_.lambda_nnd);
        }
      }

      double total_v = total.value();
      if (!std::isfinite(total_v)) {
        std::ostringstream os;
        os << "divergence at task " << (t + 1) << " step " << step << ": total=" << total_v;
        if (parts.snn.defined()) os << " snn=" << parts.snn.value();
        if (parts.mem.defined()) os << " mem=" << parts.mem.value();
        if (parts.lin.defined()) os << " lin=" << parts.lin.value();
        if (distill_term.defined()) os << " distill=" << distill_term.value();
        throw DivergenceError(os.str(), t, step);
      }

      m.zero_grad();
      backward(total);
      sgd_step(m, lr);

      log.loss_total += total_v;
      if (parts.snn.defined()) log.loss_snn += parts.snn.value();
      if (parts.mem.defined()) log.loss_mem += parts.mem.value();
      if (parts.lin.defined()) log.loss_lin += parts.lin.value();
      if (distill_term.defined()) log.loss_distill += distill_term.value();
    }
    log.loss_total /= steps_per_epoch;
    log.loss_snn /= steps_per_epoch;
    log.loss_mem /= steps_per_epoch;
    log.loss_lin /= steps_per_epoch;
    log.loss_distill /= steps_per_epoch;
    log.unlabeled_train_acc = task.unlabeled_idx.empty()
                                  ? 0.0
                                  : accuracy(m, d, task.unlabeled_idx);
    log.labeled_train_acc = accuracy(m, d, task.labeled_idx);
    logs.push_back(log);
  }

  // Task boundary: labeled samples enter the buffer.
  for (int idx : task.labeled_idx)
    buf.insert({std::vector<double>(d.row(idx), d.row(idx) + d.dim), d.labels[idx], t});
  if (unlabeled_buf_)
    for (int idx : task.unlabeled_idx)
      unlabeled_buf_->insert(
          {std::vector<double>(d.row(idx), d.row(idx) + d.dim), d.labels[idx], t});

  ++tasks_done_;
  return logs;
}

RunResult Trainer::run_stream(const TaskStream& stream) {
  const Dataset& d = *stream.data;
  const int T = stream.num_tasks();

  ModelConfig mc;
  mc.input_dim = d.dim;
  mc.backbone_widths = cfg_.backbone_widths;
  mc.proj_hidden = cfg_.proj_hidden;
  mc.proj_dim = cfg_.proj_dim;
  mc.num_classes = d.class_count;
  Model m(mc, cfg_.seed);

  RunResult result{ResultMatrix(T), {}, 0.0, Model()};

  // Random-init baseline per task, with every class visible to the head.
  {
    std::vector<int> all_classes(d.class_count);
    std::iota(all_classes.begin(), all_classes.end(), 0);
    Model probe(mc, cfg_.seed);
    probe.mark_seen(all_classes);
    for (int j = 0; j < T; ++j)
      result.matrix.random_baseline[j] = accuracy(probe, d, stream.tasks[j].test_idx);
  }

  ReplayBuffer buf(cfg_.buffer_capacity, cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  std::optional<TeacherSnapshot> teacher;
  double labeled_acc_sum = 0.0;

  for (int t = 0; t < T; ++t) {
    auto logs = train_task(m, stream, t, buf, teacher);
    for (auto& l : logs) result.curve.push_back(l);
    if (!logs.empty()) labeled_acc_sum += logs.back().labeled_train_acc;

    for (int j = 0; j < T; ++j)
      result.matrix.at(t, j) = accuracy(m, d, stream.tasks[j].test_idx);

    teacher = snapshot_teacher(m, t);
    if (!cfg_.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg_.checkpoint_dir);
      m.save(cfg_.checkpoint_dir + "/task" + std::to_string(t + 1) + ".json");
    }
  }
  result.mean_labeled_train_acc = labeled_acc_sum / T;
  result.final_model = std::move(m);
  return result;
}

double accuracy(const Model& m, const Dataset& d, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  std::vector<const double*> rows;
  for (int i : indices) rows.push_back(d.row(i));
  Tensor x = rows_to_tensor(rows, d.dim);
  auto pred = predict(m, x);
  int correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (pred[i] == d.labels[indices[i]]) ++correct;
  return static_cast<double>(correct) / indices.size();
}

}  // namespace nncsl
