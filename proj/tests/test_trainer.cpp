#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "nncsl/trainer.hpp"
#include "oracles.hpp"

using namespace nncsl;

namespace {

TrainConfig tiny_cfg(Method m = Method::nncsl, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.method = m;
  cfg.seed = seed;
  cfg.epochs_per_task = 2;
  cfg.batch_labeled = 4;
  cfg.batch_buffer = 4;
  cfg.batch_unlabeled = 8;
  cfg.buffer_capacity = 20;
  cfg.backbone_widths = {12, 12};
  cfg.proj_hidden = 8;
  cfg.proj_dim = 6;
  cfg.augment.n_local = 0;
  return cfg;
}

struct TinyWorld {
  Dataset data;
  TaskStream stream;
};

TinyWorld tiny_world(std::uint64_t seed = 5) {
  TinyWorld w;
  w.data = make_synthetic(SyntheticKind::gaussian_blobs, 4, 30, 5, seed, 0.3);
  w.stream = split_stream(w.data, 2, 0.2, seed, 0.25);
  return w;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (auto m : {Method::finetune, Method::er, Method::paws, Method::csl, Method::nncsl,
                 Method::csl_kd, Method::csl_fd})
    CHECK(method_from_string(method_to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("adam"), ParamError);
}

TEST_CASE("config validation") {
  TrainConfig cfg = tiny_cfg();
  CHECK_NOTHROW(cfg.validate());
  cfg.eps = cfg.tau;
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  cfg = tiny_cfg();
  cfg.lambda_nnd = -0.5;
  CHECK_THROWS_AS(cfg.validate(), ParamError);

  // Warmup: 10 epochs for big budgets, 20% for small ones.
  cfg = tiny_cfg();
  cfg.epochs_per_task = 60;
  CHECK(cfg.warmup_epochs() == 10);
  cfg.epochs_per_task = 40;
  CHECK(cfg.warmup_epochs() == 8);
  cfg.warmup_epochs_override = 3;
  CHECK(cfg.warmup_epochs() == 3);
}

TEST_CASE("replay buffer bounds and edge capacities") {
  ReplayBuffer small(5, 1);
  for (int i = 0; i < 100; ++i) small.insert({{double(i)}, i % 3, 0});
  CHECK(small.size() == 5);
  CHECK(small.seen() == 100);

  ReplayBuffer roomy(200, 1);
  for (int i = 0; i < 100; ++i) roomy.insert({{double(i)}, i % 3, 0});
  CHECK(roomy.size() == 100);  // no eviction below capacity

  ReplayBuffer none(0, 1);
  for (int i = 0; i < 100; ++i) none.insert({{double(i)}, i % 3, 0});
  CHECK(none.size() == 0);
  std::mt19937_64 rng(2);
  CHECK(none.draw(8, rng).empty());

  CHECK_THROWS_AS(ReplayBuffer(-1, 1), ParamError);
}

TEST_CASE("replay buffer draw has no duplicates and caps at the buffer size") {
  ReplayBuffer buf(10, 3);
  for (int i = 0; i < 10; ++i) buf.insert({{double(i)}, i, 0});
  std::mt19937_64 rng(4);
  auto got = buf.draw(7, rng);
  CHECK(got.size() == 7);
  std::set<double> seen;
  for (const auto& e : got) CHECK(seen.insert(e.x[0]).second);
  CHECK(buf.draw(50, rng).size() == 10);
}

TEST_CASE("reservoir retention is uniform over the insertion stream") {
  // 200 independent streams of 10k insertions, M=50. Pool the retained item
  // indices and compare decile occupancy against the binomial expectation.
  const int trials = 200, n = 10000, m = 50;
  std::vector<long> decile(10, 0);
  for (int trial = 0; trial < trials; ++trial) {
    ReplayBuffer buf(m, static_cast<std::uint64_t>(trial) + 1);
    for (int i = 0; i < n; ++i) buf.insert({{double(i)}, 0, 0});
    REQUIRE(buf.size() == m);
    for (const auto& e : buf.entries())
      ++decile[static_cast<int>(e.x[0]) / (n / 10)];
  }
  double total = double(trials) * m;         // 10000 retained items
  double expect = total / 10.0;              // 1000 per decile
  double sigma = std::sqrt(total * 0.1 * 0.9);  // binomial sd ~ 30
  for (long c : decile) CHECK(std::abs(c - expect) <= 3.0 * sigma);
}

TEST_CASE("lr schedule endpoints and cosine midpoint") {
  ScheduleSpec spec{100, 20, 0.02, 0.1, 0.008};
  CHECK(lr_schedule(0, spec) == doctest::Approx(0.02));
  CHECK(lr_schedule(10, spec) == doctest::Approx(0.06));  // halfway through warmup
  CHECK(lr_schedule(20, spec) == doctest::Approx(0.1));
  CHECK(std::abs(lr_schedule(60, spec) - 0.054) < 1e-9);  // (peak+final)/2
  CHECK(lr_schedule(100, spec) == doctest::Approx(0.008));
  CHECK_THROWS_AS(lr_schedule(-1, spec), ParamError);
  CHECK_THROWS_AS(lr_schedule(101, spec), ParamError);

  // Closed-form check across the decay phase.
  for (long s = 21; s < 100; ++s) {
    double progress = (s - 20) / 80.0;
    double expect = 0.008 + 0.5 * (0.1 - 0.008) * (1.0 + std::cos(M_PI * progress));
    CHECK(lr_schedule(s, spec) == doctest::Approx(expect));
  }
}

TEST_CASE("compose_batch arithmetic and tags") {
  TinyWorld w = tiny_world();
  TrainConfig cfg = tiny_cfg();
  cfg.batch_labeled = 3;
  cfg.batch_buffer = 3;
  cfg.batch_unlabeled = 8;
  Trainer tr(cfg);
  std::mt19937_64 rng(9);

  SUBCASE("task 1 with an empty buffer: J == K, no replays") {
    ReplayBuffer buf(20, 1);
    ViewBatch b = tr.compose_batch(w.stream, 0, buf, rng);
    CHECK(b.labeled.size() == 3);
    CHECK(b.replayed.empty());
    CHECK(b.n_unlabeled == 8);
    // Two global views per unlabeled sample.
    CHECK(b.view_a.size() == 8u * w.data.dim);
    CHECK(b.view_b.size() == 8u * w.data.dim);
    for (const auto& s : b.labeled) CHECK(s.task_tag == 0);
  }

  SUBCASE("later task draws the buffer; filtered support is current-only") {
    ReplayBuffer buf(20, 1);
    for (int idx : w.stream.tasks[0].labeled_idx)
      buf.insert({std::vector<double>(w.data.row(idx), w.data.row(idx) + w.data.dim),
                  w.data.labels[idx], 0});
    ViewBatch b = tr.compose_batch(w.stream, 1, buf, rng);
    CHECK(b.labeled.size() + b.replayed.size() == 6);  // J = K + buffer draw
    for (const auto& s : b.labeled) CHECK(s.task_tag == 1);
    for (const auto& s : b.replayed) CHECK(s.task_tag == 0);

    // Tag census after the current-task filter: only task-1 classes remain.
    std::set<int> task1_classes(w.stream.tasks[1].class_ids.begin(),
                                w.stream.tasks[1].class_ids.end());
    std::vector<int> tags, classes;
    for (const auto& s : b.labeled) {
      tags.push_back(s.task_tag);
      classes.push_back(s.class_id);
    }
    for (const auto& s : b.replayed) {
      tags.push_back(s.task_tag);
      classes.push_back(s.class_id);
    }
    int k = static_cast<int>(tags.size());
    SupportSet sup{Tensor::zeros({k, 2}), Tensor::zeros({k, 4}), tags, classes};
    auto cur = filter_support(sup, 1, FilterMode::current_only);
    REQUIRE(cur.has_value());
    for (int c : cur->class_tags) CHECK(task1_classes.count(c) == 1);
    CHECK(cur->size() == 3);
  }

  SUBCASE("finetune never replays") {
    TrainConfig ft = tiny_cfg(Method::finetune);
    Trainer trf(ft);
    ReplayBuffer buf(20, 1);
    buf.insert({std::vector<double>(w.data.dim, 0.0), 0, 0});
    ViewBatch b = trf.compose_batch(w.stream, 0, buf, rng);
    CHECK(b.replayed.empty());
  }
}

TEST_CASE("train_task enforces order and teacher presence") {
  TinyWorld w = tiny_world();
  Trainer tr(tiny_cfg(Method::nncsl));
  Model m({w.data.dim, {12, 12}, 8, 6, 4}, 1);
  ReplayBuffer buf(20, 1);

  CHECK_THROWS_AS(tr.train_task(m, w.stream, 1, buf, std::nullopt), ProtocolError);
  auto logs = tr.train_task(m, w.stream, 0, buf, std::nullopt);
  CHECK(logs.size() == 2);  // one entry per epoch
  CHECK(buf.size() > 0);    // task-end insertion happened
  // Distilling methods need a teacher from task 2 on.
  CHECK_THROWS_AS(tr.train_task(m, w.stream, 1, buf, std::nullopt), ProtocolError);
  auto teacher = snapshot_teacher(m, 0);
  CHECK_NOTHROW(tr.train_task(m, w.stream, 1, buf, teacher));
}

TEST_CASE("supervised baselines skip every unlabeled loss") {
  TinyWorld w = tiny_world();
  for (Method method : {Method::finetune, Method::er}) {
    Trainer tr(tiny_cfg(method));
    Model m({w.data.dim, {12, 12}, 8, 6, 4}, 1);
    ReplayBuffer buf(20, 1);
    auto logs = tr.train_task(m, w.stream, 0, buf, std::nullopt);
    for (const auto& l : logs) {
      CHECK(l.loss_snn == 0.0);
      CHECK(l.loss_mem == 0.0);
      CHECK(l.loss_distill == 0.0);
      CHECK(l.loss_lin > 0.0);
      CHECK(l.loss_total == doctest::Approx(l.loss_lin));
    }
  }
}

TEST_CASE("training losses include every configured component") {
  TinyWorld w = tiny_world();
  Trainer tr(tiny_cfg(Method::nncsl));
  Model m({w.data.dim, {12, 12}, 8, 6, 4}, 1);
  ReplayBuffer buf(20, 1);
  tr.train_task(m, w.stream, 0, buf, std::nullopt);
  auto teacher = snapshot_teacher(m, 0);
  auto logs = tr.train_task(m, w.stream, 1, buf, teacher);
  for (const auto& l : logs) {
    CHECK(l.loss_snn != 0.0);
    CHECK(l.loss_lin > 0.0);
    CHECK(l.loss_distill != 0.0);  // previous-class support exists at task 2
  }
}

TEST_CASE("identical seed and config give bitwise-identical final parameters") {
  TinyWorld w = tiny_world();
  auto run = [&] {
    Trainer tr(tiny_cfg(Method::nncsl, 11));
    return tr.run_stream(w.stream);
  };
  RunResult a = run();
  RunResult b = run();
  auto pa = a.final_model.parameters();
  auto pb = b.final_model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data() == pb[i].data());
  CHECK(a.matrix.R == b.matrix.R);
}

TEST_CASE("one small-lr step on a fixed batch decreases its loss") {
  TinyWorld w = tiny_world();
  Model m({w.data.dim, {12, 12}, 8, 6, 4}, 3);
  m.mark_seen(w.stream.tasks[0].class_ids);

  std::vector<const double*> rows;
  std::vector<int> classes;
  for (int idx : w.stream.tasks[0].labeled_idx) {
    rows.push_back(w.data.row(idx));
    classes.push_back(w.data.labels[idx]);
  }
  std::vector<double> flat;
  for (const double* r : rows) flat.insert(flat.end(), r, r + w.data.dim);
  Tensor x = Tensor::from({static_cast<int>(rows.size()), w.data.dim}, flat);

  auto batch_loss = [&] {
    Tensor masked = mask_logits(m.forward(x).logits, m.seen_classes());
    return loss_lin(masked, smooth_targets(classes, 4, m.seen_classes(), 0.1));
  };
  Tensor loss = batch_loss();
  double before = loss.value();
  backward(loss);
  for (Tensor p : m.parameters()) {
    if (!p.has_grad()) continue;
    for (std::size_t j = 0; j < p.size(); ++j) p.data()[j] -= 1e-4 * p.grad()[j];
  }
  CHECK(batch_loss().value() < before);
}

TEST_CASE("run_stream fills the matrix and shows forgetting under finetune") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 4, 40, 6, 7, 0.15);
  TaskStream stream = split_stream(d, 2, 0.5, 7, 0.25);

  TrainConfig cfg = tiny_cfg(Method::finetune, 7);
  cfg.epochs_per_task = 10;
  Trainer tr(cfg);
  RunResult res = tr.run_stream(stream);

  REQUIRE(res.matrix.T == 2);
  CHECK(res.matrix.final_row_complete());
  CHECK(res.matrix.diagonal_complete());
  for (double v : res.matrix.R) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Current task is learned; the first task collapses without replay.
  CHECK(res.matrix.at(1, 1) > 0.8);
  CHECK(res.matrix.at(1, 0) < res.matrix.at(0, 0));
  // Every class ends up marked seen.
  for (auto s : res.final_model.seen_classes()) CHECK(s == 1);
  // Curve carries one row per (task, epoch).
  CHECK(res.curve.size() == 2u * cfg.epochs_per_task);
}

TEST_CASE("single-task stream yields a 1x1 matrix") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 2, 20, 4, 9, 0.2);
  TaskStream stream = split_stream(d, 1, 0.5, 9, 0.25);
  Trainer tr(tiny_cfg(Method::csl, 9));
  RunResult res = tr.run_stream(stream);
  CHECK(res.matrix.T == 1);
  CHECK(res.matrix.final_row_complete());
}

TEST_CASE("unlabeled replay buffer is optional and bounded") {
  TinyWorld w = tiny_world();
  TrainConfig cfg = tiny_cfg(Method::csl, 5);
  cfg.replay_unlabeled = true;
  cfg.unlabeled_buffer_capacity = 16;
  Trainer tr(cfg);
  RunResult res = tr.run_stream(w.stream);
  CHECK(res.matrix.final_row_complete());
}
