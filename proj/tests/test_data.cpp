#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "nncsl/data.hpp"

using namespace nncsl;

TEST_CASE("make_synthetic zero noise collapses to class means") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 2, 4, 3, 11, 0.0);
  for (int c = 0; c < 2; ++c) {
    const double* first = d.row(c * 4);
    for (int s = 1; s < 4; ++s)
      for (int j = 0; j < 3; ++j) CHECK(d.row(c * 4 + s)[j] == first[j]);
  }
}

TEST_CASE("make_synthetic counts and balance") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 10, 100, 8, 5, 0.3);
  CHECK(d.size() == 1000);
  std::vector<int> counts(10, 0);
  for (int l : d.labels) ++counts[l];
  for (int c : counts) CHECK(c == 100);

  CHECK_THROWS_AS(make_synthetic(SyntheticKind::gaussian_blobs, 1, 100, 8, 5, 0.3), ParamError);
  CHECK_THROWS_AS(make_synthetic(SyntheticKind::gaussian_blobs, 4, 3, 8, 5, 0.3), ParamError);
  CHECK_THROWS_AS(make_synthetic(SyntheticKind::gaussian_blobs, 4, 100, 1, 5, 0.3), ParamError);
}

TEST_CASE("blobs are separable: brute-force 1-NN scores above 95%") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 4, 100, 6, 17, 0.1);
  int correct = 0;
  for (int i = 0; i < d.size(); ++i) {
    double best = 1e300;
    int best_label = -1;
    for (int j = 0; j < d.size(); ++j) {
      if (j == i) continue;
      double dist = 0.0;
      for (int k = 0; k < d.dim; ++k) {
        double diff = d.row(i)[k] - d.row(j)[k];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_label = d.labels[j];
      }
    }
    if (best_label == d.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / d.size() > 0.95);
}

TEST_CASE("split_stream partitions classes and labels per the ratio") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 10, 100, 6, 3, 0.2);
  TaskStream s = split_stream(d, 5, 0.05, 1, 0.0);
  CHECK(s.num_tasks() == 5);
  for (const auto& task : s.tasks) CHECK(task.class_ids.size() == 2);

  // 100 samples/class, no test holdout, ratio 0.05 -> 5 labeled + 95 unlabeled.
  for (const auto& task : s.tasks) {
    CHECK(task.labeled_idx.size() == 10);
    CHECK(task.unlabeled_idx.size() == 190);
  }
}

TEST_CASE("split_stream fully labeled edge leaves no unlabeled samples") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 4, 20, 4, 3, 0.2);
  TaskStream s = split_stream(d, 2, 1.0, 1, 0.25);
  for (const auto& task : s.tasks) CHECK(task.unlabeled_idx.empty());
}

TEST_CASE("split_stream error paths") {
  Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, 10, 100, 6, 3, 0.2);
  CHECK_THROWS_AS(split_stream(d, 3, 0.05, 1), ProtocolError);   // 10 % 3 != 0
  CHECK_THROWS_AS(split_stream(d, 5, 0.001, 1), ProtocolError);  // no label per class
  CHECK_THROWS_AS(split_stream(d, 5, 0.0, 1), ParamError);
}

TEST_CASE("stream invariants hold over random configurations") {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 25; ++trial) {
    int tasks = 2 + static_cast<int>(rng() % 4);       // 2..5
    int cpt = 1 + static_cast<int>(rng() % 3);         // classes per task
    int classes = tasks * cpt;
    int per_class = 20 + static_cast<int>(rng() % 60);
    double ratio = 0.1 + 0.2 * (rng() % 4);
    Dataset d = make_synthetic(SyntheticKind::gaussian_blobs, classes, per_class, 5,
                               rng(), 0.3);
    TaskStream s = split_stream(d, tasks, ratio, rng(), 0.2);

    std::set<int> all_classes;
    std::set<int> all_indices;
    for (const auto& task : s.tasks) {
      for (int c : task.class_ids) CHECK(all_classes.insert(c).second);  // disjoint
      std::set<int> task_classes(task.class_ids.begin(), task.class_ids.end());
      std::set<int> labeled_classes;
      for (int i : task.labeled_idx) {
        CHECK(task_classes.count(d.labels[i]) == 1);
        CHECK(all_indices.insert(i).second);
        labeled_classes.insert(d.labels[i]);
      }
      CHECK(labeled_classes == task_classes);  // stratified: every class labeled
      for (int i : task.unlabeled_idx) {
        CHECK(task_classes.count(d.labels[i]) == 1);
        CHECK(all_indices.insert(i).second);  // disjoint from labeled
      }
      double total = static_cast<double>(task.labeled_idx.size() + task.unlabeled_idx.size());
      double observed = task.labeled_idx.size() / total;
      CHECK(std::abs(observed - ratio) < static_cast<double>(tasks) / total + 0.05);
    }
    CHECK(static_cast<int>(all_classes.size()) == classes);
  }
}

TEST_CASE("augment_views identity when jitter and dropout are zero") {
  std::vector<std::vector<double>> rows{{1, 2, 3}, {4, 5, 6}};
  AugmentConfig cfg;
  cfg.jitter_sigma = 0.0;
  cfg.dropout_p = 0.0;
  cfg.n_local = 0;
  ViewBatch b = augment_views(rows, cfg, 9);
  CHECK(b.view_a == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(b.view_b == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("augment_views dropout rate matches its expectation") {
  std::vector<std::vector<double>> rows{{1, 1, 1, 1, 1, 1, 1, 1}};
  AugmentConfig cfg;
  cfg.jitter_sigma = 0.0;
  cfg.dropout_p = 0.5;
  cfg.n_local = 0;
  long zeros = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    ViewBatch b = augment_views(rows, cfg, seed);
    for (double v : b.view_a) {
      if (v == 0.0) ++zeros;
      ++total;
    }
  }
  double rate = static_cast<double>(zeros) / total;
  CHECK(rate == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("augment_views is deterministic given the seed and rejects bad dropout") {
  std::vector<std::vector<double>> rows{{1, 2, 3, 4}};
  AugmentConfig cfg;
  ViewBatch a = augment_views(rows, cfg, 77);
  ViewBatch b = augment_views(rows, cfg, 77);
  CHECK(a.view_a == b.view_a);
  CHECK(a.view_b == b.view_b);
  CHECK(a.locals == b.locals);

  cfg.dropout_p = 1.0;
  CHECK_THROWS_AS(augment_views(rows, cfg, 1), ParamError);
}

TEST_CASE("csv loading") {
  std::string path = (std::filesystem::temp_directory_path() / "nncsl_test.csv").string();

  SUBCASE("hand-written rows standardize as expected") {
    {
      std::ofstream f(path);
      f << "a,b,label\n1,5,0\n2,5,1\n3,5,0\n";
    }
    Dataset d = load_csv(path, true, "label");
    CHECK(d.size() == 3);
    CHECK(d.dim == 2);
    CHECK(d.class_count == 2);
    // Column a: mean 2, sd sqrt(2/3); column b constant -> zeros.
    double sd = std::sqrt(2.0 / 3.0);
    CHECK(d.row(0)[0] == doctest::Approx(-1.0 / sd));
    CHECK(d.row(1)[0] == doctest::Approx(0.0));
    CHECK(d.row(2)[0] == doctest::Approx(1.0 / sd));
    for (int i = 0; i < 3; ++i) CHECK(d.row(i)[1] == 0.0);
  }

  SUBCASE("ragged and non-numeric rows report the row number") {
    {
      std::ofstream f(path);
      f << "a,b,label\n1,2,0\n1,2\n";
    }
    try {
      load_csv(path, true, "label");
      FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
      CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
    {
      std::ofstream f(path);
      f << "a,b,label\n1,zebra,0\n";
    }
    CHECK_THROWS_AS(load_csv(path, true, "label"), IngestionError);
    CHECK_THROWS_AS(load_csv(path, true, "nope"), IngestionError);
  }

  SUBCASE("round trip through save_csv is stable") {
    Dataset d = make_synthetic(SyntheticKind::concentric_rings, 3, 12, 4, 21, 0.05);
    save_csv(d, path);
    Dataset d1 = load_csv(path, true, "label");
    save_csv(d1, path);
    Dataset d2 = load_csv(path, true, "label");
    REQUIRE(d1.size() == d2.size());
    for (std::size_t i = 0; i < d1.features.size(); ++i)
      CHECK(std::abs(d1.features[i] - d2.features[i]) < 1e-9);
    CHECK(d1.labels == d2.labels);
  }

  std::filesystem::remove(path);
}
