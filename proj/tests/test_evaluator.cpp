// Tests for metric assembly and the cross-dataset evaluation grid: hand
// confusion-matrix oracles, degenerate-denominator flags, batch-size
// invariance of eval-mode prediction, and golden CSV/JSON serializations.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"
#include "ctaudit/evaluator.hpp"
#include "ctaudit/image.hpp"
#include "ctaudit/model.hpp"

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const fs::path dir =
      fs::temp_directory_path() / ("ctaudit_evaluator_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

ctaudit::SampleRecord write_sample(const fs::path& dir, int idx, int label) {
  ctaudit::GrayImage img = ctaudit::GrayImage::filled(40, 40, 0);
  const int base = label == 0 ? 30 : 160;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      img.at(y, x) = static_cast<std::uint8_t>(base + (x * 7 + y * 13 + idx * 29) % 50);
    }
  }
  const fs::path path = dir / ("eval_" + std::to_string(idx) + ".png");
  ctaudit::write_png(path, img);

  ctaudit::SampleRecord r;
  r.image_path = path;
  r.label = label;
  r.patient_id = "p" + std::to_string(idx);
  return r;
}

ctaudit::ModelArtifact fresh_artifact(std::uint64_t seed) {
  ctaudit::ModelArtifact art;
  art.provenance.dataset = "d";
  art.provenance.backbone = "tiny_cnn";
  art.provenance.seed = seed;
  art.provenance.preprocess.resolution = 32;
  art.model = ctaudit::make_classifier(ctaudit::Backbone::tiny_cnn, false, seed);
  return art;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("evaluator: metrics from a hand confusion matrix") {
  const ctaudit::ConfusionMatrix cm{.tp = 9, .fp = 2, .tn = 8, .fn = 1};
  const ctaudit::MetricsReport r = ctaudit::compute_metrics(cm);

  CHECK(r.accuracy == 85.0);  // 17 of 20
  CHECK(r.sensitivity == 90.0);
  CHECK(r.specificity == 80.0);

  const double pp = 100.0 * 9.0 / 11.0;  // positive precision
  const double pn = 100.0 * 8.0 / 9.0;   // negative precision
  CHECK(r.precision_positive == doctest::Approx(pp).epsilon(1e-12));
  CHECK(r.recall_positive == 90.0);
  const double f1p = 2.0 * pp * 90.0 / (pp + 90.0);
  const double f1n = 2.0 * pn * 80.0 / (pn + 80.0);
  CHECK(r.f1_positive == doctest::Approx(f1p).epsilon(1e-12));

  CHECK(r.precision == doctest::Approx(0.5 * (pp + pn)).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(0.5 * (90.0 + 80.0)).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(0.5 * (f1p + f1n)).epsilon(1e-12));
  CHECK_FALSE(r.degenerate);
  CHECK(r.cm.tp == 9);
  CHECK(r.cm.total() == 20);
}

TEST_CASE("evaluator: zero denominators are flagged, not divided") {
  // Only positives, all found: negative-side ratios are undefined.
  {
    const ctaudit::MetricsReport r = ctaudit::compute_metrics({.tp = 10, .fp = 0, .tn = 0, .fn = 0});
    CHECK(r.accuracy == 100.0);
    CHECK(r.sensitivity == 100.0);
    CHECK(r.specificity == 0.0);
    CHECK(r.degenerate);
  }
  // Only negatives, all rejected: the mirror case.
  {
    const ctaudit::MetricsReport r = ctaudit::compute_metrics({.tp = 0, .fp = 0, .tn = 5, .fn = 0});
    CHECK(r.accuracy == 100.0);
    CHECK(r.specificity == 100.0);
    CHECK(r.sensitivity == 0.0);
    CHECK(r.degenerate);
  }
  // Everything wrong: f1 numerator sums to zero on both sides.
  {
    const ctaudit::MetricsReport r = ctaudit::compute_metrics({.tp = 0, .fp = 3, .tn = 0, .fn = 3});
    CHECK(r.accuracy == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK(r.degenerate);
  }

  CHECK_THROWS_AS(ctaudit::compute_metrics(ctaudit::ConfusionMatrix{}), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::compute_metrics({.tp = -1, .fp = 1, .tn = 1, .fn = 1}),
                  ctaudit::ContractError);
}

TEST_CASE("evaluator: prediction probabilities are softmax rows, robust to bad files") {
  const fs::path dir = scratch_dir();
  std::vector<ctaudit::SampleRecord> records;
  records.push_back(write_sample(dir, 0, 0));
  records.push_back(write_sample(dir, 1, 1));
  ctaudit::SampleRecord missing;
  missing.image_path = dir / "not_there.png";
  missing.label = 1;
  records.push_back(missing);
  records.push_back(write_sample(dir, 2, 0));

  ctaudit::ModelArtifact art = fresh_artifact(3);
  const std::vector<ctaudit::Prediction> preds = ctaudit::predict_proba(art, records, 16);
  REQUIRE(preds.size() == 4);

  CHECK(preds[0].ok);
  CHECK(preds[1].ok);
  CHECK_FALSE(preds[2].ok);
  CHECK_FALSE(preds[2].error.empty());
  CHECK(preds[3].ok);
  for (const auto& p : preds) {
    if (!p.ok) continue;
    CHECK(p.p_positive >= 0.0);
    CHECK(p.p_negative >= 0.0);
    CHECK(p.p_positive + p.p_negative == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Eval-mode forwards are per-sample: batching must not change a digit.
  const std::vector<ctaudit::Prediction> one_by_one = ctaudit::predict_proba(art, records, 1);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(one_by_one[i].ok == preds[i].ok);
    if (preds[i].ok) {
      CHECK(one_by_one[i].p_positive == preds[i].p_positive);
      CHECK(one_by_one[i].p_negative == preds[i].p_negative);
    }
  }

  CHECK_THROWS_AS(ctaudit::predict_proba(art, records, 0), ctaudit::ContractError);

  fs::remove_all(dir);
}

TEST_CASE("evaluator: cross grid assembles cells in artifact-major order") {
  const fs::path dir = scratch_dir();
  std::vector<ctaudit::SampleRecord> partition_a;
  for (int i = 0; i < 6; ++i) partition_a.push_back(write_sample(dir, i, i % 2));

  std::vector<ctaudit::SampleRecord> partition_b = {partition_a[0], partition_a[1]};
  ctaudit::SampleRecord missing;
  missing.image_path = dir / "gone.png";
  missing.label = 0;
  partition_b.push_back(missing);

  ctaudit::ModelArtifact art = fresh_artifact(3);
  art.provenance.dataset = "alpha";

  const ctaudit::CrossGrid grid = ctaudit::cross_dataset_matrix(
      {&art}, {{"setA", partition_a}, {"setB", partition_b}, {"setC", {}}}, 4);
  REQUIRE(grid.cells.size() == 3);

  const ctaudit::GridCell& a = grid.cells[0];
  CHECK(a.model_dataset == "alpha");
  CHECK(a.model_id == "alpha_none_plain");
  CHECK(a.preprocess == "none");
  CHECK_FALSE(a.gabor);
  CHECK(a.test_dataset == "setA");
  REQUIRE(a.present);
  CHECK(a.failed_records == 0);

  // The cell's confusion matrix must match one assembled by hand from the
  // same predictions at the 0.5 threshold.
  const std::vector<ctaudit::Prediction> preds = ctaudit::predict_proba(art, partition_a, 4);
  ctaudit::ConfusionMatrix want;
  for (std::size_t i = 0; i < partition_a.size(); ++i) {
    const bool pos = preds[i].p_positive >= 0.5;
    if (partition_a[i].label == 1) {
      (pos ? want.tp : want.fn)++;
    } else {
      (pos ? want.fp : want.tn)++;
    }
  }
  CHECK(a.metrics.cm.tp == want.tp);
  CHECK(a.metrics.cm.fp == want.fp);
  CHECK(a.metrics.cm.tn == want.tn);
  CHECK(a.metrics.cm.fn == want.fn);
  CHECK(a.metrics.accuracy == ctaudit::compute_metrics(want).accuracy);

  // Unreadable records are excluded but counted.
  const ctaudit::GridCell& b = grid.cells[1];
  REQUIRE(b.present);
  CHECK(b.failed_records == 1);
  CHECK(b.metrics.cm.total() == 2);

  // An empty partition yields an absent cell, not a throw.
  const ctaudit::GridCell& c = grid.cells[2];
  CHECK_FALSE(c.present);
  CHECK(c.note == "test partition empty");

  // All-unreadable partitions are absent with their own note.
  std::vector<ctaudit::SampleRecord> unreadable = {missing};
  const ctaudit::CrossGrid grid2 = ctaudit::cross_dataset_matrix({&art}, {{"bad", unreadable}}, 4);
  REQUIRE(grid2.cells.size() == 1);
  CHECK_FALSE(grid2.cells[0].present);
  CHECK(grid2.cells[0].note == "no readable records");

  fs::remove_all(dir);
}

TEST_CASE("evaluator: grid CSV golden bytes") {
  // tp = fp = tn = fn makes every ratio exactly 50%.
  ctaudit::GridCell present;
  present.model_dataset = "m";
  present.preprocess = "none";
  present.gabor = false;
  present.test_dataset = "t";
  present.present = true;
  present.metrics = ctaudit::compute_metrics({.tp = 5, .fp = 5, .tn = 5, .fn = 5});

  ctaudit::GridCell absent;
  absent.model_dataset = "m";
  absent.preprocess = "clahe";
  absent.gabor = true;
  absent.test_dataset = "u";
  absent.note = "test partition empty";

  ctaudit::CrossGrid grid;
  grid.cells = {present, absent};

  const fs::path dir = scratch_dir();
  const fs::path csv = dir / "grid.csv";
  ctaudit::write_grid_csv(grid, csv);

  const std::string want =
      "model_dataset,preprocess,gabor,test_dataset,accuracy,precision,recall,f1,"
      "sensitivity,specificity,status\n"
      "m,none,plain,t,50.000000,50.000000,50.000000,50.000000,50.000000,50.000000,ok\n"
      "m,clahe,gabor,u,,,,,,,absent\n";
  CHECK(slurp(csv) == want);

  // Byte-for-byte reproducible.
  const fs::path csv2 = dir / "grid2.csv";
  ctaudit::write_grid_csv(grid, csv2);
  CHECK(slurp(csv2) == slurp(csv));

  CHECK_THROWS_AS(ctaudit::write_grid_csv(grid, dir / "no_such_dir" / "grid.csv"),
                  ctaudit::IoError);

  fs::remove_all(dir);
}

TEST_CASE("evaluator: grid JSON groups cells per model") {
  ctaudit::GridCell a1;
  a1.model_id = "alpha_none_plain";
  a1.model_dataset = "alpha";
  a1.preprocess = "none";
  a1.test_dataset = "t1";
  a1.present = true;
  a1.metrics = ctaudit::compute_metrics({.tp = 4, .fp = 1, .tn = 3, .fn = 2});
  ctaudit::GridCell a2 = a1;
  a2.test_dataset = "t2";
  a2.present = false;
  a2.note = "test partition empty";

  ctaudit::GridCell b1 = a1;
  b1.model_id = "beta_clahe_gabor";
  b1.model_dataset = "beta";
  b1.preprocess = "clahe";
  b1.gabor = true;

  ctaudit::CrossGrid grid;
  grid.cells = {a1, a2, b1};

  const fs::path dir = scratch_dir();
  const fs::path path = dir / "grid.json";
  ctaudit::write_grid_json(grid, path);

  const nlohmann::json doc = nlohmann::json::parse(slurp(path));
  const auto& models = doc.at("grid");
  REQUIRE(models.size() == 2);

  CHECK(models[0].at("model") == "alpha_none_plain");
  REQUIRE(models[0].at("cells").size() == 2);
  const auto& cell = models[0].at("cells")[0];
  CHECK(cell.at("status") == "ok");
  CHECK(cell.at("accuracy").get<double>() == 70.0);  // 7 of 10
  CHECK(cell.at("confusion").at("tp") == 4);
  CHECK(models[0].at("cells")[1].at("status") == "absent");
  CHECK(models[0].at("cells")[1].at("note") == "test partition empty");

  CHECK(models[1].at("model") == "beta_clahe_gabor");
  CHECK(models[1].at("gabor") == true);
  REQUIRE(models[1].at("cells").size() == 1);

  fs::remove_all(dir);
}
