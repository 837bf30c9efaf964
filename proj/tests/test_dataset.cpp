// Tests for manifest parsing, split logic, and the class-balanced sampling
// schedule.  Splits are checked for exact proportions, patient disjointness,
// and seed determinism; the schedule is replayed draw-for-draw against the
// documented Rng recipe.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ctaudit/common.hpp"
#include "ctaudit/dataset.hpp"

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const fs::path dir =
      fs::temp_directory_path() / ("ctaudit_dataset_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

std::set<std::string> paths_of(const std::vector<ctaudit::SampleRecord>& rs) {
  std::set<std::string> out;
  for (const auto& r : rs) out.insert(r.image_path.string());
  return out;
}

std::set<std::string> patients_of(const std::vector<ctaudit::SampleRecord>& rs) {
  std::set<std::string> out;
  for (const auto& r : rs) out.insert(r.patient_id);
  return out;
}

// A synthetic descriptor: `per_patient[i]` images for patient i, labels
// alternating so both classes exist.
ctaudit::DatasetDescriptor make_descriptor(const std::vector<int>& per_patient) {
  ctaudit::DatasetDescriptor d;
  d.name = "synthetic";
  int n = 0;
  for (std::size_t p = 0; p < per_patient.size(); ++p) {
    for (int i = 0; i < per_patient[p]; ++i, ++n) {
      ctaudit::SampleRecord r;
      r.image_path = "img_" + std::to_string(n) + ".png";
      r.label = n % 2;
      r.patient_id = "patient_" + std::to_string(p);
      d.records.push_back(std::move(r));
    }
  }
  return d;
}

}  // namespace

TEST_CASE("dataset: stratum and partition names round-trip") {
  for (int i = 0; i <= 4; ++i) {
    const auto s = static_cast<ctaudit::Stratum>(i);
    CHECK(ctaudit::format_stratum(s) == "CT-" + std::to_string(i));
    CHECK(ctaudit::parse_stratum("CT-" + std::to_string(i)) == s);
  }
  CHECK_THROWS_AS(ctaudit::parse_stratum("CT-5"), ctaudit::ManifestError);
  CHECK_THROWS_AS(ctaudit::parse_stratum("ct-0"), ctaudit::ManifestError);
  CHECK_THROWS_AS(ctaudit::parse_stratum(""), ctaudit::ManifestError);

  for (auto p : {ctaudit::Partition::train, ctaudit::Partition::val, ctaudit::Partition::test}) {
    CHECK(ctaudit::parse_partition(ctaudit::partition_name(p)) == p);
  }
  CHECK_THROWS_AS(ctaudit::parse_partition("holdout"), ctaudit::ManifestError);
}

TEST_CASE("dataset: manifest parsing resolves paths and optional strata") {
  const fs::path dir = scratch_dir();
  const fs::path manifest = write_file(dir / "lungs.csv",
                                       "image_path,label,patient_id,stratum\n"
                                       "a/one.png,0,p1,\n"
                                       "two.png,1,p2,CT-3\n"
                                       "/abs/three.png,1,p1,CT-0\n");

  const ctaudit::DatasetDescriptor d = ctaudit::load_manifest(manifest);
  CHECK(d.name == "lungs");  // file stem
  REQUIRE(d.records.size() == 3);

  // Relative paths resolve against the manifest directory; absolute stay.
  CHECK(d.records[0].image_path == dir / "a/one.png");
  CHECK(d.records[1].image_path == dir / "two.png");
  CHECK(d.records[2].image_path == fs::path("/abs/three.png"));

  CHECK(d.records[0].label == 0);
  CHECK(d.records[1].label == 1);
  CHECK(d.records[0].patient_id == "p1");
  CHECK_FALSE(d.records[0].stratum.has_value());
  REQUIRE(d.records[1].stratum.has_value());
  CHECK(*d.records[1].stratum == ctaudit::Stratum::ct3);
  CHECK(*d.records[2].stratum == ctaudit::Stratum::ct0);

  const auto counts = d.class_counts();
  CHECK(counts.at(0) == 1);
  CHECK(counts.at(1) == 2);

  fs::remove_all(dir);
}

TEST_CASE("dataset: manifest tolerates column order, extra columns, CRLF, and blanks") {
  const fs::path dir = scratch_dir();
  const fs::path manifest = write_file(dir / "odd.csv",
                                       "source,label,patient_id,note,image_path\r\n"
                                       "scannerA,1,p9,ignored,x.png\r\n"
                                       "\r\n"
                                       "scannerB,0,p10,also ignored,y.png\r\n");
  const ctaudit::DatasetDescriptor d = ctaudit::load_manifest(manifest);
  REQUIRE(d.records.size() == 2);
  CHECK(d.records[0].image_path == dir / "x.png");
  CHECK(d.records[0].label == 1);
  CHECK(d.records[1].patient_id == "p10");
  fs::remove_all(dir);
}

TEST_CASE("dataset: manifest errors carry the offending row") {
  const fs::path dir = scratch_dir();

  CHECK_THROWS_AS(ctaudit::load_manifest(dir / "absent.csv"), ctaudit::ManifestError);
  CHECK_THROWS_AS(ctaudit::load_manifest(write_file(dir / "empty.csv", "")),
                  ctaudit::ManifestError);
  CHECK_THROWS_AS(
      ctaudit::load_manifest(write_file(dir / "nohdr.csv", "image_path,label\nx.png,0\n")),
      ctaudit::ManifestError);
  CHECK_THROWS_AS(ctaudit::load_manifest(
                      write_file(dir / "hdr_only.csv", "image_path,label,patient_id\n")),
                  ctaudit::ManifestError);

  const fs::path bad_label = write_file(dir / "badlabel.csv",
                                        "image_path,label,patient_id\n"
                                        "x.png,0,p1\n"
                                        "y.png,2,p2\n");
  try {
    (void)ctaudit::load_manifest(bad_label);
    FAIL("expected ManifestError");
  } catch (const ctaudit::ManifestError& e) {
    const std::string what = e.what();
    CHECK(what.find("row 3") != std::string::npos);
    CHECK(what.find("label") != std::string::npos);
  }

  const fs::path short_row = write_file(dir / "short.csv",
                                        "image_path,label,patient_id\n"
                                        "x.png,0\n");
  CHECK_THROWS_AS(ctaudit::load_manifest(short_row), ctaudit::ManifestError);

  const fs::path bad_stratum = write_file(dir / "badstr.csv",
                                          "image_path,label,patient_id,stratum\n"
                                          "x.png,0,p1,CT-9\n");
  CHECK_THROWS_AS(ctaudit::load_manifest(bad_stratum), ctaudit::ManifestError);

  fs::remove_all(dir);
}

TEST_CASE("dataset: split spec validation") {
  ctaudit::SplitSpec s;
  CHECK_NOTHROW(s.validate());  // 0.64 / 0.16 / 0.20

  ctaudit::SplitSpec bad = s;
  bad.train_fraction = 0.7;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);  // sums to 1.06

  bad = s;
  bad.val_fraction = 0.0;
  bad.train_fraction = 0.8;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);  // zero fraction

  bad = s;
  bad.test_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);
}

TEST_CASE("dataset: record-level split hits exact proportions") {
  // 100 single-image patients, non-disjoint path: 64/16/20 exactly.
  ctaudit::DatasetDescriptor d = make_descriptor(std::vector<int>(100, 1));
  ctaudit::SplitSpec s;
  s.seed = 5;
  s.patient_disjoint = false;

  const ctaudit::Splits sp = ctaudit::make_splits(d, s);
  CHECK(sp.train.size() == 64);
  CHECK(sp.val.size() == 16);
  CHECK(sp.test.size() == 20);

  // Partition of the record set: disjoint and complete.
  std::set<std::string> all = paths_of(sp.train);
  const std::set<std::string> val = paths_of(sp.val);
  const std::set<std::string> test = paths_of(sp.test);
  CHECK(val.size() == 16);
  CHECK(test.size() == 20);
  all.insert(val.begin(), val.end());
  all.insert(test.begin(), test.end());
  CHECK(all.size() == 100);

  // Seed determinism.
  const ctaudit::Splits again = ctaudit::make_splits(d, s);
  CHECK(paths_of(again.train) == paths_of(sp.train));
  CHECK(paths_of(again.test) == paths_of(sp.test));
  ctaudit::SplitSpec other = s;
  other.seed = 6;
  CHECK(paths_of(ctaudit::make_splits(d, other).test) != paths_of(sp.test));
}

TEST_CASE("dataset: patient-disjoint split never splits a patient") {
  // 40 patients with 1-4 images each (190 records total).
  std::vector<int> per_patient;
  for (int p = 0; p < 40; ++p) per_patient.push_back(1 + (p * 7 + 3) % 4);
  ctaudit::DatasetDescriptor d = make_descriptor(per_patient);
  const std::size_t total = d.records.size();

  ctaudit::SplitSpec s;
  s.seed = 11;
  const ctaudit::Splits sp = ctaudit::make_splits(d, s);

  CHECK(sp.train.size() + sp.val.size() + sp.test.size() == total);

  const std::set<std::string> pt = patients_of(sp.train);
  const std::set<std::string> pv = patients_of(sp.val);
  const std::set<std::string> px = patients_of(sp.test);
  for (const auto& pid : pv) CHECK(pt.count(pid) == 0);
  for (const auto& pid : px) CHECK(pt.count(pid) == 0);
  for (const auto& pid : px) CHECK(pv.count(pid) == 0);

  // Quotas hold to within one patient's worth of images (max 4 here).
  const double want_test = 0.20 * static_cast<double>(total);
  const double want_val = 0.16 * static_cast<double>(total);
  CHECK(std::abs(static_cast<double>(sp.test.size()) - want_test) <= 4.0);
  CHECK(std::abs(static_cast<double>(sp.val.size()) - want_val) <= 4.0);

  // Deterministic under the same seed.
  const ctaudit::Splits again = ctaudit::make_splits(d, s);
  CHECK(paths_of(again.train) == paths_of(sp.train));
  CHECK(paths_of(again.val) == paths_of(sp.val));

  // A patient so large the remaining quota cannot be met is rejected.
  ctaudit::DatasetDescriptor lopsided = make_descriptor({90, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  CHECK_THROWS_AS(ctaudit::make_splits(lopsided, s), ctaudit::ContractError);
}

TEST_CASE("dataset: explicit recommended split overrides the fractions") {
  ctaudit::DatasetDescriptor d = make_descriptor({1, 1, 1, 1});
  std::map<std::string, ctaudit::Partition> assign;
  assign["img_0.png"] = ctaudit::Partition::test;
  assign["img_1.png"] = ctaudit::Partition::test;
  assign["img_2.png"] = ctaudit::Partition::val;
  assign["img_3.png"] = ctaudit::Partition::train;
  d.recommended_split = assign;

  const ctaudit::Splits sp = ctaudit::make_splits(d, ctaudit::SplitSpec{});
  CHECK(sp.test.size() == 2);
  CHECK(sp.val.size() == 1);
  CHECK(sp.train.size() == 1);
  CHECK(sp.train[0].image_path == "img_3.png");

  // Uncovered records are an error.
  d.recommended_split->erase("img_1.png");
  CHECK_THROWS_AS(ctaudit::make_splits(d, ctaudit::SplitSpec{}), ctaudit::ManifestError);
}

TEST_CASE("dataset: split file parses and matches by filename") {
  const fs::path dir = scratch_dir();
  const fs::path split = write_file(dir / "split.csv",
                                    "image_path,partition\n"
                                    "one.png,test\n"
                                    "two.png,val\n"
                                    "three.png,train\n");
  const auto assign = ctaudit::load_split_file(split);
  REQUIRE(assign.size() == 3);
  CHECK(assign.at("one.png") == ctaudit::Partition::test);
  CHECK(assign.at("two.png") == ctaudit::Partition::val);

  // A manifest whose resolved paths differ still matches via the filename
  // fallback.
  const fs::path manifest = write_file(dir / "data.csv",
                                       "image_path,label,patient_id\n"
                                       "one.png,0,p1\n"
                                       "two.png,1,p2\n"
                                       "three.png,0,p3\n");
  ctaudit::DatasetDescriptor d = ctaudit::load_manifest(manifest);
  d.recommended_split = assign;
  const ctaudit::Splits sp = ctaudit::make_splits(d, ctaudit::SplitSpec{});
  CHECK(sp.test.size() == 1);
  CHECK(sp.val.size() == 1);
  CHECK(sp.train.size() == 1);

  CHECK_THROWS_AS(ctaudit::load_split_file(dir / "absent.csv"), ctaudit::ManifestError);
  CHECK_THROWS_AS(
      ctaudit::load_split_file(write_file(dir / "badhdr.csv", "image_path,part\nx,test\n")),
      ctaudit::ManifestError);
  CHECK_THROWS_AS(
      ctaudit::load_split_file(write_file(dir / "badpart.csv",
                                          "image_path,partition\nx.png,holdout\n")),
      ctaudit::ManifestError);

  fs::remove_all(dir);
}

TEST_CASE("dataset: balanced schedule replays the documented Rng recipe") {
  // 3 negatives (indices 0,2,4) and 2 positives (1,3).
  ctaudit::DatasetDescriptor d = make_descriptor({5});
  const std::vector<std::size_t> schedule = ctaudit::balanced_schedule(d.records, 1000, 77);
  REQUIRE(schedule.size() == 1000);

  // Replay: class choice then uniform index within the class pool.
  ctaudit::Rng rng(77);
  const std::vector<std::size_t> neg = {0, 2, 4}, pos = {1, 3};
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& pool = rng.uniform_index(2) == 0 ? neg : pos;
    const std::size_t want = pool[rng.uniform_index(pool.size())];
    REQUIRE(schedule[i] == want);
  }
}

TEST_CASE("dataset: balanced schedule equalizes classes from a skewed pool") {
  // 90 negatives, 10 positives.
  ctaudit::DatasetDescriptor d;
  for (int i = 0; i < 100; ++i) {
    ctaudit::SampleRecord r;
    r.image_path = "i" + std::to_string(i) + ".png";
    r.label = i < 90 ? 0 : 1;
    r.patient_id = "p" + std::to_string(i);
    d.records.push_back(std::move(r));
  }

  const std::size_t draws = 20000;
  const std::vector<std::size_t> schedule = ctaudit::balanced_schedule(d.records, draws, 123);
  std::size_t positives = 0;
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t idx : schedule) {
    REQUIRE(idx < d.records.size());
    positives += static_cast<std::size_t>(d.records[idx].label == 1);
    ++hits[idx];
  }
  // Binomial(20000, 1/2): sd = 70.7, allow 5 sd.
  CHECK(std::abs(static_cast<double>(positives) - 10000.0) < 354.0);

  // Within the positive class each of the 10 records is drawn uniformly:
  // expectation ~1000 each, sd ~31; allow 6 sd.
  for (int i = 90; i < 100; ++i) {
    CHECK(std::abs(static_cast<double>(hits[i]) - 1000.0) < 190.0);
  }

  // Same seed reproduces; a single-class pool is a contract error.
  CHECK(ctaudit::balanced_schedule(d.records, 64, 123) ==
        std::vector<std::size_t>(schedule.begin(), schedule.begin() + 64));
  ctaudit::DatasetDescriptor mono = make_descriptor({1});
  mono.records[0].label = 0;
  CHECK_THROWS_AS(ctaudit::balanced_schedule(mono.records, 8, 1), ctaudit::ContractError);

  CHECK(ctaudit::balanced_schedule(d.records, 0, 9).empty());
}
