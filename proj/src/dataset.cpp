#include "ctaudit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ctaudit/common.hpp"

namespace ctaudit {

std::string format_stratum(Stratum s) { return "CT-" + std::to_string(static_cast<int>(s)); }

Stratum parse_stratum(const std::string& text) {
  for (int i = 0; i <= 4; ++i) {
    if (text == "CT-" + std::to_string(i)) return static_cast<Stratum>(i);
  }
  throw ManifestError("invalid stratum '" + text + "' (expected CT-0..CT-4)");
}

std::string partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
  }
  throw ContractError("partition_name: unknown partition");
}

Partition parse_partition(const std::string& text) {
  if (text == "train") return Partition::train;
  if (text == "val") return Partition::val;
  if (text == "test") return Partition::test;
  throw ManifestError("invalid partition '" + text + "' (expected train, val or test)");
}

std::map<int, std::size_t> DatasetDescriptor::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& r : records) ++counts[r.label];
  return counts;
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) {
      throw ContractError("split fractions must lie strictly between 0 and 1");
    }
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ContractError("split fractions must sum to 1");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// Header lookup: returns column index or -1.
int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

DatasetDescriptor load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ManifestError("empty manifest: " + path.string());
  const std::vector<std::string> header = split_csv_line(strip_cr(line));

  const int col_path = find_column(header, "image_path");
  const int col_label = find_column(header, "label");
  const int col_patient = find_column(header, "patient_id");
  const int col_stratum = find_column(header, "stratum");
  if (col_path < 0 || col_label < 0 || col_patient < 0) {
    throw ManifestError("manifest " + path.string() +
                        ": header must contain image_path, label and patient_id");
  }

  DatasetDescriptor d;
  d.name = path.stem().string();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    const int needed = std::max({col_path, col_label, col_patient, col_stratum});
    if (static_cast<int>(fields.size()) <= needed) {
      throw ManifestError("manifest " + path.string() + " row " + std::to_string(row) +
                          ": too few fields");
    }

    SampleRecord r;
    r.image_path = fields[col_path];
    if (r.image_path.is_relative()) {
      r.image_path = path.parent_path() / r.image_path;
    }
    const std::string& label = fields[col_label];
    if (label == "0") {
      r.label = 0;
    } else if (label == "1") {
      r.label = 1;
    } else {
      throw ManifestError("manifest " + path.string() + " row " + std::to_string(row) +
                          ": label must be 0 or 1, got '" + label + "'");
    }
    r.patient_id = fields[col_patient];
    if (col_stratum >= 0 && !fields[col_stratum].empty()) {
      try {
        r.stratum = parse_stratum(fields[col_stratum]);
      } catch (const ManifestError& e) {
        throw ManifestError("manifest " + path.string() + " row " + std::to_string(row) + ": " +
                            e.what());
      }
    }
    d.records.push_back(std::move(r));
  }
  if (d.records.empty()) throw ManifestError("manifest has no records: " + path.string());
  return d;
}

std::map<std::string, Partition> load_split_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open split file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ManifestError("empty split file: " + path.string());
  const std::vector<std::string> header = split_csv_line(strip_cr(line));
  const int col_path = find_column(header, "image_path");
  const int col_part = find_column(header, "partition");
  if (col_path < 0 || col_part < 0) {
    throw ManifestError("split file " + path.string() +
                        ": header must contain image_path and partition");
  }

  std::map<std::string, Partition> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) <= std::max(col_path, col_part)) {
      throw ManifestError("split file " + path.string() + " row " + std::to_string(row) +
                          ": too few fields");
    }
    out[fields[col_path]] = parse_partition(fields[col_part]);
  }
  if (out.empty()) throw ManifestError("split file has no records: " + path.string());
  return out;
}

Splits make_splits(const DatasetDescriptor& d, const SplitSpec& s) {
  if (d.records.empty()) throw ContractError("make_splits: descriptor has no records");

  Splits out;
  if (d.recommended_split) {
    // Explicit assignment wins; every record must be covered.
    for (const auto& r : d.records) {
      // Match on the manifest-form path first, falling back to the resolved one.
      auto it = d.recommended_split->find(r.image_path.string());
      if (it == d.recommended_split->end()) {
        it = d.recommended_split->find(r.image_path.filename().string());
      }
      if (it == d.recommended_split->end()) {
        throw ManifestError("recommended split does not cover '" + r.image_path.string() + "'");
      }
      switch (it->second) {
        case Partition::train: out.train.push_back(r); break;
        case Partition::val: out.val.push_back(r); break;
        case Partition::test: out.test.push_back(r); break;
      }
    }
    return out;
  }

  s.validate();
  const std::size_t total = d.records.size();

  if (!s.patient_disjoint) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(s.seed);
    rng.shuffle(order);
    const std::size_t n_test = static_cast<std::size_t>(std::llround(s.test_fraction * total));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(s.val_fraction * total));
    for (std::size_t i = 0; i < total; ++i) {
      const SampleRecord& r = d.records[order[i]];
      if (i < n_test) {
        out.test.push_back(r);
      } else if (i < n_test + n_val) {
        out.val.push_back(r);
      } else {
        out.train.push_back(r);
      }
    }
    return out;
  }

  // Group record indices by patient, keeping first-seen order for determinism.
  std::vector<std::string> patient_order;
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < total; ++i) {
    const std::string& pid = d.records[i].patient_id;
    auto [it, inserted] = by_patient.try_emplace(pid);
    if (inserted) patient_order.push_back(pid);
    it->second.push_back(i);
  }

  std::size_t largest = 0;
  for (const auto& [pid, idxs] : by_patient) largest = std::max(largest, idxs.size());
  if (static_cast<double>(largest) > (1.0 - s.test_fraction) * static_cast<double>(total)) {
    throw ContractError(
        "make_splits: one patient owns too many records for a patient-disjoint split");
  }

  Rng rng(s.seed);
  rng.shuffle(patient_order);

  // Deal whole patients to test, then val, until each reaches its image quota.
  const std::size_t want_test = static_cast<std::size_t>(std::llround(s.test_fraction * total));
  const std::size_t want_val = static_cast<std::size_t>(std::llround(s.val_fraction * total));
  std::size_t have_test = 0, have_val = 0;
  for (const std::string& pid : patient_order) {
    const auto& idxs = by_patient[pid];
    std::vector<SampleRecord>* dest;
    if (have_test < want_test) {
      dest = &out.test;
      have_test += idxs.size();
    } else if (have_val < want_val) {
      dest = &out.val;
      have_val += idxs.size();
    } else {
      dest = &out.train;
    }
    for (std::size_t i : idxs) dest->push_back(d.records[i]);
  }
  return out;
}

std::vector<std::size_t> balanced_schedule(const std::vector<SampleRecord>& train,
                                           std::size_t epoch_len, std::uint64_t seed) {
  std::vector<std::size_t> negatives, positives;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (train[i].label == 0 ? negatives : positives).push_back(i);
  }
  if (negatives.empty() || positives.empty()) {
    throw ContractError("balanced_schedule: both classes must be present in the training set");
  }

  Rng rng(seed);
  std::vector<std::size_t> schedule(epoch_len);
  for (std::size_t i = 0; i < epoch_len; ++i) {
    const auto& pool = rng.uniform_index(2) == 0 ? negatives : positives;
    schedule[i] = pool[rng.uniform_index(pool.size())];
  }
  return schedule;
}

}  // namespace ctaudit
