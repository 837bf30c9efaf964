#pragma once

// Dataset manifests, split logic, and the class-balanced sampling schedule.
//
// A manifest is a UTF-8 comma-separated file with a header row and columns
//   image_path,label,patient_id[,stratum]
// (unknown columns are ignored; fields must not contain commas).  Labels are
// 0 = negative, 1 = positive; stratum values are exactly "CT-0".."CT-4".

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ctaudit {

// Involvement band, ordered CT-0 < CT-1 < ... < CT-4 (0%, then 25% steps).
enum class Stratum : int { ct0 = 0, ct1 = 1, ct2 = 2, ct3 = 3, ct4 = 4 };

std::string format_stratum(Stratum s);            // "CT-0".."CT-4"
Stratum parse_stratum(const std::string& text);   // throws ManifestError

struct SampleRecord {
  std::filesystem::path image_path;
  int label = 0;  // 0 = negative, 1 = positive
  std::string patient_id;
  std::optional<Stratum> stratum;
};

enum class Partition { train, val, test };
std::string partition_name(Partition p);
Partition parse_partition(const std::string& text);

struct DatasetDescriptor {
  std::string name;
  std::vector<SampleRecord> records;
  // Explicit per-image partition assignment (by image_path); when present it
  // overrides SplitSpec entirely.
  std::optional<std::map<std::string, Partition>> recommended_split;

  std::map<int, std::size_t> class_counts() const;
};

struct SplitSpec {
  double train_fraction = 0.64;
  double val_fraction = 0.16;
  double test_fraction = 0.20;
  std::uint64_t seed = 0;
  bool patient_disjoint = true;

  void validate() const;  // fractions in (0,1), summing to 1
};

struct Splits {
  std::vector<SampleRecord> train, val, test;
};

// Parse a manifest into a descriptor (name = file stem).  Image files are not
// opened here; unreadable paths surface on first access.
DatasetDescriptor load_manifest(const std::filesystem::path& path);

// Companion file assigning each image_path to train/val/test explicitly
// (columns image_path,partition).  Attach the result to a descriptor's
// recommended_split.
std::map<std::string, Partition> load_split_file(const std::filesystem::path& path);

// Partition the records.  With recommended_split present the explicit
// assignment wins; otherwise patients are shuffled (seeded) and dealt to
// test, then val, then train until each reaches its image quota, so the
// proportions hold to within one patient's worth of images and no patient id
// spans two partitions.
Splits make_splits(const DatasetDescriptor& d, const SplitSpec& s);

// Sampling-with-replacement schedule where each draw picks a class with
// probability 1/2 and then a record uniformly within the class.  Returns
// indices into `train`.
std::vector<std::size_t> balanced_schedule(const std::vector<SampleRecord>& train,
                                           std::size_t epoch_len, std::uint64_t seed);

}  // namespace ctaudit
