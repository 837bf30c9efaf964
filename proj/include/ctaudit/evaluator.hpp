#pragma once

// Prediction and metric assembly for internal and external (cross-dataset)
// test evaluation.

#include <filesystem>
#include <string>
#include <vector>

#include "ctaudit/trainer.hpp"

namespace ctaudit {

struct ConfusionMatrix {
  long tp = 0, fp = 0, tn = 0, fn = 0;  // positive = disease positive
  long total() const { return tp + fp + tn + fn; }
};

// All metric fields are percentages in [0, 100].  precision/recall/f1 are
// macro averages over the two classes; the positive-class variants are kept
// alongside because published tables are ambiguous about which one they print.
// Zero-denominator entries are reported as 0 with `degenerate` set.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision_positive = 0.0;
  double recall_positive = 0.0;
  double f1_positive = 0.0;
  bool degenerate = false;
  ConfusionMatrix cm;
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);  // throws on N = 0

struct Prediction {
  bool ok = false;
  double p_negative = 0.0;
  double p_positive = 0.0;
  std::string error;  // set when !ok (e.g. unreadable image)
};

// Softmax probabilities per record, preprocessing configured from the
// artifact's provenance, no augmentation.  Unreadable images yield per-record
// error entries; evaluation continues.
std::vector<Prediction> predict_proba(ModelArtifact& artifact,
                                      const std::vector<SampleRecord>& records,
                                      int batch_size = 16);

struct GridCell {
  std::string model_id;
  std::string model_dataset;
  std::string preprocess;
  bool gabor = false;
  std::string test_dataset;
  bool present = false;  // false = absent cell (missing partition / nothing evaluable)
  std::string note;      // reason when absent
  long failed_records = 0;
  MetricsReport metrics;
};

struct CrossGrid {
  std::vector<GridCell> cells;  // row-major: artifacts outer, test datasets inner
};

// Evaluate every artifact against every test partition.  Partition order is
// preserved so the emitted grid is deterministic.
CrossGrid cross_dataset_matrix(
    std::vector<ModelArtifact*> artifacts,
    const std::vector<std::pair<std::string, std::vector<SampleRecord>>>& test_partitions,
    int batch_size = 16);

void write_grid_csv(const CrossGrid& grid, const std::filesystem::path& path);
void write_grid_json(const CrossGrid& grid, const std::filesystem::path& path);

}  // namespace ctaudit
