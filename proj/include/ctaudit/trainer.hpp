#pragma once

// Fine-tuning loop: balanced batches, light augmentation, early stopping with
// best-epoch restore, and checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctaudit/common.hpp"
#include "ctaudit/dataset.hpp"
#include "ctaudit/model.hpp"
#include "ctaudit/preprocess.hpp"

namespace ctaudit {

struct TrainConfig {
  double learning_rate = 1e-5;  // Adam, beta1 0.9 / beta2 0.999 / eps 1e-8
  int patience = 3;             // epochs without val-loss decrease before stopping
  int max_epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 0;
  Backbone backbone = Backbone::densenet121;
  std::filesystem::path pretrained_weights;  // densenet121 only

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Patience automaton.  An epoch "improves" only when its validation loss is
// strictly below the best seen so far; ties count as no reduction.  observe()
// returns true exactly when the improvement drought reaches the patience.
class EarlyStopMonitor {
public:
  explicit EarlyStopMonitor(int patience);

  bool observe(double val_loss);

  double best_val_loss() const { return best_; }
  int best_epoch() const { return best_epoch_; }  // 1-based; 0 before any epoch
  int epochs_since_improvement() const { return since_; }

private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epoch_ = 0;
  int since_ = 0;
};

// Training-time augmentation: rotation uniform in [-1, +1] degrees with
// canvas expansion, resized back to the input resolution, then horizontal
// flip with probability 1/2.  Draw order from the stream: angle, then flip.
GrayImageF augment(const GrayImageF& img, Rng& rng);

struct Provenance {
  std::string dataset;
  PreprocessSpec preprocess;
  bool gabor = false;
  std::string backbone;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

void to_json(nlohmann::json& j, const Provenance& p);
void from_json(const nlohmann::json& j, Provenance& p);

// "<dataset>_<preprocess>_<gabor|plain>" — used for checkpoint and report names.
std::string artifact_id(const Provenance& p);

struct ModelArtifact {
  Provenance provenance;
  Classifier model;
};

struct FitReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Train `model` on the given partitions.  Weights from the best-validation
// epoch are restored into the returned artifact.  Throws TrainingDiverged
// (with epoch and batch index) on a non-finite loss.
ModelArtifact fit(Classifier model, const std::string& dataset_name,
                  const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val,
                  const PreprocessSpec& preprocess, const TrainConfig& cfg,
                  FitReport* report = nullptr);

void save_checkpoint(ModelArtifact& artifact, const std::filesystem::path& path);
ModelArtifact load_checkpoint(const std::filesystem::path& path);

}  // namespace ctaudit
