#pragma once

// Declarative experiment configuration (JSON).  Paths are resolved relative
// to the config file's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctaudit/dataset.hpp"
#include "ctaudit/preprocess.hpp"
#include "ctaudit/trainer.hpp"

namespace ctaudit {

struct DatasetConfig {
  std::string name;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> split_file;  // explicit per-image partitions
};

struct EnsembleMember {
  HistogramMode preprocess = HistogramMode::clahe;
  bool gabor = false;
};

struct EnsemblePair {
  EnsembleMember a, b;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::vector<DatasetConfig> datasets;
  std::vector<HistogramMode> preprocess_variants;
  std::vector<bool> gabor_variants;
  PreprocessSpec preprocess_base;  // histogram_mode is overridden per variant
  SplitSpec split;                 // fractions + patient_disjoint; seeds are derived
  TrainConfig train;               // seed is derived per model
  std::optional<DatasetConfig> control;  // stratified manifest for involvement scoring
  std::vector<EnsemblePair> ensembles;   // requires control

  void validate() const;
};

// Round-trippable snapshot, echoed into run_manifest.json.
void to_json(nlohmann::json& j, const ExperimentConfig& cfg);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace ctaudit
