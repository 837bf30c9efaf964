#pragma once

// Experiment orchestration: trains every dataset x preprocess x gabor
// combination, cross-evaluates the grid, runs bias diagnostics, scores the
// control strata, and persists the whole artifact tree under out_dir:
//
//   out_dir/
//     checkpoints/<id>.ctw, <id>.history.csv
//     grid.csv, grid.json
//     bias/<dataset>.json, <dataset>_{negative,positive}.png
//     strata/<id>.csv, minmax_<idA>__<idB>.csv
//     plots/<id>.png, ...
//     run_manifest.json
//
// Stages are a bitmask so the CLI subcommands map 1:1; later stages fall back
// to checkpoints on disk when the train stage did not run in-process.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctaudit/config.hpp"
#include "ctaudit/involvement.hpp"

namespace ctaudit {

enum RunStage : unsigned {
  kStageTrain = 1u << 0,
  kStageEvaluate = 1u << 1,
  kStageDiagnose = 1u << 2,
  kStageInvolve = 1u << 3,
  kStageAll = kStageTrain | kStageEvaluate | kStageDiagnose | kStageInvolve,
};

struct ModelStatus {
  std::string id;
  std::uint64_t seed = 0;    // derived: mix_seed(cfg.seed, fnv1a(id))
  std::string status;        // "trained", "loaded", "failed", "missing"
  std::string message;       // failure detail, empty otherwise
  double seconds = 0.0;      // training wall time
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

struct RunOutcome {
  int exit_status = 0;  // 0 = full success, 2 = partial (absent cells / failed models)
  std::vector<ModelStatus> models;
  std::filesystem::path out_dir;
};

// Run the requested stages end to end.  A failed model training is recorded,
// its grid cells are marked absent, and the run continues (partial exit
// status); configuration and I/O errors propagate as exceptions.
RunOutcome run_experiment(const ExperimentConfig& cfg, unsigned stages = kStageAll);

// Two-line strata plot (mean positive ascending, mean negative descending)
// over CT-0..CT-4 with shaded 95% CI bands.  Deterministic bytes for
// identical reports.
void render_strata_plot(const StrataReport& report, const std::filesystem::path& path);

// One plot per report, named <stem>.png under plots_dir.  Empty input is a
// no-op with a warning on stderr.
void emit_plots(const std::vector<std::pair<std::string, StrataReport>>& reports,
                const std::filesystem::path& plots_dir);

}  // namespace ctaudit
