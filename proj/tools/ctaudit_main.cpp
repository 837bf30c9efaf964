// ctaudit: config-driven audit of cross-dataset generalization for binary
// CT-slice classifiers.  Subcommands map to pipeline stages; `all` chains
// train -> evaluate -> diagnose -> involve over one experiment config.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ctaudit/common.hpp"
#include "ctaudit/config.hpp"
#include "ctaudit/runner.hpp"

namespace {

unsigned stage_mask(const std::string& name) {
  if (name == "train") return ctaudit::kStageTrain;
  if (name == "evaluate") return ctaudit::kStageEvaluate;
  if (name == "diagnose") return ctaudit::kStageDiagnose;
  if (name == "involve") return ctaudit::kStageInvolve;
  return ctaudit::kStageAll;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-dataset generalization audit for CT-slice classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string device = "cpu";
  std::string out_override;
  std::uint64_t seed_override = 0;

  const std::pair<const char*, const char*> commands[] = {
      {"train", "train every dataset x preprocess x gabor model and checkpoint it"},
      {"evaluate", "cross-evaluate checkpoints into the metrics grid"},
      {"diagnose", "per-class composite images and histogram divergence per dataset"},
      {"involve", "stratified involvement scoring on the control dataset"},
      {"all", "run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed_override, "override the config's global seed");
    sub->add_option("--out", out_override, "override the config's output directory");
    sub->add_option("--device", device, "compute device (only 'cpu' is available)");
  }

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  try {
    if (device != "cpu") {
      throw ctaudit::EnvironmentError("device '" + device +
                                      "' is not available; this build is CPU-only");
    }
    ctaudit::ExperimentConfig cfg = ctaudit::load_experiment_config(config_path);
    if (sub->count("--seed") > 0) cfg.seed = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;

    const ctaudit::RunOutcome run = ctaudit::run_experiment(cfg, stage_mask(sub->get_name()));
    std::cerr << "[ctaudit] artifacts under " << run.out_dir.string()
              << (run.exit_status == 0 ? "" : " (partial)") << "\n";
    return run.exit_status;
  } catch (const std::exception& e) {
    std::cerr << "ctaudit: " << e.what() << "\n";
    return 1;
  }
}
