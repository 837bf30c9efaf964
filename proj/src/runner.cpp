#include "ctaudit/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <utility>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ctaudit/bias.hpp"
#include "ctaudit/common.hpp"
#include "ctaudit/evaluator.hpp"
#include "ctaudit/trainer.hpp"

namespace ctaudit {
namespace {

namespace fs = std::filesystem;

// One trained-model slot of the experiment: dataset x preprocess x gabor.
struct ModelPlan {
  std::size_t dataset = 0;  // index into cfg.datasets
  PreprocessSpec preprocess;
  bool gabor = false;
  std::string id;
  std::uint64_t seed = 0;
};

std::vector<ModelPlan> plan_models(const ExperimentConfig& cfg) {
  std::vector<ModelPlan> plans;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di) {
    for (HistogramMode mode : cfg.preprocess_variants) {
      for (bool gabor : cfg.gabor_variants) {
        ModelPlan p;
        p.dataset = di;
        p.preprocess = cfg.preprocess_base;
        p.preprocess.histogram_mode = mode;
        p.gabor = gabor;
        Provenance prov;
        prov.dataset = cfg.datasets[di].name;
        prov.preprocess = p.preprocess;
        prov.gabor = gabor;
        p.id = artifact_id(prov);
        // Seeded from the id so adding or removing combinations never
        // perturbs the other models' streams.
        p.seed = mix_seed(cfg.seed, fnv1a(p.id));
        plans.push_back(std::move(p));
      }
    }
  }
  return plans;
}

DatasetDescriptor load_configured(const DatasetConfig& dc) {
  DatasetDescriptor d = load_manifest(dc.manifest);
  d.name = dc.name;  // the configured name wins over the file stem
  if (dc.split_file) d.recommended_split = load_split_file(*dc.split_file);
  return d;
}

Splits split_dataset(std::uint64_t run_seed, const ExperimentConfig& cfg,
                     const DatasetDescriptor& d) {
  SplitSpec s = cfg.split;
  s.seed = mix_seed(run_seed, fnv1a("split/" + d.name));
  return make_splits(d, s);
}

void write_history_csv(const FitReport& report, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char line[96];
  for (int e = 0; e < report.epochs_run; ++e) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", e + 1, report.train_loss[e],
                  report.val_loss[e]);
    out << line;
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg, unsigned stages) {
  cfg.validate();
  if ((stages & kStageAll) == 0) throw ContractError("run_experiment: no stages selected");

  RunOutcome outcome;
  outcome.out_dir = cfg.out_dir;
  fs::create_directories(cfg.out_dir);
  const fs::path ckpt_dir = cfg.out_dir / "checkpoints";

  // Manifests and deterministic splits, needed by every stage.
  std::vector<DatasetDescriptor> datasets;
  std::vector<Splits> splits;
  for (const auto& dc : cfg.datasets) {
    datasets.push_back(load_configured(dc));
    splits.push_back(split_dataset(cfg.seed, cfg, datasets.back()));
  }

  const std::vector<ModelPlan> plans = plan_models(cfg);
  std::vector<std::optional<ModelArtifact>> artifacts(plans.size());
  outcome.models.resize(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    outcome.models[i].id = plans[i].id;
    outcome.models[i].seed = plans[i].seed;
  }

  bool partial = false;

  if (stages & kStageTrain) {
    fs::create_directories(ckpt_dir);
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const ModelPlan& p = plans[i];
      ModelStatus& st = outcome.models[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainConfig tc = cfg.train;
        tc.seed = p.seed;
        Classifier net = build_model(tc.backbone, p.gabor, p.seed, tc.pretrained_weights);
        FitReport fit_report;
        ModelArtifact art = fit(std::move(net), datasets[p.dataset].name,
                                splits[p.dataset].train, splits[p.dataset].val, p.preprocess,
                                tc, &fit_report);
        save_checkpoint(art, ckpt_dir / (p.id + ".ctw"));
        write_history_csv(fit_report, ckpt_dir / (p.id + ".history.csv"));
        st.status = "trained";
        st.best_epoch = fit_report.best_epoch;
        st.best_val_loss = fit_report.best_val_loss;
        artifacts[i] = std::move(art);
      } catch (const std::exception& e) {
        st.status = "failed";
        st.message = e.what();
        partial = true;
        std::cerr << "[ctaudit] training " << p.id << " failed: " << e.what() << "\n";
      }
      st.seconds = seconds_since(t0);
    }
  }

  // Later stages fall back to checkpoints on disk when training did not run
  // in this process (or did not produce this model).
  auto require_artifact = [&](std::size_t i) -> ModelArtifact* {
    if (artifacts[i]) return &*artifacts[i];
    ModelStatus& st = outcome.models[i];
    if (st.status == "failed" || st.status == "missing") return nullptr;
    const fs::path path = ckpt_dir / (plans[i].id + ".ctw");
    try {
      ModelArtifact art = load_checkpoint(path);
      if (artifact_id(art.provenance) != plans[i].id) {
        throw ContractError("checkpoint " + path.string() + " holds model '" +
                            artifact_id(art.provenance) + "', expected '" + plans[i].id + "'");
      }
      artifacts[i] = std::move(art);
      st.status = "loaded";
      st.best_epoch = artifacts[i]->provenance.best_epoch;
      st.best_val_loss = artifacts[i]->provenance.best_val_loss;
      return &*artifacts[i];
    } catch (const std::exception& e) {
      st.status = "missing";
      st.message = e.what();
      std::cerr << "[ctaudit] cannot load " << plans[i].id << ": " << e.what() << "\n";
      return nullptr;
    }
  };

  if (stages & kStageEvaluate) {
    std::vector<std::pair<std::string, std::vector<SampleRecord>>> partitions;
    for (std::size_t di = 0; di < datasets.size(); ++di) {
      partitions.emplace_back(datasets[di].name, splits[di].test);
    }

    CrossGrid grid;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      if (ModelArtifact* art = require_artifact(i)) {
        CrossGrid one = cross_dataset_matrix({art}, partitions, cfg.train.batch_size);
        for (auto& cell : one.cells) grid.cells.push_back(std::move(cell));
      } else {
        for (const auto& [name, records] : partitions) {
          (void)records;
          GridCell cell;
          cell.model_id = plans[i].id;
          cell.model_dataset = datasets[plans[i].dataset].name;
          cell.preprocess = histogram_mode_name(plans[i].preprocess.histogram_mode);
          cell.gabor = plans[i].gabor;
          cell.test_dataset = name;
          cell.present = false;
          cell.note = outcome.models[i].status == "failed" ? "training failed"
                                                           : "checkpoint unavailable";
          grid.cells.push_back(std::move(cell));
        }
      }
    }
    for (const auto& cell : grid.cells) {
      if (!cell.present) partial = true;
    }
    write_grid_csv(grid, cfg.out_dir / "grid.csv");
    write_grid_json(grid, cfg.out_dir / "grid.json");
  }

  if (stages & kStageDiagnose) {
    const fs::path bias_dir = cfg.out_dir / "bias";
    fs::create_directories(bias_dir);
    for (const auto& d : datasets) {
      BiasReport report = diagnose_dataset(d.name, d.records);
      write_bias_report(report, bias_dir);
    }
  }

  if ((stages & kStageInvolve) && cfg.control) {
    const DatasetDescriptor control = load_configured(*cfg.control);
    const fs::path strata_dir = cfg.out_dir / "strata";
    fs::create_directories(strata_dir);

    std::vector<std::pair<std::string, StrataReport>> strata_reports;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      ModelArtifact* art = require_artifact(i);
      if (!art) {
        partial = true;
        continue;
      }
      StrataReport rep = score_strata(*art, control.records, cfg.train.batch_size);
      write_strata_csv(rep, strata_dir / (plans[i].id + ".csv"));
      strata_reports.emplace_back(plans[i].id, std::move(rep));
    }

    // Ensemble pairs combine two configured variants of the same dataset.
    for (const auto& pair : cfg.ensembles) {
      for (std::size_t di = 0; di < datasets.size(); ++di) {
        auto find_plan = [&](const EnsembleMember& m) {
          for (std::size_t i = 0; i < plans.size(); ++i) {
            if (plans[i].dataset == di && plans[i].gabor == m.gabor &&
                plans[i].preprocess.histogram_mode == m.preprocess) {
              return i;
            }
          }
          return plans.size();  // unreachable: validate() pins members to variants
        };
        const std::size_t ia = find_plan(pair.a);
        const std::size_t ib = find_plan(pair.b);
        ModelArtifact* a = require_artifact(ia);
        ModelArtifact* b = require_artifact(ib);
        if (a == nullptr || b == nullptr) {
          partial = true;
          continue;
        }
        StrataReport rep = score_strata_ensemble(*a, *b, control.records, cfg.train.batch_size);
        const std::string stem = "minmax_" + plans[ia].id + "__" + plans[ib].id;
        write_strata_csv(rep, strata_dir / (stem + ".csv"));
        strata_reports.emplace_back(stem, std::move(rep));
      }
    }

    emit_plots(strata_reports, cfg.out_dir / "plots");
  }

  outcome.exit_status = partial ? 2 : 0;

  nlohmann::json manifest;
  manifest["config"] = cfg;
  manifest["seed"] = cfg.seed;
  nlohmann::json stage_names = nlohmann::json::array();
  if (stages & kStageTrain) stage_names.push_back("train");
  if (stages & kStageEvaluate) stage_names.push_back("evaluate");
  if (stages & kStageDiagnose) stage_names.push_back("diagnose");
  if (stages & kStageInvolve) stage_names.push_back("involve");
  manifest["stages"] = stage_names;
  manifest["models"] = nlohmann::json::array();
  for (const ModelStatus& st : outcome.models) {
    nlohmann::json m{{"id", st.id},           {"seed", st.seed},
                     {"status", st.status},   {"seconds", st.seconds},
                     {"best_epoch", st.best_epoch}, {"best_val_loss", st.best_val_loss}};
    if (!st.message.empty()) m["message"] = st.message;
    manifest["models"].push_back(std::move(m));
  }
  manifest["versions"] = {{"ctaudit", kVersion}, {"opencv", CV_VERSION}};
  manifest["exit_status"] = outcome.exit_status;

  std::ofstream mf(cfg.out_dir / "run_manifest.json", std::ios::binary);
  if (!mf) throw IoError("cannot write " + (cfg.out_dir / "run_manifest.json").string());
  mf << manifest.dump(2) << "\n";

  return outcome;
}

// --- Plot rendering --------------------------------------------------------

namespace {

constexpr int kPlotW = 640, kPlotH = 480;
constexpr int kMarginL = 70, kMarginR = 30, kMarginT = 48, kMarginB = 56;

cv::Point plot_point(double x01, double pct) {
  const int pw = kPlotW - kMarginL - kMarginR;
  const int ph = kPlotH - kMarginT - kMarginB;
  const int px = kMarginL + static_cast<int>(std::lround(x01 * pw));
  const int py = kMarginT + static_cast<int>(std::lround((1.0 - pct / 100.0) * ph));
  return {px, py};
}

struct Series {
  std::vector<cv::Point> points;
  std::vector<cv::Point> band;  // upper edge, then lower edge reversed
  cv::Scalar line, fill;
};

Series make_series(const StrataReport& report, bool positive, cv::Scalar line, cv::Scalar fill) {
  Series s;
  s.line = line;
  s.fill = fill;
  std::vector<cv::Point> lower;
  for (const StratumStats& st : report.strata) {
    const double x01 = static_cast<int>(st.stratum) / 4.0;
    const double mean = positive ? st.mean_positive : st.mean_negative;
    const double ci = st.ci_defined ? (positive ? st.ci_positive : st.ci_negative) : 0.0;
    s.points.push_back(plot_point(x01, mean));
    s.band.push_back(plot_point(x01, std::min(100.0, mean + ci)));
    lower.push_back(plot_point(x01, std::max(0.0, mean - ci)));
  }
  s.band.insert(s.band.end(), lower.rbegin(), lower.rend());
  return s;
}

}  // namespace

void render_strata_plot(const StrataReport& report, const std::filesystem::path& path) {
  if (report.strata.empty()) throw ContractError("strata plot: report has no strata");

  cv::Mat canvas(kPlotH, kPlotW, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar axis(40, 40, 40), grid(230, 230, 230), text(60, 60, 60);

  // Horizontal gridlines with percentage labels.
  for (int v = 0; v <= 100; v += 25) {
    const cv::Point a = plot_point(0.0, v), b = plot_point(1.0, v);
    cv::line(canvas, a, b, grid, 1, cv::LINE_8);
    char label[8];
    std::snprintf(label, sizeof label, "%d%%", v);
    cv::putText(canvas, label, {12, a.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42, text, 1,
                cv::LINE_8);
  }
  // Stratum ticks across the full CT-0..CT-4 axis.
  for (int sv = 0; sv <= 4; ++sv) {
    const cv::Point a = plot_point(sv / 4.0, 0.0);
    cv::line(canvas, a, {a.x, a.y + 4}, axis, 1, cv::LINE_8);
    cv::putText(canvas, "CT-" + std::to_string(sv), {a.x - 18, kPlotH - kMarginB + 22},
                cv::FONT_HERSHEY_SIMPLEX, 0.42, text, 1, cv::LINE_8);
  }

  const Series pos = make_series(report, true, {60, 60, 200}, {215, 215, 250});
  const Series neg = make_series(report, false, {180, 110, 30}, {250, 230, 210});
  for (const Series* s : {&pos, &neg}) {
    if (s->band.size() >= 3) {
      cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{s->band}, s->fill, cv::LINE_8);
    }
  }
  for (const Series* s : {&pos, &neg}) {
    if (s->points.size() >= 2) {
      cv::polylines(canvas, std::vector<std::vector<cv::Point>>{s->points}, false, s->line, 2,
                    cv::LINE_8);
    }
    for (const cv::Point& pt : s->points) cv::circle(canvas, pt, 3, s->line, cv::FILLED, cv::LINE_8);
  }

  // Frame, title, legend.
  cv::rectangle(canvas, plot_point(0.0, 100.0), plot_point(1.0, 0.0), axis, 1, cv::LINE_8);
  cv::putText(canvas, report.label, {kMarginL, 26}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1,
              cv::LINE_8);
  const int lx = kPlotW - kMarginR - 150, ly = 20;
  cv::line(canvas, {lx, ly}, {lx + 24, ly}, pos.line, 2, cv::LINE_8);
  cv::putText(canvas, "positive", {lx + 30, ly + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42, text, 1,
              cv::LINE_8);
  cv::line(canvas, {lx, ly + 16}, {lx + 24, ly + 16}, neg.line, 2, cv::LINE_8);
  cv::putText(canvas, "negative", {lx + 30, ly + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.42, text, 1,
              cv::LINE_8);

  if (!cv::imwrite(path.string(), canvas)) {
    throw IoError("cannot write plot: " + path.string());
  }
}

void emit_plots(const std::vector<std::pair<std::string, StrataReport>>& reports,
                const std::filesystem::path& plots_dir) {
  if (reports.empty()) {
    std::cerr << "[ctaudit] emit_plots: no strata reports, nothing to draw\n";
    return;
  }
  fs::create_directories(plots_dir);
  for (const auto& [stem, report] : reports) {
    render_strata_plot(report, plots_dir / (stem + ".png"));
  }
}

}  // namespace ctaudit
