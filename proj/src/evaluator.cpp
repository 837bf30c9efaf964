#include "ctaudit/evaluator.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"
#include "ctaudit/image.hpp"

namespace ctaudit {

namespace {

// Ratio as a percentage; flags the report degenerate on a zero denominator.
double pct(long num, long den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double f1_from(double precision_pct, double recall_pct, bool& degenerate) {
  const double sum = precision_pct + recall_pct;
  if (sum == 0.0) {
    degenerate = true;
    return 0.0;
  }
  return 2.0 * precision_pct * recall_pct / sum;
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw ContractError("compute_metrics: no evaluated samples");
  if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) {
    throw ContractError("compute_metrics: negative counts");
  }

  MetricsReport r;
  r.cm = cm;
  r.accuracy = 100.0 * static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  r.sensitivity = pct(cm.tp, cm.tp + cm.fn, r.degenerate);
  r.specificity = pct(cm.tn, cm.tn + cm.fp, r.degenerate);

  r.precision_positive = pct(cm.tp, cm.tp + cm.fp, r.degenerate);
  r.recall_positive = r.sensitivity;
  r.f1_positive = f1_from(r.precision_positive, r.recall_positive, r.degenerate);

  const double precision_negative = pct(cm.tn, cm.tn + cm.fn, r.degenerate);
  const double recall_negative = r.specificity;
  const double f1_negative = f1_from(precision_negative, recall_negative, r.degenerate);

  r.precision = 0.5 * (r.precision_positive + precision_negative);
  r.recall = 0.5 * (r.recall_positive + recall_negative);
  r.f1 = 0.5 * (r.f1_positive + f1_negative);
  return r;
}

std::vector<Prediction> predict_proba(ModelArtifact& artifact,
                                      const std::vector<SampleRecord>& records, int batch_size) {
  if (batch_size < 1) throw ContractError("predict_proba: batch_size must be at least 1");
  const PreprocessSpec& spec = artifact.provenance.preprocess;

  std::vector<Prediction> out(records.size());
  std::vector<Tensor3> ready;
  std::vector<std::size_t> ready_idx;
  ready.reserve(records.size());

  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      ready.push_back(preprocess_pipeline(decode_gray(records[i].image_path), spec));
      ready_idx.push_back(i);
    } catch (const IoError& e) {
      out[i].ok = false;
      out[i].error = e.what();
    }
  }

  for (std::size_t start = 0; start < ready.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, ready.size() - start);
    nn::Tensor batch =
        nn::Tensor::zeros(static_cast<int>(n), 3, ready[start].height, ready[start].width);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(ready[start + i].values.begin(), ready[start + i].values.end(),
                batch.v.begin() + i * ready[start].values.size());
    }
    const nn::Tensor probs = nn::softmax(artifact.model.forward(batch, false));
    for (std::size_t i = 0; i < n; ++i) {
      Prediction& p = out[ready_idx[start + i]];
      p.ok = true;
      p.p_negative = probs.at(static_cast<int>(i), 0, 0, 0);
      p.p_positive = probs.at(static_cast<int>(i), 1, 0, 0);
    }
  }
  return out;
}

CrossGrid cross_dataset_matrix(
    std::vector<ModelArtifact*> artifacts,
    const std::vector<std::pair<std::string, std::vector<SampleRecord>>>& test_partitions,
    int batch_size) {
  CrossGrid grid;
  for (ModelArtifact* artifact : artifacts) {
    for (const auto& [dataset, records] : test_partitions) {
      GridCell cell;
      cell.model_id = artifact_id(artifact->provenance);
      cell.model_dataset = artifact->provenance.dataset;
      cell.preprocess = histogram_mode_name(artifact->provenance.preprocess.histogram_mode);
      cell.gabor = artifact->provenance.gabor;
      cell.test_dataset = dataset;

      if (records.empty()) {
        cell.note = "test partition empty";
        grid.cells.push_back(std::move(cell));
        continue;
      }

      const std::vector<Prediction> preds = predict_proba(*artifact, records, batch_size);
      ConfusionMatrix cm;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (!preds[i].ok) {
          ++cell.failed_records;
          continue;
        }
        const bool predicted_positive = preds[i].p_positive >= 0.5;
        if (records[i].label == 1) {
          (predicted_positive ? cm.tp : cm.fn)++;
        } else {
          (predicted_positive ? cm.fp : cm.tn)++;
        }
      }
      if (cm.total() == 0) {
        cell.note = "no readable records";
        grid.cells.push_back(std::move(cell));
        continue;
      }
      cell.metrics = compute_metrics(cm);
      cell.present = true;
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

namespace {

std::string fmt(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

}  // namespace

void write_grid_csv(const CrossGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grid CSV: " + path.string());
  out << "model_dataset,preprocess,gabor,test_dataset,accuracy,precision,recall,f1,"
         "sensitivity,specificity,status\n";
  for (const GridCell& c : grid.cells) {
    out << c.model_dataset << ',' << c.preprocess << ',' << (c.gabor ? "gabor" : "plain") << ','
        << c.test_dataset << ',';
    if (c.present) {
      const MetricsReport& m = c.metrics;
      out << fmt(m.accuracy) << ',' << fmt(m.precision) << ',' << fmt(m.recall) << ','
          << fmt(m.f1) << ',' << fmt(m.sensitivity) << ',' << fmt(m.specificity) << ",ok\n";
    } else {
      out << ",,,,,,absent\n";
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_grid_json(const CrossGrid& grid, const std::filesystem::path& path) {
  // Grouped per model, mirroring one published-style table per artifact.
  nlohmann::json models = nlohmann::json::array();
  std::string current;
  for (const GridCell& c : grid.cells) {
    if (models.empty() || current != c.model_id) {
      current = c.model_id;
      models.push_back({{"model", c.model_id},
                        {"model_dataset", c.model_dataset},
                        {"preprocess", c.preprocess},
                        {"gabor", c.gabor},
                        {"cells", nlohmann::json::array()}});
    }
    nlohmann::json cell{{"test_dataset", c.test_dataset}, {"status", c.present ? "ok" : "absent"}};
    if (c.present) {
      const MetricsReport& m = c.metrics;
      cell["accuracy"] = m.accuracy;
      cell["precision_macro"] = m.precision;
      cell["recall_macro"] = m.recall;
      cell["f1_macro"] = m.f1;
      cell["sensitivity"] = m.sensitivity;
      cell["specificity"] = m.specificity;
      cell["precision_positive"] = m.precision_positive;
      cell["recall_positive"] = m.recall_positive;
      cell["f1_positive"] = m.f1_positive;
      cell["degenerate"] = m.degenerate;
      cell["confusion"] = {{"tp", m.cm.tp}, {"fp", m.cm.fp}, {"tn", m.cm.tn}, {"fn", m.cm.fn}};
      cell["failed_records"] = c.failed_records;
    } else {
      cell["note"] = c.note;
    }
    models.back()["cells"].push_back(std::move(cell));
  }

  std::ofstream out(path);
  if (!out) throw IoError("cannot write grid JSON: " + path.string());
  out << nlohmann::json{{"grid", std::move(models)}}.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ctaudit
