#include "ctaudit/trainer.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"
#include "ctaudit/image.hpp"

namespace ctaudit {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("train: learning_rate must be positive");
  if (patience < 1) throw ContractError("train: patience must be at least 1");
  if (max_epochs < 1) throw ContractError("train: max_epochs must be at least 1");
  if (batch_size < 1) throw ContractError("train: batch_size must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"learning_rate", cfg.learning_rate},
                     {"patience", cfg.patience},
                     {"max_epochs", cfg.max_epochs},
                     {"batch_size", cfg.batch_size},
                     {"seed", cfg.seed},
                     {"backbone", backbone_name(cfg.backbone)}};
  if (!cfg.pretrained_weights.empty()) j["pretrained_weights"] = cfg.pretrained_weights.string();
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  cfg = TrainConfig{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(cfg.learning_rate);
  if (j.contains("patience")) j.at("patience").get_to(cfg.patience);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(cfg.max_epochs);
  if (j.contains("batch_size")) j.at("batch_size").get_to(cfg.batch_size);
  if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
  if (j.contains("backbone")) cfg.backbone = parse_backbone(j.at("backbone"));
  if (j.contains("pretrained_weights")) {
    cfg.pretrained_weights = j.at("pretrained_weights").get<std::string>();
  }
  cfg.validate();
}

EarlyStopMonitor::EarlyStopMonitor(int patience) : patience_(patience) {
  if (patience < 1) throw ContractError("EarlyStopMonitor: patience must be at least 1");
}

bool EarlyStopMonitor::observe(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_ = 0;
  } else {
    ++since_;
  }
  return since_ >= patience_;
}

GrayImageF augment(const GrayImageF& img, Rng& rng) {
  const double degrees = rng.uniform(-1.0, 1.0);
  const bool flip = rng.bernoulli(0.5);

  GrayImageF out = rotate_expand(img, degrees * M_PI / 180.0, 0.0);
  out = resize_bilinear(out, img.height, img.width);
  if (flip) out = hflip(out);
  return out;
}

void to_json(nlohmann::json& j, const Provenance& p) {
  j = nlohmann::json{{"dataset", p.dataset},       {"preprocess", p.preprocess},
                     {"gabor", p.gabor},           {"backbone", p.backbone},
                     {"seed", p.seed},             {"best_epoch", p.best_epoch},
                     {"best_val_loss", p.best_val_loss}};
}

void from_json(const nlohmann::json& j, Provenance& p) {
  j.at("dataset").get_to(p.dataset);
  j.at("preprocess").get_to(p.preprocess);
  j.at("gabor").get_to(p.gabor);
  j.at("backbone").get_to(p.backbone);
  j.at("seed").get_to(p.seed);
  j.at("best_epoch").get_to(p.best_epoch);
  j.at("best_val_loss").get_to(p.best_val_loss);
}

std::string artifact_id(const Provenance& p) {
  return p.dataset + "_" + histogram_mode_name(p.preprocess.histogram_mode) + "_" +
         (p.gabor ? "gabor" : "plain");
}

namespace {

// Copy a grayscale sample into row i of an NCHW batch via stage-2 processing.
void fill_batch_row(nn::Tensor& batch, int i, const GrayImageF& gray,
                    const PreprocessSpec& spec) {
  const Tensor3 t = finalize_tensor(gray, spec);
  std::copy(t.values.begin(), t.values.end(),
            batch.v.begin() + static_cast<std::size_t>(i) * t.values.size());
}

double evaluate_loss(Classifier& model, const std::vector<Tensor3>& tensors,
                     const std::vector<int>& labels, int batch_size, int epoch) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t start = 0; start < tensors.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, tensors.size() - start);
    nn::Tensor batch = nn::Tensor::zeros(static_cast<int>(n), 3, tensors[start].height,
                                         tensors[start].width);
    std::vector<int> batch_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(tensors[start + i].values.begin(), tensors[start + i].values.end(),
                batch.v.begin() + i * tensors[start].values.size());
      batch_labels[i] = labels[start + i];
    }
    const nn::Tensor logits = model.forward(batch, false);
    const nn::LossResult loss = nn::softmax_cross_entropy(logits, batch_labels);
    if (!std::isfinite(loss.value)) {
      throw TrainingDiverged("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    total += loss.value * static_cast<double>(n);
    counted += n;
  }
  return total / static_cast<double>(counted);
}

}  // namespace

ModelArtifact fit(Classifier model, const std::string& dataset_name,
                  const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val,
                  const PreprocessSpec& preprocess, const TrainConfig& cfg, FitReport* report) {
  cfg.validate();
  preprocess.validate();
  if (train.empty() || val.empty()) {
    throw ContractError("fit: train and validation partitions must be nonempty");
  }

  // Decode + stage-1 preprocess once; augmentation happens per use on the
  // resized grayscale plane, normalization afterwards.
  std::vector<GrayImageF> train_gray;
  std::vector<int> train_labels;
  train_gray.reserve(train.size());
  for (const auto& r : train) {
    train_gray.push_back(preprocess_gray(decode_gray(r.image_path), preprocess));
    train_labels.push_back(r.label);
  }
  std::vector<Tensor3> val_tensors;
  std::vector<int> val_labels;
  val_tensors.reserve(val.size());
  for (const auto& r : val) {
    val_tensors.push_back(preprocess_pipeline(decode_gray(r.image_path), preprocess));
    val_labels.push_back(r.label);
  }

  std::vector<nn::Param*> params = model.params();
  nn::AdamOptimizer optimizer(params, cfg.learning_rate);
  EarlyStopMonitor monitor(cfg.patience);

  // Snapshot storage for best-epoch restore (includes batch-norm buffers).
  std::vector<std::vector<double>> best_values;
  auto snapshot = [&]() {
    best_values.clear();
    best_values.reserve(params.size());
    for (nn::Param* p : params) best_values.push_back(p->value);
  };

  FitReport local;
  FitReport& rep = report ? *report : local;
  rep = FitReport{};

  const int resolution = preprocess.resolution;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::vector<std::size_t> schedule =
        balanced_schedule(train, train.size(), mix_seed(cfg.seed, epoch));
    Rng aug_rng(mix_seed(cfg.seed, 0xAA00000000ull + epoch));

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < schedule.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, schedule.size() - start);
      nn::Tensor batch = nn::Tensor::zeros(static_cast<int>(n), 3, resolution, resolution);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rec = schedule[start + i];
        fill_batch_row(batch, static_cast<int>(i), augment(train_gray[rec], aug_rng), preprocess);
        labels[i] = train_labels[rec];
      }

      const nn::Tensor logits = model.forward(batch, true);
      const nn::LossResult loss = nn::softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.value)) {
        throw TrainingDiverged("training loss is not finite at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_index));
      }
      optimizer.zero_grad();
      model.net->backward(loss.grad);
      optimizer.step();

      epoch_loss += loss.value * static_cast<double>(n);
      seen += n;
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(seen));

    // Recompute batch-norm statistics over the unaugmented training images.
    // The optimizer stream is augmented, so its momentum-tracked moments drift
    // away from the distribution that eval-mode forwards actually see; the
    // refresh pins the running buffers to the population they must whiten.
    model.net->stat_refresh(true);
    for (std::size_t start = 0; start < train_gray.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, train_gray.size() - start);
      nn::Tensor batch = nn::Tensor::zeros(static_cast<int>(n), 3, resolution, resolution);
      for (std::size_t i = 0; i < n; ++i) {
        fill_batch_row(batch, static_cast<int>(i), train_gray[start + i], preprocess);
      }
      (void)model.forward(batch, true);
    }
    model.net->stat_refresh(false);

    const double val_loss = evaluate_loss(model, val_tensors, val_labels, cfg.batch_size, epoch);
    rep.val_loss.push_back(val_loss);
    rep.epochs_run = epoch;

    const bool stop = monitor.observe(val_loss);
    if (monitor.best_epoch() == epoch) snapshot();
    if (stop) break;
  }

  // Restore the best-validation weights.
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];

  rep.best_epoch = monitor.best_epoch();
  rep.best_val_loss = monitor.best_val_loss();

  ModelArtifact artifact{.provenance = {.dataset = dataset_name,
                                        .preprocess = preprocess,
                                        .gabor = model.gabor,
                                        .backbone = backbone_name(model.backbone),
                                        .seed = cfg.seed,
                                        .best_epoch = monitor.best_epoch(),
                                        .best_val_loss = monitor.best_val_loss()},
                         .model = std::move(model)};
  return artifact;
}

void save_checkpoint(ModelArtifact& artifact, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["kind"] = "checkpoint";
  meta["provenance"] = artifact.provenance;

  std::vector<std::pair<std::string, NamedTensor>> tensors;
  for (nn::Param* p : artifact.model.params()) {
    tensors.emplace_back(p->name, NamedTensor{p->shape, p->value});
  }
  write_tensor_archive(path, meta.dump(2), tensors);
}

ModelArtifact load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = read_tensor_archive(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(archive.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }
  if (!meta.contains("provenance")) {
    throw IoError("checkpoint " + path.string() + ": missing provenance");
  }

  ModelArtifact artifact;
  artifact.provenance = meta.at("provenance").get<Provenance>();
  artifact.model = make_classifier(parse_backbone(artifact.provenance.backbone),
                                   artifact.provenance.gabor, artifact.provenance.seed);
  load_parameters(artifact.model, archive, {});
  return artifact;
}

}  // namespace ctaudit
