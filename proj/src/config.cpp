#include "ctaudit/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"

namespace ctaudit {

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw ContractError("config: out_dir must be set");
  if (datasets.empty()) throw ContractError("config: at least one dataset is required");
  if (preprocess_variants.empty()) {
    throw ContractError("config: at least one preprocess variant is required");
  }
  if (gabor_variants.empty()) throw ContractError("config: at least one gabor flag is required");

  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (d.name.empty()) throw ContractError("config: dataset name must not be empty");
    if (!names.insert(d.name).second) {
      throw ContractError("config: duplicate dataset name '" + d.name + "'");
    }
  }
  std::set<HistogramMode> pre(preprocess_variants.begin(), preprocess_variants.end());
  if (pre.size() != preprocess_variants.size()) {
    throw ContractError("config: duplicate preprocess variant");
  }
  std::set<bool> gb(gabor_variants.begin(), gabor_variants.end());
  if (gb.size() != gabor_variants.size()) throw ContractError("config: duplicate gabor flag");

  if (!ensembles.empty() && !control) {
    throw ContractError("config: ensemble pairs require a control dataset");
  }
  for (const auto& e : ensembles) {
    for (const EnsembleMember* m : {&e.a, &e.b}) {
      if (std::find(preprocess_variants.begin(), preprocess_variants.end(), m->preprocess) ==
          preprocess_variants.end()) {
        throw ContractError("config: ensemble member uses unconfigured preprocess variant '" +
                            histogram_mode_name(m->preprocess) + "'");
      }
      if (std::find(gabor_variants.begin(), gabor_variants.end(), m->gabor) ==
          gabor_variants.end()) {
        throw ContractError("config: ensemble member uses unconfigured gabor flag");
      }
    }
  }
  preprocess_base.validate();
  split.validate();
  train.validate();
}

namespace {

DatasetConfig parse_dataset(const nlohmann::json& j, const std::filesystem::path& base) {
  DatasetConfig d;
  d.name = j.at("name").get<std::string>();
  d.manifest = j.at("manifest").get<std::string>();
  if (d.manifest.is_relative()) d.manifest = base / d.manifest;
  if (j.contains("split")) {
    std::filesystem::path p = j.at("split").get<std::string>();
    if (p.is_relative()) p = base / p;
    d.split_file = p;
  }
  return d;
}

EnsembleMember parse_member(const nlohmann::json& j) {
  EnsembleMember m;
  m.preprocess = parse_histogram_mode(j.at("preprocess").get<std::string>());
  m.gabor = j.at("gabor").get<bool>();
  return m;
}

nlohmann::json dataset_json(const DatasetConfig& d) {
  nlohmann::json j{{"name", d.name}, {"manifest", d.manifest.string()}};
  if (d.split_file) j["split"] = d.split_file->string();
  return j;
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& cfg) {
  j = nlohmann::json::object();
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir.string();
  j["datasets"] = nlohmann::json::array();
  for (const auto& d : cfg.datasets) j["datasets"].push_back(dataset_json(d));
  j["preprocess_variants"] = nlohmann::json::array();
  for (HistogramMode m : cfg.preprocess_variants) {
    j["preprocess_variants"].push_back(histogram_mode_name(m));
  }
  j["gabor_variants"] = cfg.gabor_variants;
  j["preprocess"] = cfg.preprocess_base;
  j["split"] = {{"train_fraction", cfg.split.train_fraction},
                {"val_fraction", cfg.split.val_fraction},
                {"test_fraction", cfg.split.test_fraction},
                {"patient_disjoint", cfg.split.patient_disjoint}};
  j["train"] = cfg.train;
  if (cfg.control) j["control"] = dataset_json(*cfg.control);
  if (!cfg.ensembles.empty()) {
    j["ensembles"] = nlohmann::json::array();
    for (const auto& e : cfg.ensembles) {
      auto member = [](const EnsembleMember& m) {
        return nlohmann::json{{"preprocess", histogram_mode_name(m.preprocess)},
                              {"gabor", m.gabor}};
      };
      j["ensembles"].push_back({{"a", member(e.a)}, {"b", member(e.b)}});
    }
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EnvironmentError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config " + path.string() + ": " + e.what());
  }

  const std::filesystem::path base = path.parent_path();
  ExperimentConfig cfg;
  try {
    if (j.contains("seed")) j.at("seed").get_to(cfg.seed);
    cfg.out_dir = j.at("out_dir").get<std::string>();
    if (cfg.out_dir.is_relative()) cfg.out_dir = base / cfg.out_dir;

    for (const auto& d : j.at("datasets")) cfg.datasets.push_back(parse_dataset(d, base));

    for (const auto& p : j.at("preprocess_variants")) {
      cfg.preprocess_variants.push_back(parse_histogram_mode(p.get<std::string>()));
    }
    for (const auto& g : j.at("gabor_variants")) cfg.gabor_variants.push_back(g.get<bool>());

    if (j.contains("preprocess")) j.at("preprocess").get_to(cfg.preprocess_base);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      if (s.contains("train_fraction")) s.at("train_fraction").get_to(cfg.split.train_fraction);
      if (s.contains("val_fraction")) s.at("val_fraction").get_to(cfg.split.val_fraction);
      if (s.contains("test_fraction")) s.at("test_fraction").get_to(cfg.split.test_fraction);
      if (s.contains("patient_disjoint")) s.at("patient_disjoint").get_to(cfg.split.patient_disjoint);
    }
    if (j.contains("train")) j.at("train").get_to(cfg.train);
    if (!cfg.train.pretrained_weights.empty() && cfg.train.pretrained_weights.is_relative()) {
      cfg.train.pretrained_weights = base / cfg.train.pretrained_weights;
    }
    if (j.contains("control")) cfg.control = parse_dataset(j.at("control"), base);
    if (j.contains("ensembles")) {
      for (const auto& e : j.at("ensembles")) {
        cfg.ensembles.push_back({parse_member(e.at("a")), parse_member(e.at("b"))});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config " + path.string() + ": " + e.what());
  }

  cfg.validate();
  return cfg;
}

}  // namespace ctaudit
