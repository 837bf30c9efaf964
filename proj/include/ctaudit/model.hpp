#pragma once

// Classifier assembly: DenseNet-121 (fine-tuned from exported pretrained
// weights) and tiny_cnn (a desk-scale backbone that trains from scratch in
// minutes).  Either stem can be swapped for a learnable Gabor bank with
// identical output geometry.
//
// DenseNet parameter names follow the torchvision state_dict convention
// (features.conv0.weight, features.denseblock1.denselayer1.norm1.weight, ...)
// so tools/export_densenet121.py can dump the published weights directly.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctaudit/nn.hpp"

namespace ctaudit {

enum class Backbone { densenet121, tiny_cnn };

std::string backbone_name(Backbone b);
Backbone parse_backbone(const std::string& name);

struct Classifier {
  Backbone backbone = Backbone::tiny_cnn;
  bool gabor = false;
  int feature_dim = 0;  // width entering the 2-logit head

  std::shared_ptr<nn::Sequential> net;

  nn::Tensor forward(const nn::Tensor& batch, bool training) { return net->forward(batch, training); }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    net->collect_params(out);
    return out;
  }

  // Top-level layer names and output shapes from the most recent forward.
  std::vector<std::pair<std::string, std::array<int, 4>>> shape_trace() const;
};

// Architecture factory with fresh (random) weights; `seed` pins the
// initialization.  Useful on its own for tiny_cnn and for structural tests.
Classifier make_classifier(Backbone backbone, bool gabor, std::uint64_t seed);

// Full build contract: tiny_cnn trains from scratch; densenet121 additionally
// requires a pretrained-weights archive (see tools/export_densenet121.py) and
// throws EnvironmentError with a remediation hint when it is absent.  The
// 2-logit head is always freshly initialized; with gabor=true the stem bank
// is freshly initialized and any stem weights in the archive are ignored.
Classifier build_model(Backbone backbone, bool gabor, std::uint64_t seed,
                       const std::filesystem::path& pretrained_weights = {});

// --- Named-tensor archive -------------------------------------------------
// Binary container shared by checkpoints and exported pretrained weights:
//   magic "CTAUDIT1" | u64 json_len | json bytes | u32 tensor_count |
//   per tensor: u32 name_len | name | u32 ndim | u32 dims[] | f64 data[]
// Little-endian throughout.

struct NamedTensor {
  std::vector<int> shape;
  std::vector<double> data;
};

void write_tensor_archive(const std::filesystem::path& path, const std::string& metadata_json,
                          const std::vector<std::pair<std::string, NamedTensor>>& tensors);

struct TensorArchive {
  std::string metadata_json;
  std::map<std::string, NamedTensor> tensors;
};

TensorArchive read_tensor_archive(const std::filesystem::path& path);

// Copy archive tensors onto the classifier's parameters by name.
// Missing names are tolerated only when listed in `allow_fresh` (e.g. the new
// head); extra archive entries are ignored.  Shape mismatches throw.
void load_parameters(Classifier& model, const TensorArchive& archive,
                     const std::vector<std::string>& allow_fresh);

}  // namespace ctaudit
