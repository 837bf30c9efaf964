#include "ctaudit/model.hpp"

#include <cstring>
#include <fstream>

#include "ctaudit/common.hpp"
#include "ctaudit/gabor.hpp"

namespace ctaudit {

std::string backbone_name(Backbone b) {
  switch (b) {
    case Backbone::densenet121: return "densenet121";
    case Backbone::tiny_cnn: return "tiny_cnn";
  }
  throw ContractError("backbone_name: unknown backbone");
}

Backbone parse_backbone(const std::string& name) {
  if (name == "densenet121") return Backbone::densenet121;
  if (name == "tiny_cnn") return Backbone::tiny_cnn;
  throw ContractError("unknown backbone '" + name + "' (expected densenet121 or tiny_cnn)");
}

std::vector<std::pair<std::string, std::array<int, 4>>> Classifier::shape_trace() const {
  std::vector<std::pair<std::string, std::array<int, 4>>> out;
  const auto& shapes = net->traced_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    out.emplace_back(net->layers()[i]->name(), shapes[i]);
  }
  return out;
}

namespace {

nn::LayerPtr make_stem(const std::string& name, int out_channels, bool gabor,
                       std::uint64_t seed) {
  if (gabor) {
    GaborBank bank = init_bank(out_channels, 7, seed);
    bank.stride = 2;
    bank.padding = 3;
    return std::make_shared<nn::GaborConv2d>(name, 3, bank);
  }
  return std::make_shared<nn::Conv2d>(name, 3, out_channels, 7, 2, 3, false, seed);
}

Classifier make_densenet121(bool gabor, std::uint64_t seed) {
  Classifier m;
  m.backbone = Backbone::densenet121;
  m.gabor = gabor;
  m.net = std::make_shared<nn::Sequential>("densenet121");

  auto& net = *m.net;
  net.add(make_stem("features.conv0", 64, gabor, seed));
  net.add(std::make_shared<nn::BatchNorm2d>("features.norm0", 64));
  net.add(std::make_shared<nn::ReLU>("features.relu0"));
  net.add(std::make_shared<nn::MaxPool2d>("features.pool0", 3, 2, 1));

  // Standard 121-layer configuration: growth 32, bottleneck 4x.
  const int block_layers[4] = {6, 12, 24, 16};
  int channels = 64;
  std::uint64_t layer_seed = seed + 101;
  for (int b = 0; b < 4; ++b) {
    const std::string block_name = "features.denseblock" + std::to_string(b + 1);
    auto block =
        std::make_shared<nn::DenseBlock>(block_name, block_layers[b], channels, 32, 4, layer_seed);
    layer_seed += 2 * block_layers[b] + 1;
    channels = block->out_channels();
    net.add(block);

    if (b < 3) {
      const std::string t = "features.transition" + std::to_string(b + 1);
      auto trans = std::make_shared<nn::Sequential>(t);
      trans->add(std::make_shared<nn::BatchNorm2d>(t + ".norm", channels));
      trans->add(std::make_shared<nn::ReLU>(t + ".relu"));
      trans->add(std::make_shared<nn::Conv2d>(t + ".conv", channels, channels / 2, 1, 1, 0, false,
                                              layer_seed++));
      trans->add(std::make_shared<nn::AvgPool2d>(t + ".pool", 2, 2));
      channels /= 2;
      net.add(trans);
    }
  }

  net.add(std::make_shared<nn::BatchNorm2d>("features.norm5", channels));
  net.add(std::make_shared<nn::ReLU>("features.relu5"));
  net.add(std::make_shared<nn::GlobalAvgPool>("features.gap"));
  net.add(std::make_shared<nn::Linear>("classifier", channels, 2, seed + 9001));
  m.feature_dim = channels;  // 1024
  return m;
}

Classifier make_tiny_cnn(bool gabor, std::uint64_t seed) {
  Classifier m;
  m.backbone = Backbone::tiny_cnn;
  m.gabor = gabor;
  m.net = std::make_shared<nn::Sequential>("tiny_cnn");

  auto& net = *m.net;
  // Block 1: the swappable stem, same 7/2/3 geometry as the big backbone.
  net.add(make_stem("stem.conv", 16, gabor, seed));
  net.add(std::make_shared<nn::BatchNorm2d>("stem.norm", 16));
  net.add(std::make_shared<nn::ReLU>("stem.relu"));

  struct BlockSpec {
    const char* name;
    int in, out;
  };
  const BlockSpec blocks[] = {{"block2", 16, 32}, {"block3", 32, 32}, {"block4", 32, 64}};
  std::uint64_t layer_seed = seed + 11;
  for (const auto& b : blocks) {
    const std::string prefix = b.name;
    net.add(std::make_shared<nn::Conv2d>(prefix + ".conv", b.in, b.out, 3, 1, 1, false,
                                         layer_seed++));
    net.add(std::make_shared<nn::BatchNorm2d>(prefix + ".norm", b.out));
    net.add(std::make_shared<nn::ReLU>(prefix + ".relu"));
    net.add(std::make_shared<nn::MaxPool2d>(prefix + ".pool", 2, 2, 0));
  }
  net.add(std::make_shared<nn::GlobalAvgPool>("gap"));
  net.add(std::make_shared<nn::Linear>("classifier", 64, 2, seed + 9001));
  m.feature_dim = 64;
  return m;
}

}  // namespace

Classifier make_classifier(Backbone backbone, bool gabor, std::uint64_t seed) {
  switch (backbone) {
    case Backbone::densenet121: return make_densenet121(gabor, seed);
    case Backbone::tiny_cnn: return make_tiny_cnn(gabor, seed);
  }
  throw ContractError("make_classifier: unknown backbone");
}

Classifier build_model(Backbone backbone, bool gabor, std::uint64_t seed,
                       const std::filesystem::path& pretrained_weights) {
  Classifier model = make_classifier(backbone, gabor, seed);
  if (backbone != Backbone::densenet121) return model;

  if (pretrained_weights.empty() || !std::filesystem::exists(pretrained_weights)) {
    throw EnvironmentError(
        "densenet121 requires a pretrained-weights archive (got '" +
        pretrained_weights.string() +
        "'); export one with: python3 tools/export_densenet121.py <output.ctw>");
  }
  const TensorArchive archive = read_tensor_archive(pretrained_weights);
  // The 2-logit head is always new; a Gabor stem starts from its wavelet
  // initialization rather than from pretrained kernel weights.
  std::vector<std::string> allow_fresh = {"classifier.weight", "classifier.bias"};
  if (gabor) allow_fresh.push_back("features.conv0.wavelet");
  load_parameters(model, archive, allow_fresh);
  return model;
}

// ---------------------------------------------------------------------------
// Named-tensor archive

namespace {

constexpr char kMagic[8] = {'C', 'T', 'A', 'U', 'D', 'I', 'T', '1'};

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated tensor archive: " + path.string());
  return value;
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& path, const std::string& metadata_json,
                          const std::vector<std::pair<std::string, NamedTensor>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());

  out.write(kMagic, sizeof(kMagic));
  write_raw(out, static_cast<std::uint64_t>(metadata_json.size()));
  out.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
  write_raw(out, static_cast<std::uint32_t>(tensors.size()));

  for (const auto& [name, tensor] : tensors) {
    write_raw(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<std::uint32_t>(tensor.shape.size()));
    std::size_t count = 1;
    for (int d : tensor.shape) {
      write_raw(out, static_cast<std::uint32_t>(d));
      count *= static_cast<std::size_t>(d);
    }
    if (count != tensor.data.size()) {
      throw ContractError("tensor '" + name + "': shape does not match data length");
    }
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor archive: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a tensor archive (bad magic): " + path.string());
  }

  TensorArchive archive;
  const auto json_len = read_raw<std::uint64_t>(in, path);
  archive.metadata_json.resize(json_len);
  in.read(archive.metadata_json.data(), static_cast<std::streamsize>(json_len));
  if (!in) throw IoError("truncated tensor archive: " + path.string());

  const auto count = read_raw<std::uint32_t>(in, path);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = read_raw<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("truncated tensor archive: " + path.string());

    NamedTensor tensor;
    const auto ndim = read_raw<std::uint32_t>(in, path);
    std::size_t elements = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = read_raw<std::uint32_t>(in, path);
      tensor.shape.push_back(static_cast<int>(dim));
      elements *= dim;
    }
    tensor.data.resize(elements);
    in.read(reinterpret_cast<char*>(tensor.data.data()),
            static_cast<std::streamsize>(elements * sizeof(double)));
    if (!in) throw IoError("truncated tensor archive: " + path.string());
    archive.tensors.emplace(std::move(name), std::move(tensor));
  }
  return archive;
}

void load_parameters(Classifier& model, const TensorArchive& archive,
                     const std::vector<std::string>& allow_fresh) {
  for (nn::Param* p : model.params()) {
    auto it = archive.tensors.find(p->name);
    if (it == archive.tensors.end()) {
      const bool fresh_ok =
          std::find(allow_fresh.begin(), allow_fresh.end(), p->name) != allow_fresh.end();
      if (!fresh_ok) {
        throw EnvironmentError("weights archive is missing tensor '" + p->name +
                               "'; re-export with tools/export_densenet121.py");
      }
      continue;
    }
    const NamedTensor& t = it->second;
    if (t.data.size() != p->value.size()) {
      throw ContractError("tensor '" + p->name + "': archive shape does not match model");
    }
    p->value = t.data;
  }
}

}  // namespace ctaudit
