#include "ctaudit/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"

namespace ctaudit {

std::string histogram_mode_name(HistogramMode mode) {
  switch (mode) {
    case HistogramMode::none: return "none";
    case HistogramMode::hist_eq: return "hist_eq";
    case HistogramMode::clahe: return "clahe";
  }
  throw ContractError("histogram_mode_name: unknown mode");
}

HistogramMode parse_histogram_mode(const std::string& name) {
  if (name == "none") return HistogramMode::none;
  if (name == "hist_eq") return HistogramMode::hist_eq;
  if (name == "clahe") return HistogramMode::clahe;
  throw ContractError("unknown histogram mode '" + name + "' (expected none, hist_eq or clahe)");
}

void PreprocessSpec::validate() const {
  if (resolution < 32) throw ContractError("preprocess: resolution must be at least 32");
  if (clahe_clip_limit <= 0.0) throw ContractError("preprocess: clahe_clip_limit must be positive");
  if (clahe_tiles < 1) throw ContractError("preprocess: clahe_tiles must be at least 1");
  for (double s : norm_std) {
    if (s <= 0.0) throw ContractError("preprocess: normalization stds must be positive");
  }
}

void to_json(nlohmann::json& j, const PreprocessSpec& spec) {
  j = nlohmann::json{{"histogram_mode", histogram_mode_name(spec.histogram_mode)},
                     {"resolution", spec.resolution},
                     {"clahe_clip_limit", spec.clahe_clip_limit},
                     {"clahe_tiles", spec.clahe_tiles},
                     {"norm_mean", spec.norm_mean},
                     {"norm_std", spec.norm_std}};
}

void from_json(const nlohmann::json& j, PreprocessSpec& spec) {
  spec = PreprocessSpec{};
  if (j.contains("histogram_mode")) spec.histogram_mode = parse_histogram_mode(j.at("histogram_mode"));
  if (j.contains("resolution")) j.at("resolution").get_to(spec.resolution);
  if (j.contains("clahe_clip_limit")) j.at("clahe_clip_limit").get_to(spec.clahe_clip_limit);
  if (j.contains("clahe_tiles")) j.at("clahe_tiles").get_to(spec.clahe_tiles);
  if (j.contains("norm_mean")) j.at("norm_mean").get_to(spec.norm_mean);
  if (j.contains("norm_std")) j.at("norm_std").get_to(spec.norm_std);
  spec.validate();
}

namespace {

// Equalization lookup table for a (possibly real-valued) 256-bin histogram.
// Returns false when the histogram has a single occupied bin; the caller
// treats that as "leave values alone".
bool equalize_lut(const std::array<double, 256>& hist, double total, std::array<int, 256>& lut) {
  int first = -1;
  int occupied = 0;
  for (int i = 0; i < 256; ++i) {
    if (hist[i] > 0.0) {
      ++occupied;
      if (first < 0) first = i;
    }
  }
  if (occupied <= 1) return false;

  double cdf = 0.0;
  double cdf_min = 0.0;
  for (int i = 0; i <= first; ++i) cdf_min += hist[i];
  const double denom = total - cdf_min;
  for (int i = 0; i < 256; ++i) {
    cdf += hist[i];
    double v = (cdf - cdf_min) / denom * 255.0;
    lut[i] = static_cast<int>(std::clamp(std::round(v), 0.0, 255.0));
  }
  return true;
}

}  // namespace

GrayImage hist_equalize(const GrayImage& image) {
  if (image.height <= 0 || image.width <= 0) {
    throw ContractError("hist_equalize: empty image");
  }
  std::array<double, 256> hist{};
  for (std::uint8_t v : image.pixels) hist[v] += 1.0;

  std::array<int, 256> lut{};
  if (!equalize_lut(hist, static_cast<double>(image.pixels.size()), lut)) {
    return image;  // constant image: nothing to equalize
  }
  GrayImage out = image;
  for (auto& v : out.pixels) v = static_cast<std::uint8_t>(lut[v]);
  return out;
}

GrayImage clahe(const GrayImage& image, double clip_limit, int tiles) {
  if (image.height <= 0 || image.width <= 0) throw ContractError("clahe: empty image");
  if (clip_limit <= 0.0) throw ContractError("clahe: clip_limit must be positive");
  if (tiles < 1) throw ContractError("clahe: tile count must be at least 1");
  if (tiles > image.height || tiles > image.width) {
    throw ContractError("clahe: tile grid exceeds image size");
  }

  // Pad bottom/right with edge replication so the grid divides evenly.
  const int ph = (image.height + tiles - 1) / tiles * tiles;
  const int pw = (image.width + tiles - 1) / tiles * tiles;
  GrayImage padded = GrayImage::filled(ph, pw, 0);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, image.height - 1);
    for (int x = 0; x < pw; ++x) {
      padded.at(y, x) = image.at(sy, std::min(x, image.width - 1));
    }
  }

  const int th = ph / tiles;
  const int tw = pw / tiles;
  const double tile_pixels = static_cast<double>(th) * tw;
  const double clip = clip_limit * tile_pixels / 256.0;

  // Per-tile lookup tables.  identity[t] marks constant tiles.
  std::vector<std::array<int, 256>> luts(static_cast<std::size_t>(tiles) * tiles);
  std::vector<char> identity(luts.size(), 0);
  for (int ty = 0; ty < tiles; ++ty) {
    for (int tx = 0; tx < tiles; ++tx) {
      std::array<double, 256> hist{};
      for (int y = ty * th; y < (ty + 1) * th; ++y) {
        for (int x = tx * tw; x < (tx + 1) * tw; ++x) hist[padded.at(y, x)] += 1.0;
      }
      const std::size_t t = static_cast<std::size_t>(ty) * tiles + tx;

      int occupied = 0;
      for (double h : hist) occupied += h > 0.0;
      if (occupied <= 1) {
        identity[t] = 1;  // constant tile: equalizing it would only inject noise
        continue;
      }

      // Clip and spread the excess uniformly (single pass; the re-raised
      // ceiling this causes is deliberate and tiny).
      double excess = 0.0;
      for (double& h : hist) {
        if (h > clip) {
          excess += h - clip;
          h = clip;
        }
      }
      const double share = excess / 256.0;
      for (double& h : hist) h += share;

      if (!equalize_lut(hist, tile_pixels, luts[t])) identity[t] = 1;
    }
  }

  auto lut_value = [&](int ty, int tx, int v) -> double {
    const std::size_t t = static_cast<std::size_t>(ty) * tiles + tx;
    return identity[t] ? static_cast<double>(v) : static_cast<double>(luts[t][v]);
  };

  // Bilinear blend between the four surrounding tile centres.
  GrayImage out = GrayImage::filled(image.height, image.width, 0);
  for (int y = 0; y < image.height; ++y) {
    const double fy = (y + 0.5) / th - 0.5;
    int ty0 = static_cast<int>(std::floor(fy));
    double wy = fy - ty0;
    if (ty0 < 0) { ty0 = 0; wy = 0.0; }
    int ty1 = ty0 + 1;
    if (ty1 > tiles - 1) { ty1 = tiles - 1; ty0 = ty1; wy = 0.0; }

    for (int x = 0; x < image.width; ++x) {
      const double fx = (x + 0.5) / tw - 0.5;
      int tx0 = static_cast<int>(std::floor(fx));
      double wx = fx - tx0;
      if (tx0 < 0) { tx0 = 0; wx = 0.0; }
      int tx1 = tx0 + 1;
      if (tx1 > tiles - 1) { tx1 = tiles - 1; tx0 = tx1; wx = 0.0; }

      const int v = padded.at(y, x);
      const double blended = (1.0 - wy) * (1.0 - wx) * lut_value(ty0, tx0, v) +
                             (1.0 - wy) * wx * lut_value(ty0, tx1, v) +
                             wy * (1.0 - wx) * lut_value(ty1, tx0, v) +
                             wy * wx * lut_value(ty1, tx1, v);
      out.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::round(blended), 0.0, 255.0));
    }
  }
  return out;
}

GrayImageF preprocess_gray(const GrayImage& raw, const PreprocessSpec& spec) {
  spec.validate();
  GrayImage staged;
  switch (spec.histogram_mode) {
    case HistogramMode::none: staged = raw; break;
    case HistogramMode::hist_eq: staged = hist_equalize(raw); break;
    case HistogramMode::clahe: staged = clahe(raw, spec.clahe_clip_limit, spec.clahe_tiles); break;
  }
  return resize_bilinear(to_real(staged), spec.resolution, spec.resolution);
}

Tensor3 finalize_tensor(const GrayImageF& gray, const PreprocessSpec& spec) {
  Tensor3 t = Tensor3::zeros(3, gray.height, gray.width);
  const std::size_t plane = static_cast<std::size_t>(gray.height) * gray.width;
  for (int c = 0; c < 3; ++c) {
    const double mean = spec.norm_mean[c];
    const double inv_std = 1.0 / spec.norm_std[c];
    for (std::size_t i = 0; i < plane; ++i) {
      t.values[c * plane + i] = (gray.pixels[i] - mean) * inv_std;
    }
  }
  return t;
}

Tensor3 preprocess_pipeline(const GrayImage& raw, const PreprocessSpec& spec) {
  return finalize_tensor(preprocess_gray(raw, spec), spec);
}

}  // namespace ctaudit
