#pragma once

// Histogram surgery and the image -> network-input pipeline.
//
// hist_equalize and clahe are implemented here (not delegated to OpenCV)
// because their exact arithmetic is part of the experimental surface: the
// cross-dataset comparisons hinge on every variant seeing precisely the same
// transform.  clahe is built so that a single tile with an unbounded clip
// degenerates to hist_equalize, which pins the two implementations together.

#include <array>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "ctaudit/image.hpp"

namespace ctaudit {

enum class HistogramMode { none, hist_eq, clahe };

std::string histogram_mode_name(HistogramMode mode);
HistogramMode parse_histogram_mode(const std::string& name);

// Full preprocessing recipe for one model variant.
struct PreprocessSpec {
  HistogramMode histogram_mode = HistogramMode::none;
  int resolution = 224;
  double clahe_clip_limit = 2.0;
  int clahe_tiles = 8;
  // Channel order is the replicated grayscale triple; defaults are the usual
  // ImageNet statistics on the 0..255 scale.
  std::array<double, 3> norm_mean{123.675, 116.28, 103.53};
  std::array<double, 3> norm_std{58.395, 57.12, 57.375};

  void validate() const;  // throws ContractError
};

void to_json(nlohmann::json& j, const PreprocessSpec& spec);
void from_json(const nlohmann::json& j, PreprocessSpec& spec);

// Global histogram equalization:
//   v -> round((cdf(v) - cdf_min) / (N - cdf_min) * 255)
// with cdf_min the CDF at the lowest occupied bin.  Constant images are
// returned unchanged.
GrayImage hist_equalize(const GrayImage& image);

// Contrast-limited adaptive histogram equalization over a tiles x tiles grid.
//  * The image is edge-padded on the bottom/right to a multiple of the grid.
//  * Each tile builds a 256-bin histogram, clips it at
//    clip_limit * tile_pixels / 256 (a real-valued ceiling) and spreads the
//    clipped excess uniformly over all bins in one pass.
//  * The tile mapping is the hist_equalize formula applied to the clipped
//    histogram; constant tiles map to identity.
//  * Each pixel blends the four surrounding tile mappings bilinearly in tile-
//    centre coordinates (clamped at the borders).
GrayImage clahe(const GrayImage& image, double clip_limit, int tiles);

// Stage 1: histogram mode at native resolution, then bilinear resize to
// resolution x resolution.  Kept separate so augmentation can run on the
// resized grayscale plane before normalization.
GrayImageF preprocess_gray(const GrayImage& raw, const PreprocessSpec& spec);

// Stage 2: replicate to three channels and normalize per channel.
Tensor3 finalize_tensor(const GrayImageF& gray, const PreprocessSpec& spec);

// Stage 1 + stage 2.
Tensor3 preprocess_pipeline(const GrayImage& raw, const PreprocessSpec& spec);

}  // namespace ctaudit
