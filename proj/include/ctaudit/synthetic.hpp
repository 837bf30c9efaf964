#pragma once

// Synthetic CT-slice stand-ins, small enough to train against in a test run.
//
// Each image is a noisy "body" field containing two darker elliptical lung
// fields.  Positives add bright blobs inside the lungs; the confounded
// variant additionally brightens a corner patch of positives only, planting a
// shortcut that has nothing to do with the lesions.  Strata mode sizes the
// blob area to a chosen involvement band and labels records accordingly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ctaudit/dataset.hpp"
#include "ctaudit/image.hpp"

namespace ctaudit {

struct LesionSpec {
  int count_min = 2;
  int count_max = 8;
  double radius_min = 2.0;
  double radius_max = 8.0;
  double intensity_delta = 60.0;  // added on top of the lung base level
};

struct ConfounderSpec {
  double delta = 60.0;  // corner brightness added to positives only
  int patch = 12;       // top-left square side, pixels
};

struct SynthSpec {
  std::string name = "synthetic";
  int n_per_class = 200;
  int resolution = 64;
  double noise_sigma = 15.0;
  LesionSpec lesion;
  std::optional<ConfounderSpec> confounder;
  bool strata_mode = false;  // positives sized per involvement band, stratum column emitted
  std::uint64_t seed = 0;

  void validate() const;
};

// Render all images under out_dir, write "<name>.csv" beside them, and return
// the descriptor (paths resolved).  Fully deterministic given the seed; each
// image draws from its own derived stream.
DatasetDescriptor generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Intensity plateaus of the clean (pre-noise) layers; exposed together with
// the geometry hooks below so pixel-statistics probes and area oracles can
// work from rendered images alone.
inline constexpr double kBodyBase = 150.0;
inline constexpr double kLungBase = 70.0;

bool inside_lungs(int resolution, int y, int x);
double lung_mean(const GrayImage& img);  // mean intensity over the lung fields
double corner_mean(const GrayImage& img, int patch);

// Involvement band for a blob-area fraction (0 -> CT-0, then 25% steps).
Stratum stratum_for_fraction(double fraction);

}  // namespace ctaudit
