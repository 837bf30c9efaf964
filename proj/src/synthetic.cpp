#include "ctaudit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ctaudit/common.hpp"

namespace ctaudit {

void SynthSpec::validate() const {
  if (name.empty()) throw ContractError("synthetic: name must not be empty");
  if (n_per_class < 1) throw ContractError("synthetic: n_per_class must be positive");
  if (resolution < 32) throw ContractError("synthetic: resolution must be at least 32");
  if (!(noise_sigma >= 0.0)) throw ContractError("synthetic: noise_sigma must be nonnegative");
  if (lesion.count_min < 1 || lesion.count_max < lesion.count_min) {
    throw ContractError("synthetic: bad lesion count range");
  }
  if (!(lesion.radius_min > 0.0) || lesion.radius_max < lesion.radius_min) {
    throw ContractError("synthetic: bad lesion radius range");
  }
  if (!(lesion.intensity_delta > noise_sigma)) {
    throw ContractError("synthetic: lesion delta must exceed the noise level");
  }
  if (confounder && confounder->delta < lesion.intensity_delta) {
    throw ContractError("synthetic: confounder delta must dominate the lesion delta");
  }
  if (confounder && (confounder->patch < 1 || confounder->patch > resolution)) {
    throw ContractError("synthetic: confounder patch does not fit the image");
  }
}

namespace {

// Two lung ellipses: centres at (0.5 +- 0.22) * W horizontally, mid-height,
// semi-axes 0.18 * W by 0.32 * H.
struct LungGeometry {
  double cy, cx_left, cx_right, rx, ry;

  explicit LungGeometry(int resolution)
      : cy(0.5 * resolution),
        cx_left(0.28 * resolution),
        cx_right(0.72 * resolution),
        rx(0.18 * resolution),
        ry(0.32 * resolution) {}

  bool contains(double y, double x) const {
    auto in = [&](double cx) {
      const double dx = (x - cx) / rx;
      const double dy = (y - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    };
    return in(cx_left) || in(cx_right);
  }
};

struct CleanLayers {
  GrayImageF base;        // body/lung plateaus
  std::vector<char> lung;  // lung-field mask
  std::vector<char> blob;  // lesion mask (subset of lung)
};

CleanLayers make_clean_base(int resolution) {
  CleanLayers layers;
  layers.base = GrayImageF::zeros(resolution, resolution);
  layers.lung.assign(static_cast<std::size_t>(resolution) * resolution, 0);
  layers.blob.assign(layers.lung.size(), 0);
  const LungGeometry geo(resolution);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const bool in_lung = geo.contains(y + 0.5, x + 0.5);
      layers.base.at(y, x) = in_lung ? kLungBase : kBodyBase;
      layers.lung[static_cast<std::size_t>(y) * resolution + x] = in_lung;
    }
  }
  return layers;
}

// Stamp a disk-shaped blob; only lung pixels light up, and overlaps do not
// stack (the lesion plateau is uniform).
void stamp_blob(CleanLayers& layers, double cy, double cx, double radius) {
  const int res = layers.base.height;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(res - 1, static_cast<int>(std::ceil(cy + radius)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(res - 1, static_cast<int>(std::ceil(cx + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y + 0.5 - cy;
      const double dx = x + 0.5 - cx;
      if (dy * dy + dx * dx > radius * radius) continue;
      const std::size_t i = static_cast<std::size_t>(y) * res + x;
      if (layers.lung[i]) layers.blob[i] = 1;
    }
  }
}

// Uniform point inside one of the lungs (rejection sampling on the bounding box).
void random_lung_point(const LungGeometry& geo, int resolution, Rng& rng, double& y, double& x) {
  for (;;) {
    y = rng.uniform(0.0, resolution);
    x = rng.uniform(0.0, resolution);
    if (geo.contains(y, x)) return;
  }
}

std::size_t count_set(const std::vector<char>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

// Ordinary positive: a handful of random blobs.
void add_random_blobs(CleanLayers& layers, const LesionSpec& lesion, Rng& rng) {
  const int res = layers.base.height;
  const LungGeometry geo(res);
  const int count = lesion.count_min +
                    static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(lesion.count_max - lesion.count_min + 1)));
  for (int b = 0; b < count; ++b) {
    double y, x;
    random_lung_point(geo, res, rng, y, x);
    stamp_blob(layers, y, x, rng.uniform(lesion.radius_min, lesion.radius_max));
  }
}

// Strata positive: grow one blob per lung until the measured blob-area
// fraction reaches the target; deterministic given the stream.
void add_banded_blobs(CleanLayers& layers, double target_fraction, Rng& rng) {
  const int res = layers.base.height;
  const LungGeometry geo(res);
  const std::size_t lung_pixels = count_set(layers.lung);
  const std::size_t target =
      static_cast<std::size_t>(std::ceil(target_fraction * static_cast<double>(lung_pixels)));

  double ly, lx, ry_, rx_;
  random_lung_point(geo, res, rng, ly, lx);
  random_lung_point(geo, res, rng, ry_, rx_);

  double radius = 1.0;
  while (count_set(layers.blob) < target && radius < 2.0 * res) {
    stamp_blob(layers, ly, lx, radius);
    stamp_blob(layers, ry_, rx_, radius);
    radius += 0.5;
  }
}

GrayImage render(const CleanLayers& layers, const SynthSpec& spec, bool positive, Rng& rng) {
  const int res = spec.resolution;
  GrayImageF img = layers.base;
  for (std::size_t i = 0; i < layers.blob.size(); ++i) {
    if (layers.blob[i]) img.pixels[i] += spec.lesion.intensity_delta;
  }
  if (positive && spec.confounder) {
    for (int y = 0; y < spec.confounder->patch; ++y) {
      for (int x = 0; x < spec.confounder->patch; ++x) {
        img.at(y, x) += spec.confounder->delta;
      }
    }
  }
  for (double& v : img.pixels) v += rng.normal() * spec.noise_sigma;
  return to_bytes(img);
}

// Band targets keep a margin inside each 25% band so pixelation cannot push
// the measured fraction over a boundary.
void band_range(Stratum s, double& lo, double& hi) {
  switch (s) {
    case Stratum::ct1: lo = 0.04; hi = 0.21; return;
    case Stratum::ct2: lo = 0.29; hi = 0.46; return;
    case Stratum::ct3: lo = 0.54; hi = 0.71; return;
    case Stratum::ct4: lo = 0.79; hi = 0.96; return;
    case Stratum::ct0: break;
  }
  throw ContractError("band_range: CT-0 has no blob band");
}

}  // namespace

bool inside_lungs(int resolution, int y, int x) {
  return LungGeometry(resolution).contains(y + 0.5, x + 0.5);
}

double lung_mean(const GrayImage& img) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (inside_lungs(img.height, y, x)) {
        sum += img.at(y, x);
        ++n;
      }
    }
  }
  if (n == 0) throw ContractError("lung_mean: no lung pixels at this resolution");
  return sum / static_cast<double>(n);
}

double corner_mean(const GrayImage& img, int patch) {
  if (patch < 1 || patch > img.height || patch > img.width) {
    throw ContractError("corner_mean: patch does not fit the image");
  }
  double sum = 0.0;
  for (int y = 0; y < patch; ++y) {
    for (int x = 0; x < patch; ++x) sum += img.at(y, x);
  }
  return sum / (static_cast<double>(patch) * patch);
}

Stratum stratum_for_fraction(double fraction) {
  if (fraction <= 0.0) return Stratum::ct0;
  if (fraction <= 0.25) return Stratum::ct1;
  if (fraction <= 0.50) return Stratum::ct2;
  if (fraction <= 0.75) return Stratum::ct3;
  return Stratum::ct4;
}

DatasetDescriptor generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);

  DatasetDescriptor d;
  d.name = spec.name;

  std::ofstream manifest(out_dir / (spec.name + ".csv"));
  if (!manifest) {
    throw IoError("cannot write manifest: " + (out_dir / (spec.name + ".csv")).string());
  }
  manifest << (spec.strata_mode ? "image_path,label,patient_id,stratum\n"
                                : "image_path,label,patient_id\n");

  std::size_t image_index = 0;
  auto emit = [&](const GrayImage& img, int label, std::optional<Stratum> stratum) {
    const std::string filename = spec.name + "_" + (label == 1 ? "pos" : "neg") + "_" +
                                 std::to_string(image_index) + ".png";
    write_png(out_dir / filename, img);

    SampleRecord r;
    r.image_path = out_dir / filename;
    r.label = label;
    r.patient_id = spec.name + "-p" + std::to_string(image_index);
    r.stratum = stratum;
    d.records.push_back(r);

    manifest << filename << ',' << label << ',' << r.patient_id;
    if (spec.strata_mode) manifest << ',' << (stratum ? format_stratum(*stratum) : "");
    manifest << '\n';
    ++image_index;
  };

  // Negatives: lungs only (CT-0 in strata mode).
  for (int i = 0; i < spec.n_per_class; ++i) {
    Rng rng(mix_seed(spec.seed, image_index));
    CleanLayers layers = make_clean_base(spec.resolution);
    emit(render(layers, spec, false, rng), 0,
         spec.strata_mode ? std::optional<Stratum>(Stratum::ct0) : std::nullopt);
  }

  // Positives: random blobs, or band-sized blobs cycling CT-1..CT-4.
  for (int i = 0; i < spec.n_per_class; ++i) {
    Rng rng(mix_seed(spec.seed, image_index));
    CleanLayers layers = make_clean_base(spec.resolution);
    std::optional<Stratum> stratum;
    if (spec.strata_mode) {
      const Stratum intended = static_cast<Stratum>(1 + i % 4);
      double lo, hi;
      band_range(intended, lo, hi);
      add_banded_blobs(layers, rng.uniform(lo, hi), rng);
      const double fraction = static_cast<double>(count_set(layers.blob)) /
                              static_cast<double>(count_set(layers.lung));
      stratum = stratum_for_fraction(fraction);  // label by measured area
    } else {
      add_random_blobs(layers, spec.lesion, rng);
    }
    emit(render(layers, spec, true, rng), 1, stratum);
  }

  manifest.flush();
  if (!manifest) throw IoError("manifest write failed for corpus " + spec.name);
  return d;
}

}  // namespace ctaudit
