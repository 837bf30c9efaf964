#pragma once

// Dataset-bias diagnostics: per-class average composite images, 256-bin
// intensity histograms of those composites, and the symmetric chi-squared
// divergence between classes.  A large inter-class divergence on data whose
// pathology should not move global intensity statistics is the tell for a
// provenance confounder.

#include <filesystem>
#include <string>
#include <vector>

#include "ctaudit/dataset.hpp"
#include "ctaudit/image.hpp"

namespace ctaudit {

// Running arithmetic mean of absorbed images at a fixed working resolution.
struct CompositeImage {
  int height = 0;
  int width = 0;
  long count = 0;
  std::vector<double> mean;  // height * width, float64 accumulation

  static CompositeImage create(int height, int width);

  // c' = c * (n/(n+1)) + img * (1/(n+1)).  The image must already be at the
  // working resolution.
  void absorb(const GrayImageF& img);

  // Count-weighted combination; exact for means and associative, so shards
  // may be accumulated independently and merged.
  static CompositeImage merge(const CompositeImage& a, const CompositeImage& b);

  GrayImage render() const;  // rounded to 8-bit for PNG output
};

// Normalized 256-bin histogram of the composite's rounded pixel values.
std::vector<double> composite_histogram(const CompositeImage& composite);

// Composite-then-histogram over a nonempty image list (all images at one
// resolution).
std::vector<double> class_histogram(const std::vector<GrayImageF>& images);

// Symmetric form: sum over bins of (h1-h2)^2 / (h1+h2), skipping bins where
// both are zero.  Requires equal bin counts.
double chi_squared(const std::vector<double>& h1, const std::vector<double>& h2);

struct ClassDiagnostics {
  int label = 0;
  CompositeImage composite;
  std::vector<double> histogram;
};

struct BiasReport {
  std::string dataset;
  ClassDiagnostics negative;  // label 0
  ClassDiagnostics positive;  // label 1
  double chi_squared_value = 0.0;
  long failed_records = 0;  // unreadable images, skipped
};

// Build composites and histograms for both classes of a dataset.  Both
// classes must contribute at least one readable image.
BiasReport diagnose_dataset(const std::string& dataset_name,
                            const std::vector<SampleRecord>& records,
                            int working_resolution = 256);

// dir/<dataset>.json plus dir/<dataset>_negative.png and _positive.png.
void write_bias_report(const BiasReport& report, const std::filesystem::path& dir);

}  // namespace ctaudit
