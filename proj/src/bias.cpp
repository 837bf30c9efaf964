#include "ctaudit/bias.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctaudit/common.hpp"

namespace ctaudit {

CompositeImage CompositeImage::create(int height, int width) {
  if (height < 1 || width < 1) throw ContractError("CompositeImage: bad resolution");
  CompositeImage c;
  c.height = height;
  c.width = width;
  c.mean.assign(static_cast<std::size_t>(height) * width, 0.0);
  return c;
}

void CompositeImage::absorb(const GrayImageF& img) {
  if (img.height != height || img.width != width) {
    throw ContractError("CompositeImage::absorb: image is not at the working resolution");
  }
  const double n = static_cast<double>(count);
  const double keep = n / (n + 1.0);
  const double add = 1.0 / (n + 1.0);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    mean[i] = mean[i] * keep + img.pixels[i] * add;
  }
  ++count;
}

CompositeImage CompositeImage::merge(const CompositeImage& a, const CompositeImage& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError("CompositeImage::merge: resolution mismatch");
  }
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  CompositeImage out = CompositeImage::create(a.height, a.width);
  out.count = a.count + b.count;
  const double wa = static_cast<double>(a.count) / static_cast<double>(out.count);
  const double wb = static_cast<double>(b.count) / static_cast<double>(out.count);
  for (std::size_t i = 0; i < out.mean.size(); ++i) {
    out.mean[i] = a.mean[i] * wa + b.mean[i] * wb;
  }
  return out;
}

GrayImage CompositeImage::render() const {
  GrayImageF f;
  f.height = height;
  f.width = width;
  f.pixels = mean;
  return to_bytes(f);
}

std::vector<double> composite_histogram(const CompositeImage& composite) {
  if (composite.count == 0) throw ContractError("composite_histogram: empty composite");
  std::vector<double> hist(256, 0.0);
  for (double v : composite.mean) {
    const int bin = static_cast<int>(std::clamp(std::round(v), 0.0, 255.0));
    hist[bin] += 1.0;
  }
  const double total = static_cast<double>(composite.mean.size());
  for (double& h : hist) h /= total;
  return hist;
}

std::vector<double> class_histogram(const std::vector<GrayImageF>& images) {
  if (images.empty()) throw ContractError("class_histogram: empty image list");
  CompositeImage c = CompositeImage::create(images.front().height, images.front().width);
  for (const GrayImageF& img : images) c.absorb(img);
  return composite_histogram(c);
}

double chi_squared(const std::vector<double>& h1, const std::vector<double>& h2) {
  if (h1.size() != h2.size()) throw ContractError("chi_squared: bin-count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    if (h1[i] < 0.0 || h2[i] < 0.0) throw ContractError("chi_squared: negative bin mass");
    const double denom = h1[i] + h2[i];
    if (denom == 0.0) continue;
    const double diff = h1[i] - h2[i];
    sum += diff * diff / denom;
  }
  return sum;
}

BiasReport diagnose_dataset(const std::string& dataset_name,
                            const std::vector<SampleRecord>& records, int working_resolution) {
  BiasReport report;
  report.dataset = dataset_name;
  report.negative.label = 0;
  report.positive.label = 1;
  report.negative.composite = CompositeImage::create(working_resolution, working_resolution);
  report.positive.composite = CompositeImage::create(working_resolution, working_resolution);

  for (const SampleRecord& r : records) {
    GrayImageF img;
    try {
      img = resize_bilinear(to_real(decode_gray(r.image_path)), working_resolution,
                            working_resolution);
    } catch (const IoError&) {
      ++report.failed_records;
      continue;
    }
    (r.label == 1 ? report.positive : report.negative).composite.absorb(img);
  }

  if (report.negative.composite.count == 0 || report.positive.composite.count == 0) {
    throw ContractError("diagnose_dataset: dataset '" + dataset_name +
                        "' needs at least one readable image per class");
  }
  report.negative.histogram = composite_histogram(report.negative.composite);
  report.positive.histogram = composite_histogram(report.positive.composite);
  report.chi_squared_value = chi_squared(report.negative.histogram, report.positive.histogram);
  return report;
}

void write_bias_report(const BiasReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_png(dir / (report.dataset + "_negative.png"), report.negative.composite.render());
  write_png(dir / (report.dataset + "_positive.png"), report.positive.composite.render());

  nlohmann::json j{{"dataset", report.dataset},
                   {"chi_squared", report.chi_squared_value},
                   {"failed_records", report.failed_records},
                   {"classes",
                    {{{"label", "negative"},
                      {"count", report.negative.composite.count},
                      {"histogram", report.negative.histogram}},
                     {{"label", "positive"},
                      {"count", report.positive.composite.count},
                      {"histogram", report.positive.histogram}}}}};
  const std::filesystem::path path = dir / (report.dataset + ".json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bias report: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ctaudit
