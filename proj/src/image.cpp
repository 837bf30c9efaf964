#include "ctaudit/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "ctaudit/common.hpp"

namespace ctaudit {

GrayImage GrayImage::filled(int height, int width, std::uint8_t value) {
  GrayImage img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width, value);
  return img;
}

GrayImageF GrayImageF::zeros(int height, int width) {
  GrayImageF img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width, 0.0);
  return img;
}

Tensor3 Tensor3::zeros(int channels, int height, int width) {
  Tensor3 t;
  t.channels = channels;
  t.height = height;
  t.width = width;
  t.values.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
  return t;
}

GrayImage decode_gray(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("image file does not exist: " + path.string());
  }
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw IoError("failed to decode image: " + path.string());
  }
  if (raw.depth() != CV_8U) {
    // 16-bit medical exports show up occasionally; scale down rather than reject.
    cv::Mat tmp;
    double scale = raw.depth() == CV_16U ? 255.0 / 65535.0 : 1.0;
    raw.convertTo(tmp, CV_8U, scale);
    raw = tmp;
  }

  GrayImage out;
  out.height = raw.rows;
  out.width = raw.cols;
  out.pixels.resize(static_cast<std::size_t>(raw.rows) * raw.cols);

  const int ch = raw.channels();
  for (int y = 0; y < raw.rows; ++y) {
    const std::uint8_t* row = raw.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) {
      if (ch == 1) {
        out.at(y, x) = row[x];
      } else {
        // Collapse colour by averaging channels (alpha, if present, is ignored).
        int n = std::min(ch, 3);
        int sum = 0;
        for (int c = 0; c < n; ++c) sum += row[x * ch + c];
        out.at(y, x) = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  cv::Mat m(image.height, image.width, CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) row[x] = image.at(y, x);
  }
  if (!cv::imwrite(path.string(), m)) {
    throw IoError("failed to write PNG: " + path.string());
  }
}

GrayImageF to_real(const GrayImage& image) {
  GrayImageF out;
  out.height = image.height;
  out.width = image.width;
  out.pixels.assign(image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage to_bytes(const GrayImageF& image) {
  GrayImage out;
  out.height = image.height;
  out.width = image.width;
  out.pixels.resize(image.pixels.size());
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    double v = std::round(image.pixels[i]);
    v = std::clamp(v, 0.0, 255.0);
    out.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

namespace {

// Edge-clamped bilinear read at real-valued coordinates.
double sample_bilinear(const GrayImageF& img, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double wy = y - y0;
  const double wx = x - x0;
  auto clamped = [&img](int yy, int xx) {
    yy = std::clamp(yy, 0, img.height - 1);
    xx = std::clamp(xx, 0, img.width - 1);
    return img.at(yy, xx);
  };
  const double a = clamped(y0, x0);
  const double b = clamped(y0, x0 + 1);
  const double c = clamped(y0 + 1, x0);
  const double d = clamped(y0 + 1, x0 + 1);
  return (1.0 - wy) * (1.0 - wx) * a + (1.0 - wy) * wx * b + wy * (1.0 - wx) * c + wy * wx * d;
}

}  // namespace

GrayImageF resize_bilinear(const GrayImageF& image, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) {
    throw ContractError("resize_bilinear: output size must be positive");
  }
  if (image.height <= 0 || image.width <= 0) {
    throw ContractError("resize_bilinear: empty input image");
  }
  GrayImageF out = GrayImageF::zeros(out_height, out_width);
  const double sy = static_cast<double>(image.height) / out_height;
  const double sx = static_cast<double>(image.width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_width; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      out.at(y, x) = sample_bilinear(image, src_y, src_x);
    }
  }
  return out;
}

GrayImageF rotate_expand(const GrayImageF& image, double radians, double fill) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  const double ac = std::abs(c);
  const double as = std::abs(s);
  const int out_w = static_cast<int>(std::ceil(image.width * ac + image.height * as));
  const int out_h = static_cast<int>(std::ceil(image.width * as + image.height * ac));

  GrayImageF out = GrayImageF::zeros(out_h, out_w);
  const double icy = (image.height - 1) * 0.5;
  const double icx = (image.width - 1) * 0.5;
  const double ocy = (out_h - 1) * 0.5;
  const double ocx = (out_w - 1) * 0.5;

  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      // Inverse map: rotate the output coordinate back by -radians.
      const double dy = y - ocy;
      const double dx = x - ocx;
      const double src_x = c * dx + s * dy + icx;
      const double src_y = -s * dx + c * dy + icy;
      if (src_y < -0.5 || src_y > image.height - 0.5 || src_x < -0.5 || src_x > image.width - 0.5) {
        out.at(y, x) = fill;
      } else {
        out.at(y, x) = sample_bilinear(image, src_y, src_x);
      }
    }
  }
  return out;
}

GrayImageF hflip(const GrayImageF& image) {
  GrayImageF out = GrayImageF::zeros(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      out.at(y, x) = image.at(y, image.width - 1 - x);
    }
  }
  return out;
}

}  // namespace ctaudit
