#pragma once

// Minimal image types plus codec glue.
//
// OpenCV is used strictly for reading/writing PNG and JPEG bytes; all pixel
// arithmetic that matters downstream (resize, rotation, histogram work) is
// implemented here so its numeric behaviour is pinned by our own tests rather
// than by whichever OpenCV build happens to be installed.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ctaudit {

// 8-bit grayscale image, row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width

  static GrayImage filled(int height, int width, std::uint8_t value);

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Real-valued grayscale plane, values nominally in [0, 255].
struct GrayImageF {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // height * width

  static GrayImageF zeros(int height, int width);

  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// One sample ready for the network: CHW, double precision.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channels * height * width

  static Tensor3 zeros(int channels, int height, int width);

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Decode a PNG/JPEG file to grayscale.  Colour inputs are collapsed by
// averaging the channels.  Throws IoError when the file is missing or the
// codec rejects it.
GrayImage decode_gray(const std::filesystem::path& path);

// Write an 8-bit grayscale PNG.  Throws IoError on failure.
void write_png(const std::filesystem::path& path, const GrayImage& image);

GrayImageF to_real(const GrayImage& image);

// Round-half-away-from-zero then clamp to [0, 255].
GrayImage to_bytes(const GrayImageF& image);

// Bilinear resample with half-pixel centre alignment:
//   src = (dst + 0.5) * (in / out) - 0.5, edge-clamped.
GrayImageF resize_bilinear(const GrayImageF& image, int out_height, int out_width);

// Rotate by `radians` about the image centre into an expanded canvas that
// contains the whole rotated frame; pixels with no source map to `fill`.
// Inverse-mapped bilinear sampling.
GrayImageF rotate_expand(const GrayImageF& image, double radians, double fill);

GrayImageF hflip(const GrayImageF& image);

}  // namespace ctaudit
