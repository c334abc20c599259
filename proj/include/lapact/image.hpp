#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace lapact {

// RGB frame with channel values normalized to [0,1], stored row-major HWC.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static constexpr int channels = 3;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * channels, fill) {}

  double &at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image &) const = default;
};

// 8-bit PNG I/O. Reading normalizes to [0,1]; writing rounds v*255 after
// clamping. Both throw IoError.
Image read_png(const std::filesystem::path &path);
void write_png(const std::filesystem::path &path, const Image &image);

} // namespace lapact
