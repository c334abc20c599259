#include "lapact/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include <png.h>

#include "lapact/error.hpp"

namespace lapact {

Image read_png(const std::filesystem::path &path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("frame_store", "cannot read frame " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("frame_store", "cannot decode frame " + path.string() + ": " + msg);
  }
  Image image(static_cast<int>(png.height), static_cast<int>(png.width));
  std::transform(buffer.begin(), buffer.end(), image.data.begin(),
                 [](std::uint8_t v) { return v / 255.0; });
  return image;
}

void write_png(const std::filesystem::path &path, const Image &image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(image.data.size());
  std::transform(image.data.begin(), image.data.end(), buffer.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("frame_store", "cannot write frame " + path.string() + ": " + png.message);
}

} // namespace lapact
