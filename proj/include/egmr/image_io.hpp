#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "egmr/tensor.hpp"

namespace egmr {

/// Writes a 3 x H x W (or 1 x H x W) image in [0, 1] as 8-bit RGB PNG.
/// Values are clamped and rounded.
inline void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) {
    throw ShapeError("write_png expects 1 or 3 channels, got " + shape_str(img.shape()));
  }
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path);
  }
  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) {
        const float v = img.at(c == 3 ? k : 0, y, x);
        const float q = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        rows[(static_cast<std::size_t>(y) * w + x) * 3 + k] = static_cast<png_byte>(q);
      }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any 8-bit PNG into a 3 x H x W float image in [0, 1].
inline Tensor<float> read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Tensor<float> out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) out.at(k, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + k] / 255.0f;
  return out;
}

}  // namespace egmr
