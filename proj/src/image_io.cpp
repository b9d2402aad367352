#include "lfsamba/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "lfsamba/errors.hpp"

namespace lfsamba {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw NotFoundError("cannot open image: " + path.string());
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DecodeError("not a PNG file: " + path.string());
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("libpng initialization failed for " + path.string());
  }
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("cannot decode " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw DecodeError("unsupported channel layout in " + path.string());
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_png: 1 or 3 channels required");
  if (img.pixels.size() != img.width * img.height * img.channels) throw ContractError("write_png: pixel count mismatch");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image: " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed for " + path.string());
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("cannot flush " + path.string());
}

Tensor read_rgb(const std::filesystem::path& path) {
  const Image8 img = read_png(path);
  const std::size_t plane = img.width * img.height;
  std::vector<Real> v(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t px = img.channels == 3 ? img.pixels[i * 3 + c] : img.pixels[i];
      v[c * plane + i] = static_cast<Real>(px) / 255.0;
    }
  return Tensor::from({3, img.height, img.width}, std::move(v));
}

Tensor read_gray_raw(const std::filesystem::path& path) {
  const Image8 img = read_png(path);
  const std::size_t plane = img.width * img.height;
  std::vector<Real> v(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    if (img.channels == 1) {
      v[i] = img.pixels[i];
    } else {
      v[i] = (static_cast<Real>(img.pixels[i * 3]) + img.pixels[i * 3 + 1] + img.pixels[i * 3 + 2]) / 3.0;
    }
  }
  return Tensor::from({img.height, img.width}, std::move(v));
}

Image8 to_image8(const Tensor& values) {
  Image8 img;
  if (values.rank() == 2) {
    img.channels = 1;
    img.height = values.dim(0);
    img.width = values.dim(1);
  } else if (values.rank() == 3 && values.dim(0) == 3) {
    img.channels = 3;
    img.height = values.dim(1);
    img.width = values.dim(2);
  } else {
    throw DimensionError("to_image8: expected [H,W] or [3,H,W], got " + shape_str(values.shape()));
  }
  const std::size_t plane = img.width * img.height;
  img.pixels.resize(plane * img.channels);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) {
      const Real v = std::clamp(values[c * plane + i], 0.0, 1.0);
      img.pixels[i * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

}  // namespace lfsamba
