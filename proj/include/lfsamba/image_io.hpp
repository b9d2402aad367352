#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes any 8/16-bit PNG, expanded to gray (1) or RGB (3); alpha is dropped.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// RGB PNG → [3,H,W] in [0,1].
Tensor read_rgb(const std::filesystem::path& path);
/// Gray PNG (RGB is averaged) → [H,W] with raw 0..255 values.
Tensor read_gray_raw(const std::filesystem::path& path);

/// [3,H,W] or [H,W] in [0,1] → 8-bit with rounding and clamping.
Image8 to_image8(const Tensor& values);

}  // namespace lfsamba
