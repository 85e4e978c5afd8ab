#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dsurf {

/// RGB floats in [0,1] (H·W·3, row-major) → 8-bit PNG. Values are clamped and rounded.
void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   std::span<const float> rgb);
/// Single-channel 8-bit PNG.
void write_png_gray(const std::filesystem::path& path, int height, int width,
                    std::span<const std::uint8_t> gray);

/// 8-bit PNG → RGB floats (value/255). Gray images are expanded to 3 channels.
std::vector<float> read_png_rgb(const std::filesystem::path& path, int& height, int& width);
std::vector<std::uint8_t> read_png_gray(const std::filesystem::path& path, int& height,
                                        int& width);

/// Raw float map: u32 height, u32 width, then float32 row-major (little-endian).
void write_float_map(const std::filesystem::path& path, int height, int width,
                     std::span<const float> values);
std::vector<float> read_float_map(const std::filesystem::path& path, int& height, int& width);

inline std::uint8_t to_byte(float v) {
  const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<std::uint8_t>(c * 255.f + 0.5f);
}

}  // namespace dsurf
