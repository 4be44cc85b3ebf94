#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lumia::bias {

/// Row-major 8-bit grayscale image.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

GrayImage make_image(std::size_t width, std::size_t height, std::uint8_t fill = 0);

/// Binary PGM (P5, maxval <= 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Area-average downscale onto an out_w x out_h grid of integer-bounded
/// blocks. Output dims must not exceed the input dims.
std::vector<double> block_mean(const GrayImage& image, std::size_t out_w, std::size_t out_h);
GrayImage resize_block_mean(const GrayImage& image, std::size_t out_w, std::size_t out_h);

}  // namespace lumia::bias
