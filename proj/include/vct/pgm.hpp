#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vct {

// 8-bit greyscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const GrayImage&) const = default;
};

// Binary PGM ("P5 <w> <h> 255\n" + raw bytes).
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
// Accepts comments and arbitrary whitespace in the header; maxval must be
// 1..255. Malformed input raises FormatError.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

// round(255 · σ(x)) per logit.
GrayImage logits_to_gray(std::span<const float> logits, std::size_t height, std::size_t width);

}  // namespace vct
