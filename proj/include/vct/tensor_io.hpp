#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vct/tensor.hpp"

namespace vct {

// Raised for malformed or inconsistent on-disk data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// VCT1 container layout (all integers little-endian):
//   "VCT1" | u8 dtype (0 = f32, 1 = f64) | u8 ndim | ndim × u64 dims | payload
// The payload is the row-major values in the stated dtype.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::f32; }
template <> constexpr DType dtype_of<double>() { return DType::f64; }

template <typename T>
void append_tensor(std::vector<std::uint8_t>& out, const Tensor<T>& t);

// Decodes one tensor starting at `pos` and advances `pos` past it.
template <typename T>
Tensor<T> decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& pos);

template <typename T>
std::vector<std::uint8_t> encode_tensor(const Tensor<T>& t) {
  std::vector<std::uint8_t> out;
  append_tensor(out, t);
  return out;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

// Whole-file decode; trailing bytes are an error.
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Little-endian primitives shared by the container formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos);
std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t& pos);

}  // namespace vct
