#include "vct/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace vct {
namespace {

constexpr std::uint8_t kMagic[4] = {'V', 'C', 'T', '1'};
constexpr std::size_t kMaxRank = 16;

void need(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t n, const char* what) {
  if (pos > bytes.size() || bytes.size() - pos < n) {
    throw FormatError(std::string("truncated tensor data while reading ") + what);
  }
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

template <typename T>
void append_tensor(std::vector<std::uint8_t>& out, const Tensor<T>& t) {
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) put_u64(out, d);
  out.reserve(out.size() + t.size() * sizeof(T));
  for (T v : t.values()) {
    const auto bits = std::bit_cast<Bits<T>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

template <typename T>
Tensor<T> decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  need(bytes, pos, 6, "header");
  if (std::memcmp(bytes.data() + pos, kMagic, 4) != 0) throw FormatError("bad magic, expected VCT1");
  pos += 4;
  const auto dtype = bytes[pos++];
  if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype));
  if (dtype != static_cast<std::uint8_t>(dtype_of<T>())) {
    throw FormatError(std::string("dtype mismatch: file holds ") + (dtype == 0 ? "f32" : "f64") +
                      ", expected " + (sizeof(T) == 4 ? "f32" : "f64"));
  }
  const std::size_t ndim = bytes[pos++];
  if (ndim > kMaxRank) throw FormatError("rank " + std::to_string(ndim) + " exceeds limit");
  Shape dims(ndim);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    const std::uint64_t v = get_u64(bytes, pos);
    if (v != 0 && count > std::numeric_limits<std::uint64_t>::max() / v) {
      throw FormatError("dims overflow");
    }
    count *= v;
    d = static_cast<std::size_t>(v);
  }
  if (count > (bytes.size() - pos) / sizeof(T)) {
    throw FormatError("truncated tensor payload: dims " + shape_string(dims) + " need " +
                      std::to_string(count * sizeof(T)) + " bytes");
  }
  std::vector<T> values(static_cast<std::size_t>(count));
  for (auto& v : values) {
    Bits<T> bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits<T>>(bytes[pos + i]) << (8 * i);
    v = std::bit_cast<T>(bits);
    pos += sizeof(T);
  }
  return Tensor<T>(std::move(dims), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  try {
    auto t = decode_tensor<T>(bytes, pos);
    if (pos != bytes.size()) throw FormatError("trailing bytes after tensor payload");
    return t;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template void append_tensor(std::vector<std::uint8_t>&, const Tensor<float>&);
template void append_tensor(std::vector<std::uint8_t>&, const Tensor<double>&);
template Tensor<float> decode_tensor<float>(std::span<const std::uint8_t>, std::size_t&);
template Tensor<double> decode_tensor<double>(std::span<const std::uint8_t>, std::size_t&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace vct
