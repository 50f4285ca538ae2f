#include "vct/pgm.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "vct/tensor_io.hpp"

namespace vct {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw FormatError("pgm: expected a number in the header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (std::size_t{1} << 31)) throw FormatError("pgm: header value too large");
    }
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw FormatError("pgm: pixel count mismatch");
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm: not a binary PGM (P5)");
  HeaderReader r(bytes.subspan(2));
  GrayImage img;
  img.width = r.number();
  img.height = r.number();
  const std::size_t maxval = r.number();
  if (maxval == 0 || maxval > 255) throw FormatError("pgm: only 8-bit maxval is supported");
  std::size_t pos = 2 + r.pos();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pgm: missing separator after header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n) {
    throw FormatError("pgm: expected " + std::to_string(n) + " pixel bytes, found " + std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + pos, bytes.end());
  for (auto p : img.pixels)
    if (p > maxval) throw FormatError("pgm: pixel exceeds maxval");
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) { write_file(path, encode_pgm(img)); }

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

GrayImage logits_to_gray(std::span<const float> logits, std::size_t height, std::size_t width) {
  if (logits.size() != height * width) throw FormatError("pgm: logit count mismatch");
  GrayImage img{width, height, std::vector<std::uint8_t>(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * s));
  }
  return img;
}

}  // namespace vct
