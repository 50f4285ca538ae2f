#include "vct/encoders.hpp"

#include <cmath>
#include <string>

#include "vct/nn.hpp"
#include "vct/rng.hpp"

namespace vct {
namespace {
// Stream ids under the experiment seed.
constexpr std::uint64_t kVisualStream = 0x5649535541ULL;
constexpr std::uint64_t kSignatureStream = 0x5349474EULL;
constexpr std::uint64_t kAudioNoiseStream = 0x4E4F495345ULL;
}  // namespace

void EncoderConfig::validate() const {
  for (auto c : visual_channels)
    if (c == 0) throw ConfigError("encoder: visual channels must be positive");
  if (audio_channels == 0 || audio_rows == 0) throw ConfigError("encoder: audio dims must be positive");
  if (!(audio_noise_sigma >= 0.0)) throw ConfigError("encoder: audio_noise_sigma must be >= 0");
}

const Tensor<float>& FeatureBundle::level(std::size_t i) const {
  switch (i) {
    case 2: return v2;
    case 3: return v3;
    case 4: return v4;
    case 5: return v5;
    default: throw std::out_of_range("FeatureBundle::level: no level " + std::to_string(i));
  }
}

VisualEncoder::VisualEncoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng(seed).split(kVisualStream);
  std::size_t in = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = cfg.visual_channels[s];
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    weights_[s] = init_uniform<float>({3, 3, in, out}, bound, rng);
    biases_[s] = Tensor<float>::zeros({out});
    in = out;
  }
}

std::array<Tensor<float>, 4> VisualEncoder::encode(const Tensor<float>& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("VisualEncoder: expected H×W×3 image, got " + shape_string(image.dims()));
  }
  if (image.dim(0) % 32 != 0 || image.dim(1) % 32 != 0) {
    throw ConfigError("VisualEncoder: image dims " + shape_string(image.dims()) +
                      " are not divisible by 32");
  }
  NoGradGuard no_grad;
  std::array<Tensor<float>, 4> out;
  Tensor<float> x = avg_pool2(image);
  for (std::size_t s = 0; s < 4; ++s) {
    x = avg_pool2(relu(conv2d(x, weights_[s], biases_[s])));
    out[s] = x;
  }
  return out;
}

std::array<Tensor<float>, 4> VisualEncoder::encode(const Sample& sample) const {
  return encode(Tensor<float>({sample.height, sample.width, 3}, sample.image));
}

AudioEncoder::AudioEncoder(const EncoderConfig& cfg, std::size_t num_categories, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg.validate();
  Rng rng = Rng(seed).split(kSignatureStream);
  const std::size_t C = cfg.audio_channels;
  std::vector<float> sig(num_categories * C);
  for (std::size_t k = 0; k < num_categories; ++k) {
    double norm = 0;
    std::vector<double> v(C);
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < C; ++c) sig[k * C + c] = static_cast<float>(v[c] / norm);
  }
  signatures_ = Tensor<float>({num_categories, C}, std::move(sig));
}

Tensor<float> AudioEncoder::encode(const std::vector<std::uint8_t>& presence,
                                   std::size_t frame_index) const {
  const std::size_t K = signatures_.dim(0), C = cfg_.audio_channels, S = cfg_.audio_rows;
  if (presence.size() != K) {
    throw ShapeError("AudioEncoder: presence has " + std::to_string(presence.size()) +
                     " entries, expected " + std::to_string(K));
  }
  std::vector<float> mix(C, 0.f);
  for (std::size_t k = 0; k < K; ++k)
    if (presence[k])
      for (std::size_t c = 0; c < C; ++c) mix[c] += signatures_[k * C + c];
  std::vector<float> out(S * C);
  Rng rng = Rng(seed_).split(kAudioNoiseStream).split(frame_index);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t c = 0; c < C; ++c) {
      float v = mix[c];
      if (cfg_.audio_noise_sigma > 0.0) v += static_cast<float>(rng.normal(0.0, cfg_.audio_noise_sigma));
      out[s * C + c] = v;
    }
  return Tensor<float>({S, C}, std::move(out));
}

Tensor<float> AudioEncoder::encode(const Sample& sample) const {
  return encode(sample.audio_presence, sample.frame_index);
}

FeatureExtractor::FeatureExtractor(const EncoderConfig& cfg, std::size_t num_categories,
                                   std::uint64_t seed)
    : visual_(cfg, seed), audio_(cfg, num_categories, seed) {}

FeatureBundle FeatureExtractor::operator()(const Sample& sample) const {
  auto v = visual_.encode(sample);
  return FeatureBundle{v[0], v[1], v[2], v[3], audio_.encode(sample)};
}

}  // namespace vct
