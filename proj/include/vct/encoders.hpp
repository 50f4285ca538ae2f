#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "vct/scene.hpp"
#include "vct/tensor.hpp"

namespace vct {

struct EncoderConfig {
  std::array<std::size_t, 4> visual_channels{32, 64, 128, 256};  // C2..C5
  std::size_t audio_channels = 32;                               // C^a
  std::size_t audio_rows = 8;                                    // S
  double audio_noise_sigma = 0.05;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Frozen multi-scale features of one frame plus its audio feature.
struct FeatureBundle {
  Tensor<float> v2;     // H/4 × W/4 × C2
  Tensor<float> v3;     // H/8 × W/8 × C3
  Tensor<float> v4;     // H/16 × W/16 × C4
  Tensor<float> v5;     // H/32 × W/32 × C5
  Tensor<float> audio;  // S × C^a

  const Tensor<float>& level(std::size_t i) const;  // i ∈ {2, 3, 4, 5}
};

// Stand-in for a pretrained backbone: a 2×2 average-pool stem followed by
// four stages of 3×3 conv + ReLU + 2×2 average pool. Weights are drawn once
// from the experiment seed and never trained; biases are zero.
class VisualEncoder {
 public:
  VisualEncoder(const EncoderConfig& cfg, std::uint64_t seed);

  // image: H×W×3 with H, W multiples of 32.
  std::array<Tensor<float>, 4> encode(const Tensor<float>& image) const;
  std::array<Tensor<float>, 4> encode(const Sample& sample) const;

 private:
  std::array<Tensor<float>, 4> weights_;
  std::array<Tensor<float>, 4> biases_;
};

// Stand-in for the audio backbone: the feature of a frame is the sum of the
// unit-norm signatures of every category in M*, broadcast over S rows, plus
// Gaussian noise drawn from (seed, frame index).
class AudioEncoder {
 public:
  AudioEncoder(const EncoderConfig& cfg, std::size_t num_categories, std::uint64_t seed);

  Tensor<float> encode(const Sample& sample) const;
  Tensor<float> encode(const std::vector<std::uint8_t>& presence, std::size_t frame_index) const;
  const Tensor<float>& signatures() const { return signatures_; }  // K × C^a

 private:
  EncoderConfig cfg_;
  std::uint64_t seed_;
  Tensor<float> signatures_;
};

class FeatureExtractor {
 public:
  FeatureExtractor(const EncoderConfig& cfg, std::size_t num_categories, std::uint64_t seed);
  FeatureBundle operator()(const Sample& sample) const;

 private:
  VisualEncoder visual_;
  AudioEncoder audio_;
};

}  // namespace vct
