#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vct/config.hpp"
#include "vct/encoders.hpp"
#include "vct/heads.hpp"
#include "vct/nn.hpp"
#include "vct/trace.hpp"

namespace vct {

// Encoder outputs in the working precision of the model.
template <typename T>
struct FeatureSet {
  Tensor<T> v2, v3, v4, v5, audio;

  const Tensor<T>& level(std::size_t i) const;  // i ∈ {2, 3, 4, 5}
};

template <typename T>
FeatureSet<T> to_features(const FeatureBundle& b);

enum class BlockKind { audio, v5, v4, v3 };

const char* to_string(BlockKind k);

// {audio, V5, V4, V3} repeated `repeats` times, then one trailing audio block.
std::vector<BlockKind> block_schedule(std::size_t repeats);

// Resizes sigmoid(mask_logits) of every query from h×w to th×tw with
// half-pixel bilinear sampling and keeps positions >= 0.5. A query with no
// allowed position gets a fully allowed row.
template <typename T>
AttentionMask compute_attention_mask(std::span<const T> mask_logits, std::size_t queries, std::size_t h,
                                     std::size_t w, std::size_t th, std::size_t tw);

// Fixed 2-D sine encoding [h·w × width]: the first half encodes the row, the
// second half the column, each as interleaved sin/cos over normalised
// coordinates scaled to 2π.
template <typename T>
Tensor<T> sine_position_encoding(std::size_t h, std::size_t w, std::size_t width);

// Cross-attention -> self-attention -> FFN, each with residual and post-norm.
template <typename T>
struct DecoderBlock {
  MultiHeadAttention<T> cross, self;
  LayerNorm<T> norm_cross, norm_self, norm_ffn;
  FeedForward<T> ffn;

  DecoderBlock() = default;
  DecoderBlock(ParameterStore<T>& store, const std::string& name, std::size_t width, std::size_t heads,
               std::size_t ffn_dim, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& key, const Tensor<T>& value,
                       const AttentionMask* mask = nullptr,
                       std::vector<Tensor<T>>* cross_weights = nullptr) const;
};

struct DecoderOptions {
  std::size_t hidden_dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t repeats = 2;  // D
  std::size_t audio_channels = 32;
  std::array<std::size_t, 3> level_channels{64, 128, 256};  // C3, C4, C5
};

DecoderOptions decoder_options(const ExperimentConfig& cfg);

template <typename T>
class AvDecoder {
 public:
  AvDecoder() = default;
  AvDecoder(ParameterStore<T>& store, const std::string& name, const DecoderOptions& opt, Rng& rng);

  const std::vector<BlockKind>& schedule() const { return schedule_; }
  const std::vector<DecoderBlock<T>>& blocks() const { return blocks_; }

  // Runs every block and returns the prediction for the initial queries
  // followed by one prediction per block (4D + 2 in total).
  std::vector<Prediction<T>> forward(const Tensor<T>& queries, const FeatureSet<T>& features,
                                     const PredictionHead<T>& head, DiscreteTrace* trace = nullptr) const;

 private:
  DecoderOptions opt_;
  std::vector<BlockKind> schedule_;
  std::vector<DecoderBlock<T>> blocks_;
  Linear<T> audio_proj_;
  std::array<Linear<T>, 3> level_proj_;  // indexed V3, V4, V5
  Tensor<T> level_embed_;                // [3×C^h]
};

}  // namespace vct
