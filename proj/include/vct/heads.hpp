#pragma once

#include <cstddef>
#include <string>

#include "vct/nn.hpp"

namespace vct {

template <typename T>
struct Prediction {
  Tensor<T> class_logits;  // [N×(K+1)], column K = no object
  Tensor<T> mask_logits;   // [N×H2W2], row-major over (h, w)
  std::size_t height = 0;  // H2
  std::size_t width = 0;   // W2

  std::size_t num_queries() const { return class_logits.dim(0); }
  std::size_t num_categories() const { return class_logits.dim(1) - 1; }
};

// Class head plus mask head shared by every decoder block. The pixel
// embedding is a 1×1 conv of V2, computed once per frame.
template <typename T>
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(ParameterStore<T>& store, const std::string& name, std::size_t hidden,
                 std::size_t num_categories, std::size_t v2_channels, Rng& rng);

  // V2 [H2×W2×C2] -> [H2W2×C^h].
  Tensor<T> pixel_embedding(const Tensor<T>& v2) const;
  Prediction<T> operator()(const Tensor<T>& queries, const Tensor<T>& pixel_embed, std::size_t height,
                           std::size_t width) const;

  Linear<T> classifier;
  Mlp3<T> mask_mlp;
  Conv2d<T> pixel_proj;
};

}  // namespace vct
