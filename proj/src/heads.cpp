#include "vct/heads.hpp"

namespace vct {

template <typename T>
PredictionHead<T>::PredictionHead(ParameterStore<T>& store, const std::string& name, std::size_t hidden,
                                  std::size_t num_categories, std::size_t v2_channels, Rng& rng)
    : classifier(store, name + ".class", hidden, num_categories + 1, rng),
      mask_mlp(store, name + ".mask_mlp", hidden, hidden, hidden, rng),
      pixel_proj(store, name + ".pixel_proj", 1, v2_channels, hidden, rng) {}

template <typename T>
Tensor<T> PredictionHead<T>::pixel_embedding(const Tensor<T>& v2) const {
  const auto e = pixel_proj(v2);
  return reshape(e, {e.dim(0) * e.dim(1), e.dim(2)});
}

template <typename T>
Prediction<T> PredictionHead<T>::operator()(const Tensor<T>& queries, const Tensor<T>& pixel_embed,
                                            std::size_t height, std::size_t width) const {
  if (pixel_embed.rank() != 2 || pixel_embed.dim(0) != height * width) {
    throw ShapeError("PredictionHead: pixel embedding " + shape_string(pixel_embed.dims()) +
                     " does not cover a " + std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  Prediction<T> p;
  p.class_logits = classifier(queries);
  p.mask_logits = matmul_nt(mask_mlp(queries), pixel_embed);
  p.height = height;
  p.width = width;
  return p;
}

template struct Prediction<float>;
template struct Prediction<double>;
template class PredictionHead<float>;
template class PredictionHead<double>;

}  // namespace vct
