#include "vct/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vct {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, value);
  return value;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParameterStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ParameterStore<T>::with_prefix(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& e : entries_)
    if (e.first.rfind(prefix, 0) == 0) out.push_back(e);
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

template <typename T>
Tensor<T> init_uniform(const Shape& dims, double bound, Rng& rng) {
  std::vector<T> v(shape_size(dims));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(dims, std::move(v));
}

template <typename T>
Tensor<T> init_normal(const Shape& dims, double stddev, Rng& rng) {
  std::vector<T> v(shape_size(dims));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(dims, std::move(v));
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  Rng& rng, bool with_bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  weight = store.add(name + ".weight", init_uniform<T>({in, out}, bound, rng));
  if (with_bias) bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  auto y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t width) {
  gamma = store.add(name + ".gamma", Tensor<T>::full({width}, T(1)));
  beta = store.add(name + ".beta", Tensor<T>::zeros({width}));
}

template <typename T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t kernel,
                  std::size_t in, std::size_t out, Rng& rng) {
  if (kernel != 1 && kernel != 3) throw ConfigError("Conv2d: kernel must be 1 or 3");
  const double fan_in = static_cast<double>(kernel * kernel * in);
  const double bound = std::sqrt(6.0 / fan_in);
  weight = store.add(name + ".weight", init_uniform<T>({kernel, kernel, in, out}, bound, rng));
  bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
}

template <typename T>
Mlp3<T>::Mlp3(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
              std::size_t out, Rng& rng)
    : l1(store, name + ".0", in, hidden, rng),
      l2(store, name + ".1", hidden, hidden, rng),
      l3(store, name + ".2", hidden, out, rng) {}

template <typename T>
Tensor<T> Mlp3<T>::operator()(const Tensor<T>& x) const {
  return l3(relu(l2(relu(l1(x)))));
}

template <typename T>
FeedForward<T>::FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t width,
                            std::size_t hidden, Rng& rng)
    : l1(store, name + ".0", width, hidden, rng), l2(store, name + ".1", hidden, width, rng) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const std::string& name,
                                          std::size_t width, std::size_t heads_, Rng& rng)
    : q(store, name + ".q", width, width, rng, false),
      k(store, name + ".k", width, width, rng, false),
      v(store, name + ".v", width, width, rng, false),
      o(store, name + ".o", width, width, rng, false),
      heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("MultiHeadAttention: width " + std::to_string(width) +
                      " not divisible by heads " + std::to_string(heads));
  }
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& key,
                                            const Tensor<T>& value, const AttentionMask* mask,
                                            std::vector<Tensor<T>>* weights) const {
  const std::size_t nq = query.dim(0), nk = key.dim(0);
  const std::size_t width = q.weight.dim(1);
  const std::size_t dh = width / heads;
  const auto Q = q(query), K = k(key), V = v(value);

  Tensor<T> bias;
  if (mask != nullptr && !mask->empty()) {
    if (mask->rows != nq || mask->cols != nk) {
      throw ShapeError("MultiHeadAttention: mask " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) + " does not match " + std::to_string(nq) + "x" +
                       std::to_string(nk));
    }
    std::vector<T> b(nq * nk, T(0));
    for (std::size_t i = 0; i < b.size(); ++i)
      if (!mask->allowed[i]) b[i] = -std::numeric_limits<T>::infinity();
    bias = Tensor<T>({nq, nk}, std::move(b));
  }

  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  if (weights != nullptr) weights->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = slice_cols(Q, h * dh, (h + 1) * dh);
    const auto kh = slice_cols(K, h * dh, (h + 1) * dh);
    const auto vh = slice_cols(V, h * dh, (h + 1) * dh);
    auto logits = scale(matmul_nt(qh, kh), inv_sqrt);
    if (bias.defined()) logits = add(logits, bias);
    const auto attn = softmax(logits, 1);
    if (weights != nullptr) weights->push_back(attn);
    outs.push_back(matmul(attn, vh));
  }
  return o(heads == 1 ? outs[0] : concat_cols(outs));
}

#define VCT_INSTANTIATE(T)                                                   \
  template class ParameterStore<T>;                                          \
  template Tensor<T> init_uniform<T>(const Shape&, double, Rng&);            \
  template Tensor<T> init_normal<T>(const Shape&, double, Rng&);             \
  template struct Linear<T>;                                                 \
  template struct LayerNorm<T>;                                              \
  template struct Conv2d<T>;                                                 \
  template struct Mlp3<T>;                                                   \
  template struct FeedForward<T>;                                            \
  template struct MultiHeadAttention<T>;

VCT_INSTANTIATE(float)
VCT_INSTANTIATE(double)

#undef VCT_INSTANTIATE

}  // namespace vct
