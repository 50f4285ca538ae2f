#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vct/rng.hpp"
#include "vct/tensor.hpp"

namespace vct {

// Named learnable tensors in registration order. Modules keep handles that
// share nodes with the store, so loading values here updates every module.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> value);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  // Parameters whose name starts with `prefix`.
  std::vector<std::pair<std::string, Tensor<T>>> with_prefix(const std::string& prefix) const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T> Tensor<T> init_uniform(const Shape& dims, double bound, Rng& rng);
template <typename T> Tensor<T> init_normal(const Shape& dims, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in×out]
  Tensor<T> bias;    // [out]; undefined for bias-free projections

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [k×k×in×out]
  Tensor<T> bias;    // [out]

  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t kernel, std::size_t in,
         std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias); }
};

// Linear -> ReLU -> Linear -> ReLU -> Linear.
template <typename T>
struct Mlp3 {
  Linear<T> l1, l2, l3;

  Mlp3() = default;
  Mlp3(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
       std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct FeedForward {
  Linear<T> l1, l2;

  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t width,
              std::size_t hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return l2(relu(l1(x))); }
};

// Row-major boolean matrix [queries × keys]; nonzero = attention allowed.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  bool empty() const { return allowed.empty(); }
  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// Multi-head attention with bias-free projections. Disallowed positions get
// -inf before the softmax, so their weights are exactly zero.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t width,
                     std::size_t heads, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                       const AttentionMask* mask = nullptr,
                       std::vector<Tensor<T>>* weights = nullptr) const;
};

}  // namespace vct
