#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vct {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& dims);
std::string shape_string(const Shape& dims);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Rng;
class DiscreteTrace;

// One vertex of the computation graph. Parents are always created before
// their children, so `id` is a topological key: reverse id order is a valid
// backward schedule.
template <typename T>
struct Node {
  Shape dims;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

// Dense row-major tensor with reverse-mode autodiff. Copies share the
// underlying node; use `clone()` for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape dims, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape dims, bool requires_grad = false);
  static Tensor full(Shape dims, T fill, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node<T>> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& dims() const { return node_->dims; }
  std::size_t rank() const { return node_->dims.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Mutable access is for leaves (parameters, inputs); mutating an interior
  // node invalidates any pending backward pass through it.
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  // Reverse pass from a scalar output (seed 1) or with an explicit seed of
  // the same size as this tensor. Gradients accumulate into every reachable
  // node that requires grad.
  void backward() const;
  void backward(std::span<const T> seed) const;

  Tensor detach() const;
  Tensor clone() const;

  std::uint64_t id() const { return node_->id; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x, bool requires_grad = false) {
  std::vector<To> out(x.values().begin(), x.values().end());
  return Tensor<To>(x.dims(), std::move(out), requires_grad);
}

// --- linear algebra -------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a · bᵀ for a[m×k], b[n×k].
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape dims);

// --- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T shift);
// x[m×n] + bias[n] on every row.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);
// x[m×n] with row i multiplied by s[i].
template <typename T> Tensor<T> mul_col(const Tensor<T>& x, const Tensor<T>& s);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// While alive, relu calls on this thread record their active sets into
// `trace`, or reuse the recorded sets once the trace replays. Finite
// differences then stay on one linear piece of every relu.
class ReluTraceScope {
 public:
  explicit ReluTraceScope(DiscreteTrace* trace);
  ~ReluTraceScope();
  ReluTraceScope(const ReluTraceScope&) = delete;
  ReluTraceScope& operator=(const ReluTraceScope&) = delete;

 private:
  DiscreteTrace* prev_;
};

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> reciprocal(const Tensor<T>& x);
// Gradient passes only where lo < x < hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// --- reductions and normalisation -------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Reduces one axis away: [.., L, ..] -> [.., ..].
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);
// Normalises each row of x[m×n] over its n entries.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// --- spatial ----------------------------------------------------------------

// x[H×W×Cin] (*) w[k×k×Cin×Cout] + b[Cout], stride 1, same padding, k ∈ {1, 3}.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// 2×2 average pooling with stride 2 on x[H×W×C].
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& x);

// --- indexing -------------------------------------------------------------

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
// out[i] = x[i, cols[i]].
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> cols);

// --- losses ----------------------------------------------------------------

// Elementwise numerically stable BCE between sigmoid(logits) and a constant
// target of the same shape.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> target);

// --- Gumbel grouping -------------------------------------------------------

// Fills a tensor with Gumbel(0, 1) samples: -log(-log(u)), u clamped to
// [1e-10, 1 - 1e-10].
template <typename T> Tensor<T> gumbel_noise(const Shape& dims, Rng& rng);

// softmax((logits + G) / tau) over axis 0 of logits[N×P]. A null rng means
// G = 0.
template <typename T>
Tensor<T> gumbel_softmax_soft(const Tensor<T>& logits, Rng* rng, T tau);

// Forward value: each column is one-hot at the argmax row of `soft`
// (lowest row wins ties). Backward: identity onto `soft`.
template <typename T>
Tensor<T> straight_through_onehot(const Tensor<T>& soft, DiscreteTrace* trace = nullptr);

template <typename T>
Tensor<T> gumbel_softmax_hard(const Tensor<T>& logits, Rng* rng, T tau,
                              DiscreteTrace* trace = nullptr);

}  // namespace vct
