#include "vct/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "vct/rng.hpp"
#include "vct/trace.hpp"

namespace vct {

std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> new_node(Shape dims, std::vector<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->dims = std::move(dims);
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds an op result. Parents and the backward closure are only retained
// when some parent needs a gradient and grad mode is on.
template <typename T>
Tensor<T> make_result(const char* op, Shape dims, std::vector<T> value,
                      std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = new_node<T>(std::move(dims), std::move(value));
  n->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(n));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible operands " + shape_string(a) + " and " +
                   shape_string(b));
}

void require_rank(const char* op, const Shape& d, std::size_t rank) {
  if (d.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(d));
  }
}

// C[m×n] += A[m×k] · B[k×n]; the inner loop is contiguous in B and C.
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    const T* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      const T* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[k×n] += Aᵀ · G for A[m×k], G[m×n].
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* A, const T* G, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    const T* g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      T* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* src) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& d, std::size_t axis, const char* op) {
  if (axis >= d.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_string(d));
  }
  AxisSplit s{1, d[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) s.inner *= d[i];
  return s;
}

template <typename T>
Tensor<T> unary(const char* op, const Tensor<T>& x, T (*f)(T), T (*df)(T x, T y)) {
  std::vector<T> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, x.dims(), std::move(out), {x.node()}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace

// --- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> values, bool requires_grad) {
  if (shape_size(dims) != values.size()) {
    throw ShapeError("Tensor: dims " + shape_string(dims) + " hold " +
                     std::to_string(shape_size(dims)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = new_node<T>(std::move(dims), std::move(values));
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape dims, bool requires_grad) {
  const auto n = shape_size(dims);
  return Tensor(std::move(dims), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape dims, T fill, bool requires_grad) {
  const auto n = shape_size(dims);
  return Tensor(std::move(dims), std::vector<T>(n, fill), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("Tensor::dim: axis out of range for " + shape_string(dims()));
  return node_->dims[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("Tensor::item: tensor " + shape_string(dims()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw ShapeError("Tensor::backward: implicit seed needs a scalar, got " + shape_string(dims()));
  }
  const T one = T(1);
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  if (seed.size() != size()) throw ShapeError("Tensor::backward: seed size mismatch");
  if (!node_->requires_grad) return;

  // Collect reachable nodes once, then run them in decreasing id order.
  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::vector<Node<T>*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

  T* g = node_->grad_data();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  for (Node<T>* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->dims, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(node_->dims, node_->value, node_->requires_grad);
  out.node_->grad = node_->grad;
  return out;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

// --- linear algebra -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.dims(), 2);
  require_rank("matmul", b.dims(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_fail("matmul", a.dims(), b.dims());
  std::vector<T> out(m * n, T(0));
  gemm_acc(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_result<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                        [m, k, n](Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (A.requires_grad) {
                            auto bt = transposed(k, n, B.value.data());
                            gemm_acc(m, n, k, self.grad.data(), bt.data(), A.grad_data());
                          }
                          if (B.requires_grad) {
                            gemm_tn_acc(m, k, n, A.value.data(), self.grad.data(), B.grad_data());
                          }
                        });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul_nt", a.dims(), 2);
  require_rank("matmul_nt", b.dims(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_fail("matmul_nt", a.dims(), b.dims());
  std::vector<T> out(m * n, T(0));
  {
    auto bt = transposed(n, k, b.values().data());
    gemm_acc(m, k, n, a.values().data(), bt.data(), out.data());
  }
  return make_result<T>("matmul_nt", {m, n}, std::move(out), {a.node(), b.node()},
                        [m, k, n](Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (A.requires_grad) {
                            gemm_acc(m, n, k, self.grad.data(), B.value.data(), A.grad_data());
                          }
                          if (B.requires_grad) {
                            gemm_tn_acc(m, n, k, self.grad.data(), A.value.data(), B.grad_data());
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a.dims(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  return make_result<T>("transpose", {c, r}, transposed(r, c, a.values().data()), {a.node()},
                        [r, c](Node<T>& self) {
                          auto& A = *self.parents[0];
                          if (!A.requires_grad) return;
                          T* g = A.grad_data();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape dims) {
  if (shape_size(dims) != a.size()) shape_fail("reshape", a.dims(), dims);
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_result<T>("reshape", std::move(dims), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    T* g = A.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// --- elementwise ---------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) shape_fail("add", a.dims(), b.dims());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.dims(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) shape_fail("sub", a.dims(), b.dims());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.dims(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      T* g = A.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (B.requires_grad) {
      T* g = B.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) shape_fail("mul", a.dims(), b.dims());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.dims(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      T* g = A.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      T* g = B.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>("scale", a.dims(), std::move(out), {a.node()}, [factor](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    T* g = A.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T shift) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + shift;
  return make_result<T>("add_scalar", a.dims(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    T* g = A.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank("add_row", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) shape_fail("add_row", x.dims(), bias.dims());
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + bias[j];
  return make_result<T>("add_row", x.dims(), std::move(out), {x.node(), bias.node()},
                        [m, n](Node<T>& self) {
                          auto& X = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (X.requires_grad) {
                            T* g = X.grad_data();
                            for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
                          }
                          if (B.requires_grad) {
                            T* g = B.grad_data();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                          }
                        });
}

template <typename T>
Tensor<T> mul_col(const Tensor<T>& x, const Tensor<T>& s) {
  require_rank("mul_col", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (s.size() != m) shape_fail("mul_col", x.dims(), s.dims());
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * s[i];
  return make_result<T>("mul_col", x.dims(), std::move(out), {x.node(), s.node()},
                        [m, n](Node<T>& self) {
                          auto& X = *self.parents[0];
                          auto& S = *self.parents[1];
                          if (X.requires_grad) {
                            T* g = X.grad_data();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                g[i * n + j] += self.grad[i * n + j] * S.value[i];
                          }
                          if (S.requires_grad) {
                            T* g = S.grad_data();
                            for (std::size_t i = 0; i < m; ++i) {
                              T acc = 0;
                              for (std::size_t j = 0; j < n; ++j)
                                acc += self.grad[i * n + j] * X.value[i * n + j];
                              g[i] += acc;
                            }
                          }
                        });
}

namespace {
thread_local DiscreteTrace* t_relu_trace = nullptr;
}

ReluTraceScope::ReluTraceScope(DiscreteTrace* trace) : prev_(t_relu_trace) { t_relu_trace = trace; }
ReluTraceScope::~ReluTraceScope() { t_relu_trace = prev_; }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (t_relu_trace == nullptr) {
    return unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
  }
  const auto in = x.values();
  std::vector<std::int64_t> active(in.size());
  if (t_relu_trace->replaying()) {
    const auto& e = t_relu_trace->next();
    if (e.choices.size() != in.size()) throw std::logic_error("relu: replayed active set has the wrong size");
    active = e.choices;
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) active[i] = in[i] > T(0);
    t_relu_trace->record(active);
  }
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = active[i] ? in[i] : T(0);
  return make_result<T>("relu", x.dims(), std::move(out), {x.node()}, [active](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      if (active[i]) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return unary<T>(
      "reciprocal", x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(x[i], lo), hi);
  return make_result<T>("clamp", x.dims(), std::move(out), {x.node()}, [lo, hi](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (X.value[i] > lo && X.value[i] < hi) g[i] += self.grad[i];
  });
}

// --- reductions ---------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.values()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x.node()}, [](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    for (std::size_t i = 0; i < X.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.dims(), axis, "sum_axis");
  Shape dims = x.dims();
  dims.erase(dims.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += in[(o * s.len + l) * s.inner + i];
  return make_result<T>("sum_axis", std::move(dims), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i)
          g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.dims(), axis, "mean_axis");
  if (s.len == 0) throw ShapeError("mean_axis: empty axis");
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(s.len));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.dims(), axis, "softmax");
  std::vector<T> out(x.size());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, in[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(in[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.dims(), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = 0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          dot += gy[at] * y[at];
        }
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          g[at] += y[at] * (gy[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.dims(), axis, "log_softmax");
  std::vector<T> out(x.size());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, in[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.len; ++l) total += std::exp(in[base + l * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = in[base + l * s.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", x.dims(), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T total = 0;
        for (std::size_t l = 0; l < s.len; ++l) total += self.grad[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          g[at] += self.grad[at] - std::exp(self.value[at]) * total;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank("layer_norm", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.size() != n || beta.size() != n) shape_fail("layer_norm", x.dims(), gamma.dims());
  std::vector<T> out(m * n);
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.values().data() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.dims(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& X = *self.parents[0];
        auto& G = *self.parents[1];
        auto& B = *self.parents[2];
        const auto& gy = self.grad;
        if (G.requires_grad) {
          T* g = G.grad_data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j] * xhat[i * n + j];
        }
        if (B.requires_grad) {
          T* g = B.grad_data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
        }
        if (X.requires_grad) {
          T* g = X.grad_data();
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = gy[i * n + j] * G.value[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = gy[i * n + j] * G.value[j];
              g[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

// --- spatial --------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank("conv2d", x.dims(), 3);
  require_rank("conv2d", w.dims(), 4);
  const std::size_t k = w.dim(0);
  if (k != w.dim(1) || (k != 1 && k != 3)) {
    throw ConfigError("conv2d: unsupported kernel " + shape_string(w.dims()) + " (k must be 1 or 3)");
  }
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2), cout = w.dim(3);
  if (w.dim(2) != cin) shape_fail("conv2d", x.dims(), w.dims());
  if (b.size() != cout) shape_fail("conv2d", w.dims(), b.dims());
  const std::size_t P = H * W;
  const std::size_t R = k * k * cin;
  const long pad = static_cast<long>(k / 2);

  // im2col: cols[p, (dy*k + dx)*cin + c]
  std::vector<T> cols;
  if (k == 1) {
    cols.assign(x.values().begin(), x.values().end());
  } else {
    cols.assign(P * R, T(0));
    const auto in = x.values();
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        T* dst = cols.data() + (y * W + xx) * R;
        for (std::size_t dy = 0; dy < k; ++dy) {
          const long sy = static_cast<long>(y) + static_cast<long>(dy) - pad;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (std::size_t dx = 0; dx < k; ++dx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(dx) - pad;
            if (sx < 0 || sx >= static_cast<long>(W)) continue;
            const T* src = in.data() + (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * cin;
            std::copy(src, src + cin, dst + (dy * k + dx) * cin);
          }
        }
      }
  }
  std::vector<T> out(P * cout);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < cout; ++c) out[p * cout + c] = b[c];
  gemm_acc(P, R, cout, cols.data(), w.values().data(), out.data());

  return make_result<T>(
      "conv2d", {H, W, cout}, std::move(out), {x.node(), w.node(), b.node()},
      [H, W, cin, cout, k, P, R, pad, cols = std::move(cols)](Node<T>& self) {
        auto& X = *self.parents[0];
        auto& Wt = *self.parents[1];
        auto& B = *self.parents[2];
        const T* gy = self.grad.data();
        if (B.requires_grad) {
          T* g = B.grad_data();
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t c = 0; c < cout; ++c) g[c] += gy[p * cout + c];
        }
        if (Wt.requires_grad) gemm_tn_acc(P, R, cout, cols.data(), gy, Wt.grad_data());
        if (X.requires_grad) {
          auto wt = transposed(R, cout, Wt.value.data());
          T* g = X.grad_data();
          if (k == 1) {
            gemm_acc(P, cout, R, gy, wt.data(), g);
            return;
          }
          std::vector<T> dcols(P * R, T(0));
          gemm_acc(P, cout, R, gy, wt.data(), dcols.data());
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
              const T* src = dcols.data() + (y * W + xx) * R;
              for (std::size_t dy = 0; dy < k; ++dy) {
                const long sy = static_cast<long>(y) + static_cast<long>(dy) - pad;
                if (sy < 0 || sy >= static_cast<long>(H)) continue;
                for (std::size_t dx = 0; dx < k; ++dx) {
                  const long sx = static_cast<long>(xx) + static_cast<long>(dx) - pad;
                  if (sx < 0 || sx >= static_cast<long>(W)) continue;
                  T* dst = g + (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * cin;
                  const T* s = src + (dy * k + dx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                }
              }
            }
        }
      });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_rank("avg_pool2", x.dims(), 3);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: odd spatial dims " + shape_string(x.dims()));
  const std::size_t h = H / 2, w = W / 2;
  std::vector<T> out(h * w * C, T(0));
  const auto in = x.values();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          for (std::size_t c = 0; c < C; ++c)
            out[(y * w + xx) * C + c] += in[((2 * y + dy) * W + 2 * xx + dx) * C + c] * T(0.25);
  return make_result<T>("avg_pool2", {h, w, C}, std::move(out), {x.node()},
                        [h, w, W, C](Node<T>& self) {
                          auto& X = *self.parents[0];
                          if (!X.requires_grad) return;
                          T* g = X.grad_data();
                          for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t xx = 0; xx < w; ++xx)
                              for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx)
                                  for (std::size_t c = 0; c < C; ++c)
                                    g[((2 * y + dy) * W + 2 * xx + dx) * C + c] +=
                                        self.grad[(y * w + xx) * C + c] * T(0.25);
                        });
}

// --- indexing ------------------------------------------------------------------

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin > end || end > n) throw ShapeError("slice_cols: range out of bounds for " + shape_string(x.dims()));
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * n + begin + j];
  return make_result<T>("slice_cols", {m, w}, std::move(out), {x.node()},
                        [m, n, w, begin](Node<T>& self) {
                          auto& X = *self.parents[0];
                          if (!X.requires_grad) return;
                          T* g = X.grad_data();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
                        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) {
    require_rank("concat_cols", p.dims(), 2);
    if (p.dim(0) != m) shape_fail("concat_cols", parts[0].dims(), p.dims());
    widths.push_back(p.dim(1));
    n += p.dim(1);
    parents.push_back(p.node());
  }
  std::vector<T> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + off + j] = parts[k][i * widths[k] + j];
    off += widths[k];
  }
  return make_result<T>("concat_cols", {m, n}, std::move(out), std::move(parents),
                        [m, n, widths](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            auto& P = *self.parents[k];
                            if (P.requires_grad) {
                              T* g = P.grad_data();
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  g[i * widths[k] + j] += self.grad[i * n + off + j];
                            }
                            off += widths[k];
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_rank("gather_rows", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.values().data() + idx[r] * n, n, out.data() + r * n);
  }
  return make_result<T>("gather_rows", {idx.size(), n}, std::move(out), {x.node()},
                        [n, idx](Node<T>& self) {
                          auto& X = *self.parents[0];
                          if (!X.requires_grad) return;
                          T* g = X.grad_data();
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
                        });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> cols) {
  require_rank("pick", x.dims(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (cols.size() != m) throw ShapeError("pick: need one column index per row");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw ShapeError("pick: column index out of range");
    out[i] = x[i * n + idx[i]];
  }
  return make_result<T>("pick", {m}, std::move(out), {x.node()}, [n, idx](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    T* g = X.grad_data();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
  });
}

// --- losses ----------------------------------------------------------------------

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> target) {
  if (target.size() != logits.size()) throw ShapeError("bce_with_logits: target size mismatch");
  std::vector<T> t(target.begin(), target.end());
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T z = logits[i];
    // max(z, 0) - z t + log(1 + exp(-|z|))
    out[i] = std::max(z, T(0)) - z * t[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return make_result<T>("bce_with_logits", logits.dims(), std::move(out), {logits.node()},
                        [t = std::move(t)](Node<T>& self) {
                          auto& Z = *self.parents[0];
                          if (!Z.requires_grad) return;
                          T* g = Z.grad_data();
                          for (std::size_t i = 0; i < t.size(); ++i) {
                            const T z = Z.value[i];
                            const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                                  : std::exp(z) / (T(1) + std::exp(z));
                            g[i] += self.grad[i] * (s - t[i]);
                          }
                        });
}

// --- Gumbel grouping ----------------------------------------------------------

template <typename T>
Tensor<T> gumbel_noise(const Shape& dims, Rng& rng) {
  std::vector<T> g(shape_size(dims));
  for (auto& v : g) {
    const double u = std::clamp(rng.uniform(), 1e-10, 1.0 - 1e-10);
    v = static_cast<T>(-std::log(-std::log(u)));
  }
  return Tensor<T>(dims, std::move(g));
}

template <typename T>
Tensor<T> gumbel_softmax_soft(const Tensor<T>& logits, Rng* rng, T tau) {
  require_rank("gumbel_softmax", logits.dims(), 2);
  if (!(tau > T(0))) throw ConfigError("gumbel_softmax: tau must be positive");
  Tensor<T> z = logits;
  if (rng != nullptr) z = add(z, gumbel_noise<T>(logits.dims(), *rng));
  if (tau != T(1)) z = scale(z, T(1) / tau);
  return softmax(z, 0);
}

template <typename T>
Tensor<T> straight_through_onehot(const Tensor<T>& soft, DiscreteTrace* trace) {
  require_rank("straight_through_onehot", soft.dims(), 2);
  const std::size_t rows = soft.dim(0), cols = soft.dim(1);
  std::vector<T> out(rows * cols, T(0));
  if (trace != nullptr && trace->replaying()) {
    // Frozen surrogate: onehot(base winners) + soft - soft(base).
    const auto& e = trace->next();
    if (e.choices.size() != cols || e.reals.size() != rows * cols) {
      throw std::logic_error("straight_through_onehot: trace entry does not fit " +
                             shape_string(soft.dims()));
    }
    for (std::size_t i = 0; i < rows * cols; ++i) out[i] = soft[i] - static_cast<T>(e.reals[i]);
    for (std::size_t c = 0; c < cols; ++c) out[static_cast<std::size_t>(e.choices[c]) * cols + c] += T(1);
  } else {
    std::vector<std::int64_t> winners(cols, 0);
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < rows; ++r)
        if (soft[r * cols + c] > soft[best * cols + c]) best = r;
      winners[c] = static_cast<std::int64_t>(best);
      out[best * cols + c] = T(1);
    }
    if (trace != nullptr) {
      trace->record(std::move(winners),
                    std::vector<double>(soft.values().begin(), soft.values().end()));
    }
  }
  return make_result<T>("straight_through_onehot", soft.dims(), std::move(out), {soft.node()},
                        [](Node<T>& self) {
                          auto& S = *self.parents[0];
                          if (!S.requires_grad) return;
                          T* g = S.grad_data();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> gumbel_softmax_hard(const Tensor<T>& logits, Rng* rng, T tau, DiscreteTrace* trace) {
  return straight_through_onehot(gumbel_softmax_soft(logits, rng, tau), trace);
}

// --- instantiations --------------------------------------------------------------

#define VCT_INSTANTIATE(T)                                                                     \
  template class Tensor<T>;                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul_col(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> reciprocal(const Tensor<T>&);                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                              \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);              \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);                    \
  template Tensor<T> gumbel_noise<T>(const Shape&, Rng&);                                      \
  template Tensor<T> gumbel_softmax_soft(const Tensor<T>&, Rng*, T);                           \
  template Tensor<T> straight_through_onehot(const Tensor<T>&, DiscreteTrace*);                \
  template Tensor<T> gumbel_softmax_hard(const Tensor<T>&, Rng*, T, DiscreteTrace*);

VCT_INSTANTIATE(float)
VCT_INSTANTIATE(double)

#undef VCT_INSTANTIATE

}  // namespace vct
