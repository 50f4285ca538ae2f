#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "vct/decoder.hpp"
#include "vct/encoders.hpp"
#include "vct/losses.hpp"
#include "vct/model.hpp"
#include "vct/nn.hpp"
#include "vct/ppqg.hpp"
#include "vct/scene.hpp"
#include "vct/trace.hpp"

namespace vct::testing {

Tensor<double> random_tensor(const Shape& dims, Rng& rng, double stddev) {
  std::vector<double> v(shape_size(dims));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor<double>(dims, std::move(v));
}

Tensor<double> uniform_tensor(const Shape& dims, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_size(dims));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(dims, std::move(v));
}

Tensor<double> away_from(const Shape& dims, Rng& rng, std::vector<double> kinks, double gap) {
  std::vector<double> v(shape_size(dims));
  for (auto& x : v) {
    x = rng.normal();
    for (double k : kinks)
      if (std::abs(x - k) < gap) x = k + (x < k ? -gap : gap);
  }
  return Tensor<double>(dims, std::move(v));
}

Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed, 0x5752);
  return sum(mul(y, uniform_tensor(y.dims(), rng, 0.5, 1.5)));
}

namespace {

using Fn = std::function<Tensor<double>(const Tensor<double>&)>;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed), rng_(seed, 0x4F5053) {}

  Rng& rng() { return rng_; }

  void check(const std::string& name, const Fn& op, const Tensor<double>& x) {
    const std::uint64_t s = seed_;
    out_.push_back({name, grad_check([&](const Tensor<double>& t) { return project(op(t), s); }, x)});
  }

  void check_params(const std::string& name, const std::function<Tensor<double>()>& f,
                    const std::vector<Tensor<double>>& params) {
    const std::uint64_t s = seed_;
    out_.push_back({name, grad_check_params([&] { return project(f(), s); }, params)});
  }

  std::vector<OpCheck> take() { return std::move(out_); }

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<OpCheck> out_;
};

}  // namespace

std::vector<OpCheck> primitive_grad_checks(std::uint64_t seed) {
  Suite s(seed);
  Rng& r = s.rng();

  const auto a = random_tensor({3, 4}, r), b = random_tensor({4, 5}, r), c = random_tensor({5, 4}, r);
  s.check("matmul/a", [&](const auto& x) { return matmul(x, b); }, a);
  s.check("matmul/b", [&](const auto& x) { return matmul(a, x); }, b);
  s.check("matmul_nt/a", [&](const auto& x) { return matmul_nt(x, c); }, a);
  s.check("matmul_nt/b", [&](const auto& x) { return matmul_nt(a, x); }, c);
  s.check("transpose", [](const auto& x) { return transpose(x); }, a);
  s.check("reshape", [](const auto& x) { return reshape(x, {2, 6}); }, a);

  const auto a2 = random_tensor({3, 4}, r);
  s.check("add", [&](const auto& x) { return add(x, a2); }, a);
  s.check("sub/a", [&](const auto& x) { return sub(x, a2); }, a);
  s.check("sub/b", [&](const auto& x) { return sub(a2, x); }, a);
  s.check("mul", [&](const auto& x) { return mul(x, a2); }, a);
  s.check("mul/self", [](const auto& x) { return mul(x, x); }, a);
  s.check("scale", [](const auto& x) { return scale(x, 1.7); }, a);
  s.check("add_scalar", [](const auto& x) { return add_scalar(x, 0.3); }, a);

  const auto row = random_tensor({4}, r), col = random_tensor({3}, r);
  s.check("add_row/x", [&](const auto& x) { return add_row(x, row); }, a);
  s.check("add_row/bias", [&](const auto& x) { return add_row(a, x); }, row);
  s.check("mul_col/x", [&](const auto& x) { return mul_col(x, col); }, a);
  s.check("mul_col/s", [&](const auto& x) { return mul_col(a, x); }, col);

  s.check("relu", [](const auto& x) { return relu(x); }, away_from({3, 4}, r, {0.0}, 0.05));
  s.check("sigmoid", [](const auto& x) { return sigmoid(x); }, a);
  s.check("exp", [](const auto& x) { return exp(x); }, a);
  s.check("log", [](const auto& x) { return log(x); }, uniform_tensor({3, 4}, r, 0.5, 2.0));
  s.check("reciprocal", [](const auto& x) { return reciprocal(x); }, uniform_tensor({3, 4}, r, 0.5, 2.0));
  s.check("clamp", [](const auto& x) { return clamp(x, -0.5, 0.5); },
          away_from({3, 4}, r, {-0.5, 0.5}, 0.05));

  const auto t3 = random_tensor({2, 3, 4}, r);
  s.check("sum", [](const auto& x) { return scale(sum(x), 1.3); }, t3);
  s.check("mean", [](const auto& x) { return scale(mean(x), 1.3); }, t3);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    s.check("sum_axis/" + std::to_string(axis), [axis](const auto& x) { return sum_axis(x, axis); }, t3);
    s.check("mean_axis/" + std::to_string(axis), [axis](const auto& x) { return mean_axis(x, axis); }, t3);
  }
  for (std::size_t axis = 0; axis < 2; ++axis) {
    s.check("softmax/" + std::to_string(axis), [axis](const auto& x) { return softmax(x, axis); }, a);
    s.check("log_softmax/" + std::to_string(axis), [axis](const auto& x) { return log_softmax(x, axis); }, a);
  }

  const auto gamma = uniform_tensor({4}, r, 0.5, 1.5), beta = random_tensor({4}, r);
  s.check("layer_norm/x", [&](const auto& x) { return layer_norm(x, gamma, beta); }, a);
  s.check("layer_norm/gamma", [&](const auto& x) { return layer_norm(a, x, beta); }, gamma);
  s.check("layer_norm/beta", [&](const auto& x) { return layer_norm(a, gamma, x); }, beta);

  const auto img = random_tensor({5, 4, 3}, r);
  for (std::size_t k : {1, 3}) {
    const auto w = random_tensor({k, k, 3, 2}, r), bias = random_tensor({2}, r);
    const std::string tag = "conv2d/k" + std::to_string(k);
    s.check(tag + "/x", [&](const auto& x) { return conv2d(x, w, bias); }, img);
    s.check(tag + "/w", [&](const auto& x) { return conv2d(img, x, bias); }, w);
    s.check(tag + "/b", [&](const auto& x) { return conv2d(img, w, x); }, bias);
  }
  s.check("avg_pool2", [](const auto& x) { return avg_pool2(x); }, random_tensor({4, 6, 2}, r));

  const auto wide = random_tensor({3, 6}, r);
  s.check("slice_cols", [](const auto& x) { return slice_cols(x, 1, 4); }, wide);
  s.check("concat_cols", [&](const auto& x) { return concat_cols<double>({x, a2, x}); }, a);
  const std::vector<std::size_t> rows{0, 2, 0, 1}, cols{3, 0, 2};
  s.check("gather_rows", [&](const auto& x) { return gather_rows(x, rows); }, a);
  s.check("pick", [&](const auto& x) { return pick(x, cols); }, a);

  std::vector<double> target(12);
  for (auto& v : target) v = r.uniform();
  s.check("bce_with_logits", [&](const auto& x) { return bce_with_logits(x, std::span<const double>(target)); }, a);

  const std::uint64_t gseed = r.next_u64();
  s.check("gumbel_softmax_soft",
          [gseed](const auto& x) {
            Rng g(gseed);
            return gumbel_softmax_soft(x, &g, 0.7);
          },
          a);

  std::vector<double> binary(12);
  for (auto& v : binary) v = r.bernoulli(0.5) ? 1.0 : 0.0;
  s.check("dice_loss", [&](const auto& x) { return dice_loss(sigmoid(x), std::span<const double>(binary)); }, a);
  const std::vector<std::uint8_t> presence{1, 0, 1, 1};
  s.check("presence_bce", [&](const auto& x) { return presence_bce(sigmoid(x), presence); }, random_tensor({4}, r));
  s.check("normalize_assignment", [](const auto& x) { return normalize_assignment(x); },
          uniform_tensor({3, 5}, r, 0.2, 1.0));

  // Building blocks, checked through their parameters.
  ParameterStore<double> store;
  Rng init(seed, 0x4E4E);
  const Linear<double> lin(store, "lin", 4, 3, init);
  const LayerNorm<double> ln(store, "ln", 4);
  const Mlp3<double> mlp(store, "mlp", 4, 5, 3, init);
  const MultiHeadAttention<double> mha(store, "mha", 4, 2, init);
  for (const auto& entry : store.entries()) {
    Tensor<double> t = entry.second;
    for (auto& x : t.mutable_values()) x += init.normal(0.0, 0.1);  // move LN/bias params off their neutral init
  }
  const auto kv = random_tensor({5, 4}, r);
  AttentionMask mask{3, 5, {1, 0, 1, 1, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1}};
  s.check_params("linear", [&] { return lin(a); }, {lin.weight, lin.bias});
  s.check_params("layer_norm_module", [&] { return ln(a); }, {ln.gamma, ln.beta});
  s.check_params("mlp3", [&] { return mlp(a); },
                 {mlp.l1.weight, mlp.l1.bias, mlp.l2.weight, mlp.l2.bias, mlp.l3.weight, mlp.l3.bias});
  s.check_params("attention", [&] { return mha(a, kv, kv, &mask); },
                 {mha.q.weight, mha.k.weight, mha.v.weight, mha.o.weight});
  s.check("attention/query", [&](const auto& x) { return mha(x, kv, kv, &mask); }, a);
  s.check("attention/key", [&](const auto& x) { return mha(a, x, kv, &mask); }, kv);
  s.check("attention/value", [&](const auto& x) { return mha(a, kv, x, &mask); }, kv);
  return s.take();
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.scene.height = 32;
  c.scene.width = 32;
  c.scene.num_categories = 3;
  c.scene.max_objects = 2;
  c.model.num_queries = 4;
  c.model.hidden_dim = 8;
  c.model.heads = 2;
  c.model.ffn_dim = 16;
  c.model.decoder_repeats = 1;
  c.model.encoder.visual_channels = {4, 6, 8, 10};
  c.model.encoder.audio_channels = 6;
  c.model.encoder.audio_rows = 2;
  c.train.batch_size = 1;
  c.validate();
  return c;
}

GradCheckResult composed_grad_check(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t per_tensor,
                                    double eps) {
  Rng scene_rng = Rng(seed).split(1);
  const Sample sample = generate_scene(scene_rng, cfg.scene, 0);
  const FeatureExtractor extract(cfg.model.encoder, cfg.scene.num_categories, seed);
  const auto features = to_features<double>(extract(sample));
  const auto targets = make_targets(sample, cfg.v2_height(), cfg.v2_width());
  VctModel<double> model(cfg, seed);

  DiscreteTrace trace, relu_trace;
  const std::uint64_t noise_seed = Rng(seed).split(2).next_u64();
  {
    NoGradGuard no_grad;
    ReluTraceScope relus(&relu_trace);
    Rng noise(noise_seed);
    const auto out = model.forward(features, sample.audio_presence, &noise, &trace);
    model.loss(out, targets, &trace);
  }
  trace.start_replay();
  relu_trace.start_replay();
  auto loss = [&] {
    ReluTraceScope relus(&relu_trace);
    trace.rewind();
    relu_trace.rewind();
    Rng noise(noise_seed);
    const auto out = model.forward(features, sample.audio_presence, &noise, &trace);
    return model.loss(out, targets, &trace).total;
  };
  return grad_check_params(loss, model.parameters().tensors(), eps, per_tensor);
}

}  // namespace vct::testing
