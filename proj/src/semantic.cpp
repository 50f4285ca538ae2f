#include "vct/semantic.hpp"

#include <algorithm>
#include <cmath>

namespace vct {
namespace {

struct Tap {
  std::size_t i0, i1;
  double f;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (s < 0) s = 0;
    std::size_t i0 = static_cast<std::size_t>(s);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, s - static_cast<double>(i0)};
  }
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

template <typename T>
std::vector<double> resize_bilinear(std::span<const T> src, std::size_t h, std::size_t w, std::size_t oh,
                                    std::size_t ow) {
  if (src.size() != h * w || h == 0 || w == 0) throw ShapeError("resize_bilinear: source size mismatch");
  const auto ty = taps(h, oh), tx = taps(w, ow);
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < ow; ++x) {
      const auto& b = tx[x];
      const double top = (1 - b.f) * src[a.i0 * w + b.i0] + b.f * src[a.i0 * w + b.i1];
      const double bot = (1 - b.f) * src[a.i1 * w + b.i0] + b.f * src[a.i1 * w + b.i1];
      out[y * ow + x] = (1 - a.f) * top + a.f * bot;
    }
  }
  return out;
}

template <typename T>
std::vector<double> semantic_scores(const Prediction<T>& pred) {
  const std::size_t N = pred.num_queries(), K = pred.num_categories();
  const std::size_t P = pred.height * pred.width;
  const auto cls = pred.class_logits.values();
  const auto masks = pred.mask_logits.values();
  std::vector<double> sem(K * P, 0.0);
  std::vector<double> prob(K + 1);
  for (std::size_t q = 0; q < N; ++q) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k <= K; ++k) mx = std::max(mx, static_cast<double>(cls[q * (K + 1) + k]));
    double z = 0;
    for (std::size_t k = 0; k <= K; ++k) z += prob[k] = std::exp(cls[q * (K + 1) + k] - mx);
    for (std::size_t p = 0; p < P; ++p) {
      const double m = sigmoid(masks[q * P + p]);
      for (std::size_t k = 0; k < K; ++k) sem[k * P + p] += prob[k] / z * m;
    }
  }
  return sem;
}

template <typename T>
std::vector<std::size_t> assemble_semantic_map(const Prediction<T>& pred, std::size_t out_h,
                                               std::size_t out_w, BackgroundRule rule) {
  const std::size_t N = pred.num_queries(), K = pred.num_categories(), P = pred.height * pred.width;
  const auto sem = semantic_scores(pred);
  std::vector<double> threshold(out_h * out_w, 0.5);
  if (rule == BackgroundRule::mask_mass) {
    std::vector<double> mass(P, 0.0);
    const auto masks = pred.mask_logits.values();
    for (std::size_t q = 0; q < N; ++q)
      for (std::size_t p = 0; p < P; ++p) mass[p] += sigmoid(masks[q * P + p]);
    threshold = resize_bilinear(std::span<const double>(mass), pred.height, pred.width, out_h, out_w);
    for (auto& t : threshold) t *= 0.5;
  }
  std::vector<std::vector<double>> up(K);
  for (std::size_t k = 0; k < K; ++k) {
    up[k] = resize_bilinear(std::span<const double>(sem).subspan(k * P, P), pred.height, pred.width,
                            out_h, out_w);
  }
  std::vector<std::size_t> labels(out_h * out_w, K);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    double best = -INFINITY;
    std::size_t arg = K;
    for (std::size_t k = 0; k < K; ++k)
      if (up[k][p] > best) {
        best = up[k][p];
        arg = k;
      }
    labels[p] = best < threshold[p] ? K : arg;
  }
  return labels;
}

template std::vector<double> resize_bilinear<float>(std::span<const float>, std::size_t, std::size_t,
                                                    std::size_t, std::size_t);
template std::vector<double> resize_bilinear<double>(std::span<const double>, std::size_t, std::size_t,
                                                     std::size_t, std::size_t);
template std::vector<double> semantic_scores<float>(const Prediction<float>&);
template std::vector<double> semantic_scores<double>(const Prediction<double>&);
template std::vector<std::size_t> assemble_semantic_map<float>(const Prediction<float>&, std::size_t,
                                                               std::size_t, BackgroundRule);
template std::vector<std::size_t> assemble_semantic_map<double>(const Prediction<double>&, std::size_t,
                                                                std::size_t, BackgroundRule);

}  // namespace vct
