#include "vct/losses.hpp"

#include <algorithm>
#include <cmath>

#include "vct/hungarian.hpp"

namespace vct {

TargetSet make_targets(const Sample& sample, std::size_t height, std::size_t width, bool binary) {
  if (height == 0 || width == 0 || sample.height % height != 0 || sample.width % width != 0) {
    throw ShapeError("make_targets: " + std::to_string(sample.height) + "x" + std::to_string(sample.width) +
                     " does not divide into " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t fy = sample.height / height, fx = sample.width / width;
  const double area = static_cast<double>(fy * fx);
  TargetSet t{height, width, {}, {}};
  for (std::size_t i : sample.sounding_objects()) {
    const auto& obj = sample.objects[i];
    std::vector<double> m(height * width, 0.0);
    for (std::size_t y = 0; y < sample.height; ++y)
      for (std::size_t x = 0; x < sample.width; ++x)
        if (obj.mask[y * sample.width + x]) m[(y / fy) * width + x / fx] += 1.0;
    for (auto& v : m) {
      v /= area;
      if (binary) v = v >= 0.5 ? 1.0 : 0.0;
    }
    t.categories.push_back(obj.category);
    t.masks.push_back(std::move(m));
  }
  return t;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& prob, std::span<const T> target) {
  if (prob.size() != target.size()) throw ShapeError("dice_loss: size mismatch");
  T gsum = 0;
  for (T g : target) gsum += g;
  const auto flat = reshape(prob, {prob.size()});
  const auto inter = sum(mul(flat, Tensor<T>({prob.size()}, std::vector<T>(target.begin(), target.end()))));
  const auto num = add_scalar(scale(inter, T(2)), T(1));
  const auto den = add_scalar(sum(flat), gsum + T(1));
  return add_scalar(scale(mul(num, reciprocal(den)), T(-1)), T(1));
}

template <typename T>
std::vector<double> matching_costs(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w) {
  const std::size_t N = pred.num_queries(), K = pred.num_categories(), O = targets.categories.size();
  const std::size_t P = pred.height * pred.width;
  if (targets.height != pred.height || targets.width != pred.width) {
    throw ShapeError("matching_costs: target grid differs from prediction grid");
  }
  const auto cls = pred.class_logits.values();
  const auto masks = pred.mask_logits.values();
  std::vector<double> prob(N * (K + 1));
  for (std::size_t q = 0; q < N; ++q) {
    double mx = -INFINITY, z = 0;
    for (std::size_t k = 0; k <= K; ++k) mx = std::max(mx, double(cls[q * (K + 1) + k]));
    for (std::size_t k = 0; k <= K; ++k) z += prob[q * (K + 1) + k] = std::exp(cls[q * (K + 1) + k] - mx);
    for (std::size_t k = 0; k <= K; ++k) prob[q * (K + 1) + k] /= z;
  }
  std::vector<double> cost(O * N);
  for (std::size_t q = 0; q < N; ++q) {
    // Per-query mask statistics shared by every target.
    std::vector<double> sig(P), softplus(P);
    double psum = 0;
    for (std::size_t p = 0; p < P; ++p) {
      const double x = masks[q * P + p];
      sig[p] = 1.0 / (1.0 + std::exp(-x));
      softplus[p] = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
      psum += sig[p];
    }
    for (std::size_t o = 0; o < O; ++o) {
      const auto& g = targets.masks[o];
      double bce = 0, inter = 0, gsum = 0;
      for (std::size_t p = 0; p < P; ++p) {
        bce += softplus[p] - double(masks[q * P + p]) * g[p];
        inter += sig[p] * g[p];
        gsum += g[p];
      }
      bce /= static_cast<double>(P);
      const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
      cost[o * N + q] = -w.cls * prob[q * (K + 1) + targets.categories[o]] + w.mask * (bce + dice);
    }
  }
  return cost;
}

template <typename T>
MatchResult hungarian_match(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w) {
  const std::size_t N = pred.num_queries(), O = targets.categories.size();
  if (O > N) {
    throw ConfigError("hungarian_match: " + std::to_string(O) + " targets exceed " + std::to_string(N) +
                      " queries");
  }
  MatchResult r;
  if (O == 0) return r;
  const auto cost = matching_costs(pred, targets, w);
  const auto a = solve_assignment(cost, O, N);
  for (std::size_t o = 0; o < O; ++o) r.pairs.emplace_back(a.row_to_col[o], o);
  r.total_cost = a.cost;
  return r;
}

template <typename T>
LossTerms<T> prediction_loss(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w,
                             DiscreteTrace* trace) {
  const std::size_t N = pred.num_queries(), K = pred.num_categories(), O = targets.categories.size();
  const std::size_t P = pred.height * pred.width;

  std::vector<std::size_t> query_of(O);
  if (trace != nullptr && trace->replaying()) {
    const auto& e = trace->next();
    for (std::size_t o = 0; o < O; ++o) query_of[o] = static_cast<std::size_t>(e.choices.at(o));
  } else {
    const auto m = hungarian_match(pred, targets, w);
    for (const auto& [q, o] : m.pairs) query_of[o] = q;
    if (trace != nullptr) trace->record(std::vector<std::int64_t>(query_of.begin(), query_of.end()));
  }

  std::vector<std::size_t> labels(N, K);
  std::vector<T> weight(N, static_cast<T>(w.no_object));
  for (std::size_t o = 0; o < O; ++o) {
    labels[query_of[o]] = targets.categories[o];
    weight[query_of[o]] = T(1);
  }
  T wsum = 0;
  for (T v : weight) wsum += v;
  const auto picked = pick(log_softmax(pred.class_logits, 1), labels);
  LossTerms<T> out;
  out.cls = scale(sum(mul(picked, Tensor<T>({N}, std::move(weight)))), T(-1) / wsum);

  if (O == 0) {
    out.bce = Tensor<T>::scalar(T(0));
    out.dice = Tensor<T>::scalar(T(0));
    return out;
  }
  std::vector<T> g(O * P);
  std::vector<T> gsum(O, T(0));
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t p = 0; p < P; ++p) {
      g[o * P + p] = static_cast<T>(targets.masks[o][p]);
      gsum[o] += g[o * P + p];
    }
  const auto logits = gather_rows(pred.mask_logits, query_of);  // [O×P]
  out.bce = mean(bce_with_logits(logits, std::span<const T>(g)));
  const auto prob = sigmoid(logits);
  const auto inter = sum_axis(mul(prob, Tensor<T>({O, P}, g)), 1);
  const auto num = add_scalar(scale(inter, T(2)), T(1));
  const auto den = add_scalar(add(sum_axis(prob, 1), Tensor<T>({O}, gsum)), T(1));
  out.dice = add_scalar(scale(mean(mul(num, reciprocal(den))), T(-1)), T(1));
  return out;
}

template <typename T>
Tensor<T> weighted_loss(const Tensor<T>& cls, const Tensor<T>& mask, const Tensor<T>& pac, const LossWeights& w) {
  return add(add(scale(cls, static_cast<T>(w.cls)), scale(mask, static_cast<T>(w.mask))),
             scale(pac, static_cast<T>(w.pac)));
}

template <typename T>
LossBreakdown<T> total_loss(const std::vector<Prediction<T>>& preds, const TargetSet& targets,
                            const Tensor<T>& pac, const LossWeights& w, bool aux, DiscreteTrace* trace) {
  if (preds.empty()) throw std::invalid_argument("total_loss: no predictions");
  const std::size_t first = aux ? 0 : preds.size() - 1;
  const T inv = T(1) / static_cast<T>(preds.size() - first);
  Tensor<T> cls, bce, dice;
  for (std::size_t i = first; i < preds.size(); ++i) {
    const auto t = prediction_loss(preds[i], targets, w, trace);
    cls = cls.defined() ? add(cls, t.cls) : t.cls;
    bce = bce.defined() ? add(bce, t.bce) : t.bce;
    dice = dice.defined() ? add(dice, t.dice) : t.dice;
  }
  cls = scale(cls, inv);
  bce = scale(bce, inv);
  dice = scale(dice, inv);
  LossBreakdown<T> out;
  out.total = weighted_loss(cls, add(bce, dice), pac, w);
  out.cls = cls.item();
  out.bce = bce.item();
  out.dice = dice.item();
  out.pac = pac.item();
  return out;
}

#define VCT_INSTANTIATE(T)                                                                               \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, std::span<const T>);                                \
  template std::vector<double> matching_costs<T>(const Prediction<T>&, const TargetSet&, const LossWeights&); \
  template MatchResult hungarian_match<T>(const Prediction<T>&, const TargetSet&, const LossWeights&);  \
  template struct LossTerms<T>;                                                                         \
  template LossTerms<T> prediction_loss<T>(const Prediction<T>&, const TargetSet&, const LossWeights&,   \
                                           DiscreteTrace*);                                             \
  template Tensor<T> weighted_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&); \
  template struct LossBreakdown<T>;                                                                     \
  template LossBreakdown<T> total_loss<T>(const std::vector<Prediction<T>>&, const TargetSet&,          \
                                          const Tensor<T>&, const LossWeights&, bool, DiscreteTrace*);

VCT_INSTANTIATE(float)
VCT_INSTANTIATE(double)

#undef VCT_INSTANTIATE

}  // namespace vct
