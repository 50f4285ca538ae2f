#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "vct/config.hpp"
#include "vct/heads.hpp"
#include "vct/scene.hpp"
#include "vct/trace.hpp"

namespace vct {

// Sounding on-screen objects of one sample at the prediction grid.
struct TargetSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> categories;
  std::vector<std::vector<double>> masks;  // height·width each
};

// Each target cell holds the fraction of its source pixels covered by the
// object; with `binary`, cells are 1 where that fraction is at least 0.5.
TargetSet make_targets(const Sample& sample, std::size_t height, std::size_t width, bool binary = false);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, target), in target order
  double total_cost = 0.0;
};

// 1 - (2 Σ p·g + 1) / (Σ p + Σ g + 1)
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& prob, std::span<const T> target);

// Per-pair matching cost: λ_cls · (-p_q[cat]) + λ_mask · (BCE + Dice), the
// mask terms taken on σ(mask logits) and averaged over cells.
template <typename T>
std::vector<double> matching_costs(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w);

// Throws ConfigError when there are more targets than queries.
template <typename T>
MatchResult hungarian_match(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w);

template <typename T>
struct LossTerms {
  Tensor<T> cls;   // weighted CE over all queries
  Tensor<T> bce;   // mean over matched masks
  Tensor<T> dice;  // mean over matched masks
};

// Matches, then scores one prediction. The trace freezes the matching.
template <typename T>
LossTerms<T> prediction_loss(const Prediction<T>& pred, const TargetSet& targets, const LossWeights& w,
                             DiscreteTrace* trace = nullptr);

// λ_cls · cls + λ_mask · mask + λ_pac · pac
template <typename T>
Tensor<T> weighted_loss(const Tensor<T>& cls, const Tensor<T>& mask, const Tensor<T>& pac, const LossWeights& w);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double cls = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  double pac = 0.0;
};

// With `aux`, the per-prediction terms are averaged over every prediction;
// otherwise only the last one is supervised.
template <typename T>
LossBreakdown<T> total_loss(const std::vector<Prediction<T>>& preds, const TargetSet& targets,
                            const Tensor<T>& pac, const LossWeights& w, bool aux, DiscreteTrace* trace = nullptr);

}  // namespace vct
