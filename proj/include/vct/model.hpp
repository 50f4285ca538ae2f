#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vct/config.hpp"
#include "vct/decoder.hpp"
#include "vct/heads.hpp"
#include "vct/losses.hpp"
#include "vct/nn.hpp"
#include "vct/ppqg.hpp"

namespace vct {

template <typename T>
struct ModelOutput {
  std::vector<Prediction<T>> predictions;  // initial queries, then one per decoder block
  Tensor<T> pac;                           // scalar, 0 when the PAC loss is off
  Tensor<T> assignment;                    // grouping assignment, undefined without PPQG grouping
};

// Query generator (PPQG, or audio-derived queries for the baseline), decoder
// and shared heads. Parameter values depend only on the config and `seed`.
template <typename T>
class VctModel {
 public:
  VctModel(const ExperimentConfig& cfg, std::uint64_t seed);
  VctModel(const VctModel&) = delete;
  VctModel& operator=(const VctModel&) = delete;

  const ExperimentConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  // `noise` drives the Gumbel noise of the grouping step; null disables it.
  ModelOutput<T> forward(const FeatureSet<T>& features, std::span<const std::uint8_t> presence, Rng* noise,
                         DiscreteTrace* trace = nullptr) const;

  LossBreakdown<T> loss(const ModelOutput<T>& out, const TargetSet& targets, DiscreteTrace* trace = nullptr) const;

  // Initial query set: grouped PPQG queries, or learnable queries plus the
  // projected mean audio feature for the baseline.
  Tensor<T> audio_derived_queries(const Tensor<T>& audio) const;

  Ppqg<T> ppqg;
  AvDecoder<T> decoder;
  PredictionHead<T> head;
  Tensor<T> act_queries;  // baseline only, [N×C^h]
  Linear<T> act_audio;    // baseline only, C^a -> C^h

 private:
  ExperimentConfig cfg_;
  ParameterStore<T> store_;
};

}  // namespace vct
