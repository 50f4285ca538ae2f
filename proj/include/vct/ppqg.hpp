#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vct/config.hpp"
#include "vct/nn.hpp"
#include "vct/trace.hpp"

namespace vct {

struct PpqgOptions {
  std::size_t num_queries = 16;     // N
  std::size_t hidden_dim = 64;      // C^h
  std::size_t ffn_dim = 256;
  std::size_t num_categories = 4;   // K
  std::size_t v2_channels = 32;     // C2
  std::size_t v2_height = 16;       // H2
  std::size_t v2_width = 16;        // W2
  std::size_t audio_channels = 32;  // C^a
  double tau = 1.0;
  Grouping grouping = Grouping::gumbel_hard;
  bool use_prototypes = true;
  bool use_pac = true;  // needs use_prototypes

  // max(N, H2·W2 / 4)
  std::size_t mlp_hidden() const;
};

PpqgOptions ppqg_options(const ExperimentConfig& cfg);

// BCE between presence likelihoods M (already in (0, 1)) and M*, averaged
// over the K categories.
template <typename T>
Tensor<T> presence_bce(const Tensor<T>& likelihoods, std::span<const std::uint8_t> presence);

// Divides row i of the assignment by its row sum, or by 1 for rows that own
// no pixel, so empty queries get a zero context.
template <typename T>
Tensor<T> normalize_assignment(const Tensor<T>& assignment);

// Query generation from the V2 feature map: visual embedding aggregation,
// prompting with learnable audio prototypes, and pixel context grouping.
template <typename T>
class Ppqg {
 public:
  Ppqg() = default;
  Ppqg(ParameterStore<T>& store, const std::string& name, const PpqgOptions& opt, Rng& rng);

  const PpqgOptions& options() const { return opt_; }

  struct Aggregated {
    Tensor<T> hidden_map;  // V^h flattened, [H2W2×C^h]
    Tensor<T> embeddings;  // V^e, [N×C^h]
  };
  Aggregated aggregate(const Tensor<T>& v2) const;

  // Prompts V^e with the prototype bank. `weights` receives the [N×K]
  // attention matrix when non-null.
  Tensor<T> prompt(const Tensor<T>& embeddings, Tensor<T>* weights = nullptr) const;

  // Presence likelihoods M = clamp(sigmoid(P · mean_rows(Linear(A))), 1e-7, 1 - 1e-7), [K].
  Tensor<T> presence_likelihoods(const Tensor<T>& audio) const;
  Tensor<T> pac_loss(const Tensor<T>& audio, std::span<const std::uint8_t> presence) const;

  struct Grouped {
    Tensor<T> queries;     // V^q, [N×C^h]
    Tensor<T> logits;      // grouping logits, [N×H2W2] (undefined for Grouping::none)
    Tensor<T> assignment;  // R̂ or soft attention, [N×H2W2] (undefined for Grouping::none)
  };
  // `noise` null means no Gumbel noise (plain argmax).
  Grouped group(const Tensor<T>& prompted, const Tensor<T>& hidden_map, Rng* noise,
                DiscreteTrace* trace = nullptr) const;

  struct Output {
    Tensor<T> queries;
    Tensor<T> pac;  // scalar
    Tensor<T> hidden_map;
    Tensor<T> assignment;
  };
  Output forward(const Tensor<T>& v2, const Tensor<T>& audio, std::span<const std::uint8_t> presence,
                 Rng* noise, DiscreteTrace* trace = nullptr) const;

  // Parameters, exposed for tests.
  Conv2d<T> proj_in, proj_mid, proj_out;
  Mlp3<T> spatial_mlp;
  Tensor<T> prototypes;  // P, [K×C^h]
  Linear<T> prompt_q, prompt_k, prompt_v;
  LayerNorm<T> prompt_norm1, prompt_norm2;
  FeedForward<T> prompt_ffn;
  Linear<T> audio_proj;
  Linear<T> group_q, group_k, group_v, group_o;

 private:
  PpqgOptions opt_;
};

}  // namespace vct
