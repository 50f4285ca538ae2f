#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "vct/encoders.hpp"
#include "vct/scene.hpp"

namespace vct {

enum class Grouping { gumbel_hard, soft_cross_attn, none };

std::string to_string(Grouping g);
Grouping grouping_from_string(const std::string& s);

struct ModelConfig {
  std::size_t num_queries = 16;      // N
  std::size_t hidden_dim = 64;       // C^h
  std::size_t decoder_repeats = 2;   // D
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  double gumbel_tau = 1.0;
  EncoderConfig encoder;

  bool operator==(const ModelConfig&) const = default;
};

struct LossWeights {
  double cls = 2.0;
  double mask = 5.0;
  double pac = 1.0;
  double no_object = 0.1;

  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t iterations = 2000;
  std::size_t batch_size = 2;
  std::uint64_t seed = 7;
  std::size_t eval_every = 250;        // 0 disables periodic train-set evaluation
  std::size_t checkpoint_every = 0;    // 0 disables intermediate checkpoints

  bool operator==(const TrainConfig&) const = default;
};

struct ModelFlags {
  bool use_act_baseline = false;
  bool use_pac_loss = true;
  bool use_prototypes = true;
  Grouping grouping = Grouping::gumbel_hard;
  bool aux_losses = true;
  bool gumbel_at_eval = false;

  bool operator==(const ModelFlags&) const = default;
};

struct ExperimentConfig {
  SceneConfig scene;
  std::size_t dataset_size = 32;
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  ModelFlags flags;

  // Throws ConfigError for inconsistent or out-of-range values.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;

  // V2 grid of the configured image size.
  std::size_t v2_height() const { return scene.height / 4; }
  std::size_t v2_width() const { return scene.width / 4; }
};

// Every field is optional on input; unknown keys raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);

// Desk-scale defaults (64×64, N = 16, C^h = 64).
ExperimentConfig desk_preset();
// Full-scale sizes (224×224, N = 100, C^h = 256, S = 24); not exercised by
// the test suite.
ExperimentConfig full_scale_preset();

}  // namespace vct
