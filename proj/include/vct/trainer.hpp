#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vct/checkpoint.hpp"
#include "vct/dataset.hpp"
#include "vct/metrics.hpp"
#include "vct/model.hpp"

namespace vct {

// Non-finite loss during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws ConfigError when the dataset's K or image size differs from the
// config.
void check_dataset(const ExperimentConfig& cfg, const SceneConfig& data);

// Frozen encoder outputs for every sample, in float.
std::vector<FeatureSet<float>> extract_features(const ExperimentConfig& cfg, const std::vector<Sample>& samples);

// AdamW with decoupled weight decay on every parameter.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  // Applies one update from the accumulated gradients.
  void step(ParameterStore<float>& store);

  std::uint64_t steps() const { return step_; }
  void save(Checkpoint& c) const;
  // Restores moments; names must match the store.
  void load(const Checkpoint& c, const ParameterStore<float>& store);

 private:
  TrainConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

// Runs the model in evaluation mode on each sample and scores the final
// prediction's semantic map against the full-resolution labels.
EvalReport evaluate(const VctModel<float>& model, const std::vector<Sample>& samples,
                    const std::vector<FeatureSet<float>>& features);

// Final-prediction label map of one sample at full resolution.
std::vector<std::size_t> predict_labels(const VctModel<float>& model, const Sample& sample,
                                        const FeatureSet<float>& features);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  // Accept a resume checkpoint whose config differs from the run's.
  bool force = false;
  // Stop after this many iterations in total (still writes final.ckpt);
  // used to produce mid-run checkpoints.
  std::optional<std::size_t> stop_at;
  std::ostream* progress = nullptr;
};

struct TrainSummary {
  std::size_t iterations = 0;
  double last_loss = 0.0;
  double best_m_j = -1.0;
  EvalReport final_report;  // on the training set
};

// Trains on `data` and writes train_log.jsonl, final.ckpt and best.ckpt to
// out_dir.
TrainSummary train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opt);

// Writes σ(mask logits) of the final prediction as q{idx}.pgm for every
// fifth query (0, 5, 10, ...), skipping maps that are entirely 0 after
// quantisation. Returns the written query indices.
std::vector<std::size_t> dump_logit_maps(const VctModel<float>& model, const Sample& sample,
                                         const FeatureSet<float>& features, const std::filesystem::path& out_dir);

// Rebuilds a float model from a checkpoint.
std::unique_ptr<VctModel<float>> model_from_checkpoint(const Checkpoint& c);

}  // namespace vct
