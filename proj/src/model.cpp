#include "vct/model.hpp"

#include "vct/rng.hpp"

namespace vct {
namespace {
constexpr std::uint64_t kInitStream = 0x494E4954ULL;
}

template <typename T>
VctModel<T>::VctModel(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  const Rng root = Rng(seed).split(kInitStream);
  if (cfg.flags.use_act_baseline) {
    Rng rng = root.split(4);
    act_queries = store_.add("act.queries", init_normal<T>({cfg.model.num_queries, cfg.model.hidden_dim}, 1.0, rng));
    act_audio = Linear<T>(store_, "act.audio_proj", cfg.model.encoder.audio_channels, cfg.model.hidden_dim, rng);
  } else {
    Rng rng = root.split(1);
    ppqg = Ppqg<T>(store_, "ppqg", ppqg_options(cfg), rng);
  }
  Rng dec_rng = root.split(2);
  decoder = AvDecoder<T>(store_, "decoder", decoder_options(cfg), dec_rng);
  Rng head_rng = root.split(3);
  head = PredictionHead<T>(store_, "head", cfg.model.hidden_dim, cfg.scene.num_categories,
                           cfg.model.encoder.visual_channels[0], head_rng);
}

template <typename T>
Tensor<T> VctModel<T>::audio_derived_queries(const Tensor<T>& audio) const {
  const auto pooled = reshape(mean_axis(audio, 0), {1, audio.dim(1)});
  return add_row(act_queries, reshape(act_audio(pooled), {cfg_.model.hidden_dim}));
}

template <typename T>
ModelOutput<T> VctModel<T>::forward(const FeatureSet<T>& features, std::span<const std::uint8_t> presence,
                                    Rng* noise, DiscreteTrace* trace) const {
  ModelOutput<T> out;
  Tensor<T> queries;
  if (cfg_.flags.use_act_baseline) {
    queries = audio_derived_queries(features.audio);
    out.pac = Tensor<T>::scalar(T(0));
  } else {
    auto p = ppqg.forward(features.v2, features.audio, presence, noise, trace);
    queries = p.queries;
    out.pac = p.pac;
    out.assignment = p.assignment;
  }
  out.predictions = decoder.forward(queries, features, head, trace);
  return out;
}

template <typename T>
LossBreakdown<T> VctModel<T>::loss(const ModelOutput<T>& out, const TargetSet& targets, DiscreteTrace* trace) const {
  return total_loss(out.predictions, targets, out.pac, cfg_.loss, cfg_.flags.aux_losses, trace);
}

template class VctModel<float>;
template class VctModel<double>;

}  // namespace vct
