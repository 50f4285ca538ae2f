#include "vct/ppqg.hpp"

#include <algorithm>
#include <cmath>

#include "vct/rng.hpp"

namespace vct {

std::size_t PpqgOptions::mlp_hidden() const {
  return std::max(num_queries, v2_height * v2_width / 4);
}

PpqgOptions ppqg_options(const ExperimentConfig& cfg) {
  PpqgOptions o;
  o.num_queries = cfg.model.num_queries;
  o.hidden_dim = cfg.model.hidden_dim;
  o.ffn_dim = cfg.model.ffn_dim;
  o.num_categories = cfg.scene.num_categories;
  o.v2_channels = cfg.model.encoder.visual_channels[0];
  o.v2_height = cfg.v2_height();
  o.v2_width = cfg.v2_width();
  o.audio_channels = cfg.model.encoder.audio_channels;
  o.tau = cfg.model.gumbel_tau;
  o.grouping = cfg.flags.grouping;
  o.use_prototypes = cfg.flags.use_prototypes;
  o.use_pac = cfg.flags.use_prototypes && cfg.flags.use_pac_loss;
  return o;
}

template <typename T>
Tensor<T> presence_bce(const Tensor<T>& likelihoods, std::span<const std::uint8_t> presence) {
  const std::size_t K = likelihoods.size();
  if (presence.size() != K) {
    throw ShapeError("presence_bce: " + std::to_string(K) + " likelihoods but " +
                     std::to_string(presence.size()) + " presence flags");
  }
  std::vector<T> pos(K), neg(K);
  for (std::size_t k = 0; k < K; ++k) {
    pos[k] = presence[k] ? T(-1) : T(0);
    neg[k] = presence[k] ? T(0) : T(-1);
  }
  const auto m = reshape(likelihoods, {K});
  const auto log_m = log(m);
  const auto log_1m = log(add_scalar(scale(m, T(-1)), T(1)));
  const auto terms = add(mul(log_m, Tensor<T>({K}, pos)), mul(log_1m, Tensor<T>({K}, neg)));
  return mean(terms);
}

template <typename T>
Tensor<T> normalize_assignment(const Tensor<T>& assignment) {
  const auto rows = sum_axis(assignment, 1);
  // Adding 1 only to rows with (near-)zero mass equals max(sum, 1) on every
  // reachable value of a one-hot assignment, without a kink at sum = 1.
  std::vector<T> guard(rows.size());
  for (std::size_t i = 0; i < guard.size(); ++i) guard[i] = rows[i] < T(0.5) ? T(1) : T(0);
  const auto denom = add(rows, Tensor<T>(rows.dims(), std::move(guard)));
  return mul_col(assignment, reciprocal(denom));
}

template <typename T>
Ppqg<T>::Ppqg(ParameterStore<T>& store, const std::string& name, const PpqgOptions& opt, Rng& rng)
    : opt_(opt) {
  const std::size_t Ch = opt.hidden_dim;
  if (opt.num_queries == 0 || Ch == 0 || opt.v2_height == 0 || opt.v2_width == 0) {
    throw ConfigError("Ppqg: dimensions must be positive");
  }
  proj_in = Conv2d<T>(store, name + ".proj_in", 1, opt.v2_channels, Ch, rng);
  proj_mid = Conv2d<T>(store, name + ".proj_mid", 3, Ch, Ch, rng);
  proj_out = Conv2d<T>(store, name + ".proj_out", 1, Ch, Ch, rng);
  spatial_mlp = Mlp3<T>(store, name + ".spatial_mlp", opt.v2_height * opt.v2_width, opt.mlp_hidden(),
                        opt.num_queries, rng);
  if (opt.use_prototypes) {
    prototypes = store.add(name + ".prototypes", init_normal<T>({opt.num_categories, Ch}, 0.02, rng));
    prompt_q = Linear<T>(store, name + ".prompt.q", Ch, Ch, rng, false);
    prompt_k = Linear<T>(store, name + ".prompt.k", Ch, Ch, rng, false);
    prompt_v = Linear<T>(store, name + ".prompt.v", Ch, Ch, rng, false);
    prompt_norm1 = LayerNorm<T>(store, name + ".prompt.norm1", Ch);
    prompt_ffn = FeedForward<T>(store, name + ".prompt.ffn", Ch, opt.ffn_dim, rng);
    prompt_norm2 = LayerNorm<T>(store, name + ".prompt.norm2", Ch);
    if (opt.use_pac) audio_proj = Linear<T>(store, name + ".audio_proj", opt.audio_channels, Ch, rng);
  }
  if (opt.grouping != Grouping::none) {
    group_q = Linear<T>(store, name + ".group.q", Ch, Ch, rng, false);
    group_k = Linear<T>(store, name + ".group.k", Ch, Ch, rng, false);
    group_v = Linear<T>(store, name + ".group.v", Ch, Ch, rng, false);
    group_o = Linear<T>(store, name + ".group.o", Ch, Ch, rng, false);
  }
}

template <typename T>
typename Ppqg<T>::Aggregated Ppqg<T>::aggregate(const Tensor<T>& v2) const {
  const Shape expect{opt_.v2_height, opt_.v2_width, opt_.v2_channels};
  if (v2.dims() != expect) {
    throw ShapeError("Ppqg: V2 is " + shape_string(v2.dims()) + ", bound to " + shape_string(expect));
  }
  const auto h = proj_out(relu(proj_mid(relu(proj_in(v2)))));
  const auto flat = reshape(h, {opt_.v2_height * opt_.v2_width, opt_.hidden_dim});
  const auto e = transpose(spatial_mlp(transpose(flat)));
  return {flat, e};
}

template <typename T>
Tensor<T> Ppqg<T>::prompt(const Tensor<T>& embeddings, Tensor<T>* weights) const {
  if (!opt_.use_prototypes) return embeddings;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(opt_.hidden_dim));
  const auto attn = softmax(scale(matmul_nt(prompt_q(embeddings), prompt_k(prototypes)), inv_sqrt), 1);
  if (weights != nullptr) *weights = attn;
  const auto x = prompt_norm1(add(embeddings, matmul(attn, prompt_v(prototypes))));
  return prompt_norm2(add(x, prompt_ffn(x)));
}

template <typename T>
Tensor<T> Ppqg<T>::presence_likelihoods(const Tensor<T>& audio) const {
  if (!opt_.use_pac) throw std::logic_error("Ppqg: presence likelihoods need prototypes and PAC");
  const auto pooled = mean_axis(audio_proj(audio), 0);  // [C^h]
  const auto raw = matmul(prototypes, reshape(pooled, {opt_.hidden_dim, 1}));
  return clamp(sigmoid(reshape(raw, {opt_.num_categories})), T(1e-7), T(1) - T(1e-7));
}

template <typename T>
Tensor<T> Ppqg<T>::pac_loss(const Tensor<T>& audio, std::span<const std::uint8_t> presence) const {
  if (!opt_.use_pac) return Tensor<T>::scalar(T(0));
  return presence_bce(presence_likelihoods(audio), presence);
}

template <typename T>
typename Ppqg<T>::Grouped Ppqg<T>::group(const Tensor<T>& prompted, const Tensor<T>& hidden_map,
                                         Rng* noise, DiscreteTrace* trace) const {
  if (opt_.grouping == Grouping::none) return {prompted, {}, {}};
  const auto logits = matmul_nt(group_q(prompted), group_k(hidden_map));
  const auto values = group_v(hidden_map);
  Tensor<T> assignment, context;
  if (opt_.grouping == Grouping::gumbel_hard) {
    assignment = gumbel_softmax_hard(logits, noise, static_cast<T>(opt_.tau), trace);
    context = matmul(normalize_assignment(assignment), values);
  } else {
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(opt_.hidden_dim));
    assignment = softmax(scale(logits, inv_sqrt), 1);
    context = matmul(assignment, values);
  }
  return {add(prompted, group_o(context)), logits, assignment};
}

template <typename T>
typename Ppqg<T>::Output Ppqg<T>::forward(const Tensor<T>& v2, const Tensor<T>& audio,
                                          std::span<const std::uint8_t> presence, Rng* noise,
                                          DiscreteTrace* trace) const {
  const auto agg = aggregate(v2);
  const auto prompted = prompt(agg.embeddings);
  auto grouped = group(prompted, agg.hidden_map, noise, trace);
  return {grouped.queries, pac_loss(audio, presence), agg.hidden_map, grouped.assignment};
}

#define VCT_INSTANTIATE(T)                                                                   \
  template Tensor<T> presence_bce<T>(const Tensor<T>&, std::span<const std::uint8_t>);      \
  template Tensor<T> normalize_assignment<T>(const Tensor<T>&);                             \
  template class Ppqg<T>;

VCT_INSTANTIATE(float)
VCT_INSTANTIATE(double)

#undef VCT_INSTANTIATE

}  // namespace vct
