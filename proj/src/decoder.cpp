#include "vct/decoder.hpp"

#include <cmath>

#include "vct/semantic.hpp"

namespace vct {

template <typename T>
const Tensor<T>& FeatureSet<T>::level(std::size_t i) const {
  switch (i) {
    case 2: return v2;
    case 3: return v3;
    case 4: return v4;
    case 5: return v5;
    default: throw std::out_of_range("FeatureSet::level: no level " + std::to_string(i));
  }
}

template <typename T>
FeatureSet<T> to_features(const FeatureBundle& b) {
  return {cast<T>(b.v2), cast<T>(b.v3), cast<T>(b.v4), cast<T>(b.v5), cast<T>(b.audio)};
}

const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::audio: return "audio";
    case BlockKind::v5: return "v5";
    case BlockKind::v4: return "v4";
    case BlockKind::v3: return "v3";
  }
  return "?";
}

std::vector<BlockKind> block_schedule(std::size_t repeats) {
  std::vector<BlockKind> s;
  for (std::size_t d = 0; d < repeats; ++d) {
    s.insert(s.end(), {BlockKind::audio, BlockKind::v5, BlockKind::v4, BlockKind::v3});
  }
  s.push_back(BlockKind::audio);
  return s;
}

template <typename T>
AttentionMask compute_attention_mask(std::span<const T> mask_logits, std::size_t queries, std::size_t h,
                                     std::size_t w, std::size_t th, std::size_t tw) {
  if (mask_logits.size() != queries * h * w) throw ShapeError("compute_attention_mask: logits size mismatch");
  AttentionMask m{queries, th * tw, std::vector<std::uint8_t>(queries * th * tw, 0)};
  std::vector<double> prob(h * w);
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t p = 0; p < h * w; ++p) prob[p] = 1.0 / (1.0 + std::exp(-double(mask_logits[q * h * w + p])));
    const auto r = resize_bilinear(std::span<const double>(prob), h, w, th, tw);
    bool any = false;
    for (std::size_t p = 0; p < r.size(); ++p) {
      const bool on = r[p] >= 0.5;
      m.allowed[q * m.cols + p] = on;
      any |= on;
    }
    if (!any) std::fill_n(m.allowed.begin() + q * m.cols, m.cols, std::uint8_t{1});
  }
  return m;
}

template <typename T>
Tensor<T> sine_position_encoding(std::size_t h, std::size_t w, std::size_t width) {
  if (width % 4 != 0) throw ConfigError("sine_position_encoding: width must be divisible by 4");
  const std::size_t half = width / 2;
  const double two_pi = 2.0 * M_PI, eps = 1e-6;
  std::vector<T> out(h * w * width);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double ey = (static_cast<double>(y) + 1) / (static_cast<double>(h) + eps) * two_pi;
      const double ex = (static_cast<double>(x) + 1) / (static_cast<double>(w) + eps) * two_pi;
      T* row = &out[(y * w + x) * width];
      for (std::size_t j = 0; j < half; ++j) {
        const double dim_t = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(half));
        const double vy = ey / dim_t, vx = ex / dim_t;
        row[j] = static_cast<T>(j % 2 == 0 ? std::sin(vy) : std::cos(vy));
        row[half + j] = static_cast<T>(j % 2 == 0 ? std::sin(vx) : std::cos(vx));
      }
    }
  return Tensor<T>({h * w, width}, std::move(out));
}

template <typename T>
DecoderBlock<T>::DecoderBlock(ParameterStore<T>& store, const std::string& name, std::size_t width,
                              std::size_t heads, std::size_t ffn_dim, Rng& rng)
    : cross(store, name + ".cross", width, heads, rng),
      self(store, name + ".self", width, heads, rng),
      norm_cross(store, name + ".norm_cross", width),
      norm_self(store, name + ".norm_self", width),
      norm_ffn(store, name + ".norm_ffn", width),
      ffn(store, name + ".ffn", width, ffn_dim, rng) {}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(const Tensor<T>& queries, const Tensor<T>& key, const Tensor<T>& value,
                                      const AttentionMask* mask,
                                      std::vector<Tensor<T>>* cross_weights) const {
  auto x = norm_cross(add(queries, cross(queries, key, value, mask, cross_weights)));
  x = norm_self(add(x, self(x, x, x)));
  return norm_ffn(add(x, ffn(x)));
}

DecoderOptions decoder_options(const ExperimentConfig& cfg) {
  DecoderOptions o;
  o.hidden_dim = cfg.model.hidden_dim;
  o.heads = cfg.model.heads;
  o.ffn_dim = cfg.model.ffn_dim;
  o.repeats = cfg.model.decoder_repeats;
  o.audio_channels = cfg.model.encoder.audio_channels;
  const auto& vc = cfg.model.encoder.visual_channels;
  o.level_channels = {vc[1], vc[2], vc[3]};
  return o;
}

template <typename T>
AvDecoder<T>::AvDecoder(ParameterStore<T>& store, const std::string& name, const DecoderOptions& opt,
                        Rng& rng)
    : opt_(opt), schedule_(block_schedule(opt.repeats)) {
  const std::size_t Ch = opt.hidden_dim;
  audio_proj_ = Linear<T>(store, name + ".audio_proj", opt.audio_channels, Ch, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    level_proj_[i] = Linear<T>(store, name + ".level_proj" + std::to_string(i + 3), opt.level_channels[i], Ch, rng);
  }
  level_embed_ = store.add(name + ".level_embed", init_normal<T>({3, Ch}, 0.02, rng));
  for (std::size_t b = 0; b < schedule_.size(); ++b) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(b), Ch, opt.heads, opt.ffn_dim, rng);
  }
}

template <typename T>
std::vector<Prediction<T>> AvDecoder<T>::forward(const Tensor<T>& queries, const FeatureSet<T>& features,
                                                 const PredictionHead<T>& head, DiscreteTrace* trace) const {
  const std::size_t h2 = features.v2.dim(0), w2 = features.v2.dim(1);
  const auto pixel = head.pixel_embedding(features.v2);

  struct Memory {
    Tensor<T> key, value;
    std::size_t h = 0, w = 0;
  };
  std::array<Memory, 3> memory;  // V3, V4, V5
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& v = features.level(i + 3);
    const std::size_t h = v.dim(0), w = v.dim(1);
    const std::size_t idx[] = {i};
    const auto embed = reshape(gather_rows(level_embed_, std::span<const std::size_t>(idx)), {opt_.hidden_dim});
    const auto value = add_row(level_proj_[i](reshape(v, {h * w, v.dim(2)})), embed);
    memory[i] = {add(value, sine_position_encoding<T>(h, w, opt_.hidden_dim)), value, h, w};
  }
  const auto audio = audio_proj_(features.audio);

  std::vector<Prediction<T>> preds;
  preds.reserve(schedule_.size() + 1);
  Tensor<T> q = queries;
  preds.push_back(head(q, pixel, h2, w2));
  for (std::size_t b = 0; b < schedule_.size(); ++b) {
    const BlockKind kind = schedule_[b];
    if (kind == BlockKind::audio) {
      q = blocks_[b](q, audio, audio);
    } else {
      const Memory& mem = memory[kind == BlockKind::v3 ? 0 : kind == BlockKind::v4 ? 1 : 2];
      AttentionMask mask;
      if (trace != nullptr && trace->replaying()) {
        const auto& e = trace->next();
        mask = {q.dim(0), mem.h * mem.w, std::vector<std::uint8_t>(e.choices.begin(), e.choices.end())};
      } else {
        mask = compute_attention_mask(preds.back().mask_logits.values(), q.dim(0), h2, w2, mem.h, mem.w);
        if (trace != nullptr) trace->record(std::vector<std::int64_t>(mask.allowed.begin(), mask.allowed.end()));
      }
      q = blocks_[b](q, mem.key, mem.value, &mask);
    }
    preds.push_back(head(q, pixel, h2, w2));
  }
  return preds;
}

#define VCT_INSTANTIATE(T)                                                                         \
  template struct FeatureSet<T>;                                                                  \
  template FeatureSet<T> to_features<T>(const FeatureBundle&);                                    \
  template AttentionMask compute_attention_mask<T>(std::span<const T>, std::size_t, std::size_t,   \
                                                   std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> sine_position_encoding<T>(std::size_t, std::size_t, std::size_t);            \
  template struct DecoderBlock<T>;                                                                \
  template class AvDecoder<T>;

VCT_INSTANTIATE(float)
VCT_INSTANTIATE(double)

#undef VCT_INSTANTIATE

}  // namespace vct
