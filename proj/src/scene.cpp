#include "vct/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vct/tensor.hpp"

namespace vct {
namespace {

constexpr int kPlacementRetries = 64;
constexpr float kBackground = 0.2f;

// Up/down isosceles triangle with its apex at the top.
bool in_triangle(double px, double py, double cx, double cy, double r) {
  const double top = cy - r, bottom = cy + r;
  if (py < top || py > bottom) return false;
  const double half = r * (py - top) / (bottom - top);
  return std::abs(px - cx) <= half;
}

std::vector<std::uint8_t> rasterise(ShapeKind kind, double cx, double cy, double r, double aspect,
                                    std::size_t H, std::size_t W) {
  std::vector<std::uint8_t> mask(H * W, 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool inside = false;
      switch (kind) {
        case ShapeKind::circle:
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
          break;
        case ShapeKind::rectangle:
          inside = std::abs(px - cx) <= r && std::abs(py - cy) <= r * aspect;
          break;
        case ShapeKind::triangle:
          inside = in_triangle(px, py, cx, cy, r);
          break;
      }
      mask[y * W + x] = inside ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace

void SceneConfig::validate() const {
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("scene: height and width must be positive multiples of 32, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (num_categories == 0) throw ConfigError("scene: num_categories must be >= 1");
  if (max_objects == 0) throw ConfigError("scene: max_objects must be >= 1");
  if (max_objects > num_categories) {
    throw ConfigError("scene: max_objects may not exceed num_categories (categories are distinct per scene)");
  }
  if (!(offscreen_prob >= 0.0 && offscreen_prob <= 1.0)) throw ConfigError("scene: offscreen_prob outside [0, 1]");
  if (!(silent_prob >= 0.0 && silent_prob <= 1.0)) throw ConfigError("scene: silent_prob outside [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("scene: noise_sigma must be >= 0");
}

std::vector<std::size_t> Sample::sounding_objects() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i].sounding) out.push_back(i);
  return out;
}

std::vector<std::size_t> Sample::label_map() const {
  std::vector<std::size_t> labels(height * width, num_categories());
  for (const auto& obj : objects) {
    if (!obj.sounding) continue;
    for (std::size_t p = 0; p < labels.size(); ++p)
      if (obj.mask[p]) labels[p] = obj.category;
  }
  return labels;
}

std::vector<float> category_color(std::size_t category) {
  static const float palette[8][3] = {
      {0.95f, 0.25f, 0.20f}, {0.20f, 0.80f, 0.30f}, {0.25f, 0.40f, 0.95f}, {0.95f, 0.85f, 0.20f},
      {0.85f, 0.30f, 0.85f}, {0.20f, 0.85f, 0.85f}, {0.95f, 0.60f, 0.15f}, {0.60f, 0.60f, 0.60f},
  };
  if (category < 8) return {palette[category][0], palette[category][1], palette[category][2]};
  // Further categories walk the hue circle.
  const double h = std::fmod(0.61803398875 * static_cast<double>(category), 1.0) * 6.0;
  const double f = h - std::floor(h);
  const float q = static_cast<float>(1.0 - f), t = static_cast<float>(f);
  switch (static_cast<int>(h)) {
    case 0: return {1.f, t, 0.1f};
    case 1: return {q, 1.f, 0.1f};
    case 2: return {0.1f, 1.f, t};
    case 3: return {0.1f, q, 1.f};
    case 4: return {t, 0.1f, 1.f};
    default: return {1.f, 0.1f, q};
  }
}

Sample generate_scene(Rng& rng, const SceneConfig& cfg, std::size_t frame_index) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width, K = cfg.num_categories;
  Sample s;
  s.frame_index = frame_index;
  s.height = H;
  s.width = W;

  std::vector<std::size_t> cats(K);
  std::iota(cats.begin(), cats.end(), 0);
  for (std::size_t i = K; i > 1; --i) std::swap(cats[i - 1], cats[rng.below(i)]);

  const std::size_t wanted = 1 + rng.below(cfg.max_objects);
  std::vector<std::uint8_t> occupied(H * W, 0);
  const double side = static_cast<double>(std::min(H, W));
  for (std::size_t n = 0; n < wanted; ++n) {
    for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
      const auto kind = static_cast<ShapeKind>(rng.below(3));
      const double r = rng.uniform(side / 8.0, side / 4.0);
      const double aspect = rng.uniform(0.6, 1.0);
      const double cx = rng.uniform(r, static_cast<double>(W) - r);
      const double cy = rng.uniform(r, static_cast<double>(H) - r);
      auto mask = rasterise(kind, cx, cy, r, aspect, H, W);
      bool clash = false;
      std::size_t area = 0;
      for (std::size_t p = 0; p < mask.size() && !clash; ++p) {
        clash = mask[p] && occupied[p];
        area += mask[p];
      }
      if (clash || area == 0) continue;
      for (std::size_t p = 0; p < mask.size(); ++p) occupied[p] |= mask[p];
      SceneObject obj;
      obj.mask = std::move(mask);
      obj.category = cats[s.objects.size()];
      s.objects.push_back(std::move(obj));
      break;
    }
  }
  for (auto& obj : s.objects) obj.sounding = !rng.bernoulli(cfg.silent_prob);

  s.audio_presence.assign(K, 0);
  for (const auto& obj : s.objects)
    if (obj.sounding) s.audio_presence[obj.category] = 1;
  if (rng.bernoulli(cfg.offscreen_prob) && s.objects.size() < K) {
    // cats[objects.size()..] are exactly the categories absent from the image.
    const std::size_t free = K - s.objects.size();
    const std::size_t pick = cats[s.objects.size() + rng.below(free)];
    s.offscreen.push_back(pick);
    s.audio_presence[pick] = 1;
  }

  s.image.assign(H * W * 3, kBackground);
  for (const auto& obj : s.objects) {
    auto color = category_color(obj.category);
    for (auto& c : color) c = std::clamp(c + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.f, 1.f);
    for (std::size_t p = 0; p < H * W; ++p)
      if (obj.mask[p])
        for (std::size_t c = 0; c < 3; ++c) s.image[p * 3 + c] = color[c];
  }
  if (cfg.noise_sigma > 0.0) {
    for (auto& v : s.image) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
  }
  return s;
}

std::vector<Sample> generate_scenes(const SceneConfig& cfg, std::uint64_t seed, std::size_t count) {
  std::vector<Sample> out;
  out.reserve(count);
  const Rng root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.split(i);
    out.push_back(generate_scene(rng, cfg, i));
  }
  return out;
}

}  // namespace vct
