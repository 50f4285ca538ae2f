#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vct/rng.hpp"

namespace vct {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_categories = 4;  // K
  std::size_t max_objects = 3;
  double offscreen_prob = 0.3;
  double silent_prob = 0.3;
  double noise_sigma = 0.05;

  // Throws ConfigError when a field is out of range.
  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

enum class ShapeKind : std::uint8_t { circle = 0, rectangle = 1, triangle = 2 };

struct SceneObject {
  std::vector<std::uint8_t> mask;  // H×W, 1 inside the object
  std::size_t category = 0;
  bool sounding = false;

  bool operator==(const SceneObject&) const = default;
};

struct Sample {
  std::size_t frame_index = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;  // H×W×3, row-major
  std::vector<SceneObject> objects;
  std::vector<std::uint8_t> audio_presence;  // M*, one entry per category
  // Categories that sound without any on-screen object.
  std::vector<std::size_t> offscreen;

  std::size_t num_categories() const { return audio_presence.size(); }
  // Objects that are both visible and sounding: the segmentation targets.
  std::vector<std::size_t> sounding_objects() const;
  // Per-pixel label at full resolution: category of the sounding object that
  // covers the pixel, or `background` (= K).
  std::vector<std::size_t> label_map() const;

  bool operator==(const Sample&) const = default;
};

// Places 1..max_objects disjoint shapes with distinct categories and
// category-linked colours, marks each sounding with probability
// 1 - silent_prob, and with probability offscreen_prob adds one sounding
// category that has no on-screen object.
Sample generate_scene(Rng& rng, const SceneConfig& cfg, std::size_t frame_index = 0);

// Sample i is generated from Rng(seed).split(i), so the result does not
// depend on generation order.
std::vector<Sample> generate_scenes(const SceneConfig& cfg, std::uint64_t seed, std::size_t count);

// Colour for a category (RGB in [0, 1]).
std::vector<float> category_color(std::size_t category);

}  // namespace vct
