#pragma once

#include <filesystem>
#include <vector>

#include "vct/scene.hpp"

namespace vct {

struct Dataset {
  SceneConfig scene;
  std::vector<Sample> samples;
};

// Directory layout: manifest.json plus one VCT1 file per image
// (image_NNNN.vct, f32 H×W×3) and per object mask (mask_NNNN_MM.vct, f32 H×W
// of 0/1). The manifest holds the scene config, per-sample file names,
// categories, sounding flags, M* and off-screen categories.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

// Throws IoError for unreadable files and FormatError when the manifest and
// tensors disagree; messages name the offending file.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace vct
