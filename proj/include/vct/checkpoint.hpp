#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vct/config.hpp"
#include "vct/nn.hpp"

namespace vct {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

struct Checkpoint {
  ExperimentConfig config;
  std::size_t iteration = 0;
  NamedTensors parameters;
  // Optimizer moments keyed by parameter name, plus the step count.
  NamedTensors adam_m;
  NamedTensors adam_v;
  std::uint64_t adam_step = 0;
  // Free-form trainer state (e.g. best metric so far).
  nlohmann::json extra = nlohmann::json::object();
};

// Single-file layout (integers little-endian):
//   "VCTC" | u32 version (1) | u64 manifest length | manifest JSON |
//   concatenated VCT1 tensors
// The manifest holds the config snapshot, iteration, optimizer step, extra
// state and an index of {name, offset, length} into the tensor section.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of the current parameter values (deep copies).
NamedTensors snapshot(const ParameterStore<float>& store);

// Copies values into the store. Every name must be present with the same
// shape and no extras are allowed; violations raise FormatError.
void restore(ParameterStore<float>& store, const NamedTensors& values);

}  // namespace vct
