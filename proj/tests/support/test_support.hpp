#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vct/config.hpp"
#include "vct/grad_check.hpp"
#include "vct/rng.hpp"
#include "vct/tensor.hpp"

namespace vct::testing {

Tensor<double> random_tensor(const Shape& dims, Rng& rng, double stddev = 1.0);
// Entries uniform in [lo, hi].
Tensor<double> uniform_tensor(const Shape& dims, Rng& rng, double lo, double hi);
// Normal entries pushed at least `gap` away from every point in `kinks`.
Tensor<double> away_from(const Shape& dims, Rng& rng, std::vector<double> kinks, double gap);

// sum(y ⊙ W) for a fixed random W, so every output element carries an O(1)
// weight into the scalar.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed);

struct OpCheck {
  std::string name;
  GradCheckResult result;
};

// Central-difference checks of every differentiable primitive and nn
// building block for one seed.
std::vector<OpCheck> primitive_grad_checks(std::uint64_t seed);

// Smallest model that still exercises every stage: 32×32 images, K = 3,
// N = 4, C^h = 8, D = 1.
ExperimentConfig tiny_config();

// Gradient check of scene -> features -> PPQG -> decoder -> total loss in
// float64 with all discrete choices frozen at the base point. Checks up to
// `per_tensor` elements of every parameter.
GradCheckResult composed_grad_check(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t per_tensor,
                                    double eps = 1e-3);

}  // namespace vct::testing
