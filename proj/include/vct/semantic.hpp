#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vct/heads.hpp"

namespace vct {

// Bilinear resize of one h×w channel to oh×ow with half-pixel centres
// (src = (dst + 0.5) · in / out - 0.5, clamped at the borders).
template <typename T>
std::vector<double> resize_bilinear(std::span<const T> src, std::size_t h, std::size_t w, std::size_t oh,
                                    std::size_t ow);

// Per-category score maps sem[k][p] = Σ_q softmax(class_q)[k] · σ(mask_q)[p]
// for k < K at the prediction grid, [K × H2W2].
template <typename T>
std::vector<double> semantic_scores(const Prediction<T>& pred);

// How a pixel is declared background (label K).
enum class BackgroundRule {
  // best category score < 0.5
  absolute,
  // best category score < 0.5 · Σ_q σ(mask_q) at that pixel
  mask_mass,
};

// Label map at out_h×out_w: scores are upsampled bilinearly and each pixel
// takes its best category unless the background rule fires.
template <typename T>
std::vector<std::size_t> assemble_semantic_map(const Prediction<T>& pred, std::size_t out_h,
                                               std::size_t out_w,
                                               BackgroundRule rule = BackgroundRule::absolute);

}  // namespace vct
