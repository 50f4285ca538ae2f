#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace vct {

// F-measure weight on precision; < 1 favours recall.
inline constexpr double kFBeta2 = 0.3;

// (1 + β²) P R / (β² P + R), 0 when both are 0.
double f_measure(double precision, double recall, double beta2 = kFBeta2);

// Binary F-score of two foreground masks: empty/empty = 1, exactly one
// empty = 0.
double fscore(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, double beta2 = kFBeta2);

struct JaccardResult {
  std::vector<double> per_category_iou;  // NaN where the union is empty
  double m_j = 0.0;                      // mean over categories with nonzero union
};

// Labels lie in [0, K]; K is background.
JaccardResult jaccard(std::span<const std::size_t> pred, std::span<const std::size_t> gt, std::size_t K);

struct SampleScore {
  double m_j = 0.0;
  double m_f = 0.0;
};

struct EvalReport {
  std::vector<double> per_category_iou;
  double m_j = 0.0;
  double m_f = 0.0;  // equals m_f_mean
  double m_f_global = 0.0;
  double m_f_mean = 0.0;
  std::size_t n_samples = 0;
  std::vector<SampleScore> per_sample;

  nlohmann::json to_json() const;
};

// Dataset-level accumulation: IoU from global confusion counts, F both from
// global foreground counts and as a per-frame mean.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t num_categories);

  void add(std::span<const std::size_t> pred, std::span<const std::size_t> gt);
  EvalReport report() const;

 private:
  std::size_t K_;
  std::vector<std::uint64_t> inter_, uni_;
  std::uint64_t tp_ = 0, fp_ = 0, fn_ = 0;
  std::vector<SampleScore> samples_;
};

}  // namespace vct
