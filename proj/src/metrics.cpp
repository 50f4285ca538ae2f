#include "vct/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace vct {
namespace {

void check_labels(std::span<const std::size_t> pred, std::span<const std::size_t> gt, std::size_t K) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("metrics: prediction has " + std::to_string(pred.size()) +
                                " pixels, ground truth " + std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] > K || gt[i] > K) throw std::invalid_argument("metrics: label out of range");
}

double f_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, double beta2) {
  const bool pred_empty = tp + fp == 0, gt_empty = tp + fn == 0;
  if (pred_empty && gt_empty) return 1.0;
  if (pred_empty || gt_empty) return 0.0;
  return f_measure(double(tp) / double(tp + fp), double(tp) / double(tp + fn), beta2);
}

double mean_valid(const std::vector<double>& v) {
  double s = 0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n == 0 ? 1.0 : s / double(n);
}

}  // namespace

double f_measure(double precision, double recall, double beta2) {
  const double den = beta2 * precision + recall;
  return den == 0.0 ? 0.0 : (1.0 + beta2) * precision * recall / den;
}

double fscore(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, double beta2) {
  if (pred.size() != gt.size()) throw std::invalid_argument("fscore: size mismatch");
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] && gt[i];
    fp += pred[i] && !gt[i];
    fn += !pred[i] && gt[i];
  }
  return f_from_counts(tp, fp, fn, beta2);
}

JaccardResult jaccard(std::span<const std::size_t> pred, std::span<const std::size_t> gt, std::size_t K) {
  MetricAccumulator acc(K);
  acc.add(pred, gt);
  const auto r = acc.report();
  return {r.per_category_iou, r.m_j};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json iou = nlohmann::json::array();
  for (double v : per_category_iou) iou.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : per_sample) per.push_back({{"m_j", s.m_j}, {"m_f", s.m_f}});
  return {{"per_category_iou", iou}, {"m_j", m_j},           {"m_f", m_f},
          {"m_f_global", m_f_global},  {"m_f_mean", m_f_mean}, {"n_samples", n_samples},
          {"per_sample", per}};
}

MetricAccumulator::MetricAccumulator(std::size_t num_categories)
    : K_(num_categories), inter_(num_categories, 0), uni_(num_categories, 0) {}

void MetricAccumulator::add(std::span<const std::size_t> pred, std::span<const std::size_t> gt) {
  check_labels(pred, gt, K_);
  std::vector<std::uint64_t> inter(K_, 0), uni(K_, 0);
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred[i], g = gt[i];
    if (p == g) {
      if (p < K_) ++inter[p], ++uni[p];
    } else {
      if (p < K_) ++uni[p];
      if (g < K_) ++uni[g];
    }
    const bool pf = p < K_, gf = g < K_;
    tp += pf && gf;
    fp += pf && !gf;
    fn += !pf && gf;
  }
  std::vector<double> iou(K_, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < K_; ++k) {
    inter_[k] += inter[k];
    uni_[k] += uni[k];
    if (uni[k] > 0) iou[k] = double(inter[k]) / double(uni[k]);
  }
  tp_ += tp;
  fp_ += fp;
  fn_ += fn;
  samples_.push_back({mean_valid(iou), f_from_counts(tp, fp, fn, kFBeta2)});
}

EvalReport MetricAccumulator::report() const {
  EvalReport r;
  r.per_category_iou.assign(K_, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < K_; ++k)
    if (uni_[k] > 0) r.per_category_iou[k] = double(inter_[k]) / double(uni_[k]);
  r.m_j = mean_valid(r.per_category_iou);
  r.m_f_global = f_from_counts(tp_, fp_, fn_, kFBeta2);
  double s = 0;
  for (const auto& x : samples_) s += x.m_f;
  r.m_f_mean = samples_.empty() ? 1.0 : s / double(samples_.size());
  r.m_f = r.m_f_mean;
  r.n_samples = samples_.size();
  r.per_sample = samples_;
  return r;
}

}  // namespace vct
