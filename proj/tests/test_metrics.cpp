#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "vct/metrics.hpp"
#include "vct/rng.hpp"

using namespace vct;

namespace {

std::vector<std::uint8_t> bits(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t K) {
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = rng.below(K + 1);
  return v;
}

}  // namespace

TEST_CASE("F-measure closed forms") {
  CHECK(std::abs(f_measure(1.0, 0.5) - 0.8125) <= 1e-12);
  CHECK(std::abs(f_measure(0.5, 1.0) - 1.3 * 0.5 / 1.15) <= 1e-12);
  CHECK(f_measure(0.5, 1.0) == doctest::Approx(0.5652).epsilon(1e-4));
  CHECK(f_measure(1.0, 1.0) == 1.0);
  CHECK(f_measure(0.0, 0.0) == 0.0);
  CHECK(kFBeta2 == 0.3);

  // P = 1, R = 0.5 from masks
  CHECK(std::abs(fscore(bits({1, 1, 0, 0}), bits({1, 1, 1, 1})) - 0.8125) <= 1e-12);
  CHECK(std::abs(fscore(bits({1, 1, 1, 1}), bits({1, 1, 0, 0})) - 1.3 * 0.5 / 1.15) <= 1e-12);
  CHECK(fscore(bits({0, 0, 0}), bits({0, 0, 0})) == 1.0);
  CHECK(fscore(bits({0, 1, 0}), bits({0, 0, 0})) == 0.0);
  CHECK(fscore(bits({0, 0, 0}), bits({0, 1, 0})) == 0.0);
  CHECK(fscore(bits({1, 0, 1}), bits({1, 0, 1})) == 1.0);
  CHECK_THROWS_AS(fscore(bits({1}), bits({1, 0})), std::invalid_argument);
}

TEST_CASE("jaccard closed forms") {
  const std::size_t K = 2;
  // pred ⊂ gt, areas 2 and 4
  const std::vector<std::size_t> gt{0, 0, 0, 0, 2, 2}, pred{0, 0, 2, 2, 2, 2};
  const auto r = jaccard(pred, gt, K);
  CHECK(r.per_category_iou[0] == 0.5);
  CHECK(std::isnan(r.per_category_iou[1]));
  CHECK(r.m_j == 0.5);

  const auto same = jaccard(gt, gt, K);
  CHECK(same.m_j == 1.0);
  const std::vector<std::size_t> a{0, 0, 2, 2}, b{2, 2, 0, 0};
  CHECK(jaccard(a, b, K).per_category_iou[0] == 0.0);
  CHECK(jaccard(a, b, K).m_j == 0.0);
  CHECK_THROWS_AS(jaccard(a, gt, K), std::invalid_argument);
  const std::vector<std::size_t> out_of_range{0, 3, 0, 0};
  CHECK_THROWS_AS(jaccard(out_of_range, a, K), std::invalid_argument);
}

TEST_CASE("perfect predictions score one") {
  Rng rng(1);
  MetricAccumulator acc(4);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_labels(rng, 50, 4);
    acc.add(x, x);
  }
  const std::vector<std::size_t> silent(50, 4);
  acc.add(silent, silent);
  const auto r = acc.report();
  CHECK(r.m_j == 1.0);
  CHECK(r.m_f == 1.0);
  CHECK(r.m_f_global == 1.0);
  CHECK(r.n_samples == 11);
  for (const auto& s : r.per_sample) {
    CHECK(s.m_j == 1.0);
    CHECK(s.m_f == 1.0);
  }
}

TEST_CASE("dataset metrics agree with a brute-force confusion matrix") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 1 + rng.below(4), frames = 1 + rng.below(4), n = 1 + rng.below(30);
    std::vector<std::vector<std::size_t>> P, G;
    MetricAccumulator acc(K);
    std::vector<std::vector<double>> conf(K + 1, std::vector<double>(K + 1, 0.0));
    double f_sum = 0;
    for (std::size_t f = 0; f < frames; ++f) {
      P.push_back(random_labels(rng, n, K));
      G.push_back(random_labels(rng, n, K));
      acc.add(P.back(), G.back());
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        conf[P[f][i]][G[f][i]] += 1;
        tp += P[f][i] < K && G[f][i] < K;
        fp += P[f][i] < K && G[f][i] == K;
        fn += P[f][i] == K && G[f][i] < K;
      }
      double fs;
      if (tp + fp == 0 && tp + fn == 0) fs = 1;
      else if (tp + fp == 0 || tp + fn == 0) fs = 0;
      else {
        const double pr = tp / (tp + fp), rc = tp / (tp + fn);
        fs = pr + rc == 0 ? 0 : 1.3 * pr * rc / (0.3 * pr + rc);
      }
      f_sum += fs;
    }
    double mj = 0;
    std::size_t valid = 0;
    const auto r = acc.report();
    for (std::size_t k = 0; k < K; ++k) {
      double row = 0, col = 0;
      for (std::size_t j = 0; j <= K; ++j) {
        row += conf[k][j];
        col += conf[j][k];
      }
      const double uni = row + col - conf[k][k];
      if (uni == 0) {
        CHECK(std::isnan(r.per_category_iou[k]));
        continue;
      }
      CHECK(r.per_category_iou[k] == doctest::Approx(conf[k][k] / uni).epsilon(1e-14));
      mj += conf[k][k] / uni;
      ++valid;
    }
    CHECK(r.m_j == doctest::Approx(valid ? mj / double(valid) : 1.0).epsilon(1e-14));
    CHECK(r.m_f_mean == doctest::Approx(f_sum / double(frames)).epsilon(1e-14));
    CHECK(r.m_f == r.m_f_mean);
    CHECK((r.m_j >= 0.0 && r.m_j <= 1.0));
    CHECK((r.m_f_global >= 0.0 && r.m_f_global <= 1.0));
  }
}

TEST_CASE("metrics are invariant to pixel order") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40, K = 3;
    auto p = random_labels(rng, n, K), g = random_labels(rng, n, K);
    const auto before = jaccard(p, g, K);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    std::vector<std::size_t> p2(n), g2(n);
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] = p[order[i]];
      g2[i] = g[order[i]];
    }
    const auto after = jaccard(p2, g2, K);
    CHECK(after.m_j == before.m_j);
    MetricAccumulator a(K), b(K);
    a.add(p, g);
    b.add(p2, g2);
    CHECK(a.report().m_f == b.report().m_f);
  }
}

TEST_CASE("report JSON keeps fixed keys and nulls empty categories") {
  MetricAccumulator acc(3);
  const std::vector<std::size_t> p{0, 0, 3, 3}, g{0, 3, 3, 3};
  acc.add(p, g);
  const auto j = acc.report().to_json();
  for (const char* key : {"per_category_iou", "m_j", "m_f", "m_f_global", "m_f_mean", "n_samples", "per_sample"})
    CHECK(j.contains(key));
  CHECK(j["per_category_iou"][0].get<double>() == 0.5);
  CHECK(j["per_category_iou"][1].is_null());
  CHECK(j["n_samples"].get<int>() == 1);
  CHECK(MetricAccumulator(2).report().n_samples == 0);
}
