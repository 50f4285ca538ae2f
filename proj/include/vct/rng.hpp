#pragma once

#include <cstdint>

namespace vct {

// Counter-based generator. The i-th draw of stream s under seed k is
//
//   key    = mix64(k ^ mix64(s + 0x9E3779B97F4A7C15))
//   out_i  = mix64(key + i * 0x9E3779B97F4A7C15),   i = 1, 2, ...
//
// where mix64 is the SplitMix64 finaliser. Outputs depend only on
// (seed, stream, draw index), so results are identical across platforms and
// independent of how streams are scheduled across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller; always consumes exactly two draws.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child generator keyed by (this stream's key, id). Does not advance this
  // generator.
  Rng split(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z);

 private:
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t key);

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vct
