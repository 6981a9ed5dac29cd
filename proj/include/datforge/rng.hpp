// Deterministic random number generation.
//
// xoshiro256++ with explicit distribution transforms so that streams are
// bit-reproducible across standard library implementations. std::mt19937
// distributions are unspecified by the standard and must not be used on any
// path that feeds checkpoints or data files.
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace datforge {

std::uint64_t splitmix64(std::uint64_t& state);

// Combine a seed with an index/label hash into a new seed.
std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // [0,1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  float uniform_f(float lo, float hi);

  // Unbiased integer in [0, n). n must be > 0.
  std::int64_t uniform_int(std::int64_t n);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive);

  bool bernoulli(double p);

  // Box-Muller without spare caching; consumes two uniforms per call so the
  // generator state alone fully describes the stream.
  double normal();
  float normal_f(float mean, float stddev);

  // Derive an independent stream from a label; consumes one draw.
  Rng fork(std::string_view label);

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace datforge
