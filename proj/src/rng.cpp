#include "datforge/rng.hpp"

#include <cmath>
#include <numbers>

#include "datforge/common.hpp"

namespace datforge {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) {
  // Expand through splitmix64 as recommended for xoshiro seeding.
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

float Rng::uniform_f(float lo, float hi) {
  return static_cast<float>(uniform(static_cast<double>(lo), static_cast<double>(hi)));
}

std::int64_t Rng::uniform_int(std::int64_t n) {
  if (n <= 0) raise(ErrorKind::argument, "uniform_int: n must be positive, got ", n);
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::int64_t>(v % un);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
  if (hi_inclusive < lo) raise(ErrorKind::argument, "uniform_int: empty range");
  return lo + uniform_int(hi_inclusive - lo + 1);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;  // guard log(0)
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

float Rng::normal_f(float mean, float stddev) {
  return mean + stddev * static_cast<float>(normal());
}

Rng Rng::fork(std::string_view label) {
  return Rng(seed_mix(next_u64(), fnv1a64(label)));
}

}  // namespace datforge
