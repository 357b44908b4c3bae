#pragma once

// Counter-keyed random streams. Every consumer of randomness owns a stream
// derived from (seed, key...), so results never depend on scheduling or on
// how many worker threads ran.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace posefit {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// FNV-1a, used to fold string identities (object class names) into seeds.
inline std::uint64_t fnv1a(const char* s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (; *s; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 0x100000001B3ull;
  }
  return h;
}

// One deterministic random stream. Construction mixes the seed with an
// arbitrary list of keys (phase tag, iteration, sample index, ...); two
// streams with different keys are statistically independent.
//
// Draw order is part of the reproducibility contract: gaussian() consumes two
// uniforms on the first call of a pair and zero on the second.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed + detail::kGolden)) {}

  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) : Rng(seed) {
    std::uint64_t n = 1;
    for (std::uint64_t k : keys) {
      state_ = detail::mix64(state_ ^ detail::mix64(k + n * detail::kGolden));
      ++n;
    }
  }

  std::uint64_t next() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Phase tags for filter/synthesis streams. Fixed values: changing them
// changes every seeded result.
enum class RngPhase : std::uint64_t {
  kInit = 1,
  kResample = 2,
  kDiffuse = 3,
  kScene = 4,
  kPrior = 5,
  kSensor = 6,
};

inline std::uint64_t phase_key(RngPhase p) { return static_cast<std::uint64_t>(p); }

}  // namespace posefit
