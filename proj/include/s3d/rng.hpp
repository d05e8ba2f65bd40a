#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace s3d {

// SplitMix64. The stream started at state `s` emits mix(s + k*kGamma) for
// k = 1, 2, ...; the counter form below gives random access to element
// `index` of that stream, so results never depend on evaluation order.
//
//   state  <- state + 0x9E3779B97F4A7C15
//   z      <- state
//   z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB
//   output <- z ^ (z >> 31)
//
// Uniform reals use the top 53 bits offset by half an ulp, so they lie in
// the open interval (0, 1).
namespace rng {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Element `index` (0-based) of the stream seeded with `seed`.
constexpr std::uint64_t at(std::uint64_t seed, std::uint64_t index) {
  return mix(seed + (index + 1) * kGamma);
}

constexpr double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform_at(std::uint64_t seed, std::uint64_t index) {
  return to_unit(at(seed, index));
}

// Child seed for a tuple of keys, e.g. derive(train_seed, {step, sample}).
inline std::uint64_t derive(std::uint64_t seed,
                            std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = mix(seed ^ 0x5EED5EED5EED5EEDULL);
  for (std::uint64_t k : keys) s = at(s, k);
  return s;
}

}  // namespace rng

// Sequential view over the same stream.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += rng::kGamma;
    return rng::mix(state_);
  }

  double uniform() { return rng::to_unit(next()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes two draws.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) by rejection-free multiply-shift.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace s3d
