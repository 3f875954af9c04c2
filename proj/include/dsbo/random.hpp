#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dsbo {

// Uniform double in [0, 1) from the top 53 bits. Unlike
// std::uniform_real_distribution this is fixed across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller, one draw per call.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit_uniform(rng);  // (0, 1]
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Uniform integer in [0, n) by rejection; fixed across standard libraries.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, purpose, index). Different purposes keep
// e.g. sampling and noise generation from sharing state.
inline std::mt19937_64 derived_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ splitmix64(purpose)) + index));
}

namespace stream_purpose {
inline constexpr std::uint64_t kWorkerSampling = 1;
inline constexpr std::uint64_t kQuadraticNoise = 2;
inline constexpr std::uint64_t kQuadraticInstance = 3;
inline constexpr std::uint64_t kPartition = 4;
inline constexpr std::uint64_t kSplit = 5;
inline constexpr std::uint64_t kSyntheticData = 6;
}  // namespace stream_purpose

}  // namespace dsbo
