#ifndef NVLAB_RNG_HPP
#define NVLAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

// Counter-based random streams. Every draw is addressed by (seed, tags...),
// so results do not depend on evaluation order and ensemble members can be
// computed in parallel or in any order with identical output.
namespace nvlab::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t key) { return splitmix64(key); }

template <typename... Rest>
std::uint64_t mix(std::uint64_t key, std::uint64_t head, Rest... rest) {
  return mix(splitmix64(key ^ splitmix64(head)), rest...);
}

// uniform in (0, 1]; never returns 0 so it is safe under log()
inline double to_unit(std::uint64_t x) {
  return static_cast<double>((x >> 11) + 1) * 0x1.0p-53;
}

template <typename... Tags>
double uniform(std::uint64_t seed, Tags... tags) {
  return to_unit(mix(seed, static_cast<std::uint64_t>(tags)...));
}

// standard normal via Box-Muller on two derived uniforms
template <typename... Tags>
double normal(std::uint64_t seed, Tags... tags) {
  const std::uint64_t k = mix(seed, static_cast<std::uint64_t>(tags)...);
  const double u1 = to_unit(k);
  const double u2 = to_unit(splitmix64(k ^ 0x5851f42d4c957f2dull));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace nvlab::rng

#endif
