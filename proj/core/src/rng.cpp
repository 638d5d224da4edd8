#include "rin/rng.hpp"

#include <cmath>
#include <numbers>

namespace rin::rng {
namespace {

constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// [0,1) from the top 53 bits.
double to_unit(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

uint64_t mix(uint64_t seed, uint64_t stream, uint64_t key, uint64_t index) {
  uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ull);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ key);
  h = splitmix64(h ^ index);
  return h;
}

double uniform(uint64_t seed, RngStream stream, uint64_t key, uint64_t index) {
  return to_unit(mix(seed, static_cast<uint64_t>(stream), key, index));
}

double normal(uint64_t seed, RngStream stream, uint64_t key, uint64_t index) {
  // Two sub-draws per index; u1 kept strictly positive for the log.
  const uint64_t s = static_cast<uint64_t>(stream);
  const double u1 =
      (static_cast<double>(mix(seed, s, key, index * 2) >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = to_unit(mix(seed, s, key, index * 2 + 1));
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double truncated_normal(uint64_t seed, RngStream stream, uint64_t key,
                        uint64_t index, double scale) {
  // Resample rather than clip so the density really is a truncated normal.
  // 64 slots per element; P(all rejected) ~ 0.046^64, unreachable.
  for (uint64_t attempt = 0; attempt < 64; ++attempt) {
    const double v = normal(seed, stream, key, index * 64 + attempt);
    if (std::abs(v) <= 2.0) return v * scale;
  }
  return 0.0;
}

}  // namespace rin::rng
