#pragma once

#include <cstdint>

namespace rin {

// Counter-based randomness. Every draw is a pure function of
// (seed, stream, key, index), so replay needs no mutable generator state:
// a checkpoint only has to remember the seed and the step counter.
// Streams partition usage so e.g. timestep draws never collide with noise
// draws that happen to share a counter.
enum class RngStream : uint64_t {
  kParamInit = 1,
  kDataset = 2,
  kBatchIndex = 3,
  kTrainTime = 4,
  kTrainNoise = 5,
  kSelfCondCoin = 6,
  kSampleInit = 7,
  kSampleStepNoise = 8,
};

namespace rng {

// Mixes four 64-bit words into one; splitmix64 finalizer chain.
uint64_t mix(uint64_t seed, uint64_t stream, uint64_t key, uint64_t index);

// Uniform in [0, 1), 53-bit resolution.
double uniform(uint64_t seed, RngStream stream, uint64_t key, uint64_t index);

// Standard normal via Box-Muller; one value per (key, index).
double normal(uint64_t seed, RngStream stream, uint64_t key, uint64_t index);

// Normal(0, scale^2) resampled until |v| <= 2*scale.
double truncated_normal(uint64_t seed, RngStream stream, uint64_t key,
                        uint64_t index, double scale);

}  // namespace rng
}  // namespace rin
