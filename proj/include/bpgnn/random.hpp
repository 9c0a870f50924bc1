#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bpgnn {

using Rng = std::mt19937_64;

/// Derives a child seed from a root seed, a substream name and an index.
/// Used so that every consumer of randomness (pgm, traces, init, batch,
/// translator, ...) draws from its own reproducible stream.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                             std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view name,
                    std::uint64_t index = 0) {
  return Rng(substream_seed(root, name, index));
}

/// 64-bit FNV-1a; stable across platforms, used for config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace bpgnn
