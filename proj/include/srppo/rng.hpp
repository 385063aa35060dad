// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>
#include <random>
#include <span>

namespace srppo {

// Stream identifiers for the counter-based seed derivation. Each pipeline
// stage draws from its own stream, so inserting or skipping a stage never
// shifts the random numbers another stage sees.
enum class Stream : std::uint64_t {
  world = 1,
  prompts = 2,
  pretrain_data = 3,
  pretrain_shuffle = 4,
  demos = 5,
  sft_shuffle = 6,
  sft_extended_shuffle = 7,
  ppo_prompts = 8,
  ppo_rollout = 9,
  ppo_minibatch = 10,
  policy_init = 11,
  eval = 12,
  heldout = 13,
  extra_demos = 14,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// seed(global, stream, counter) = mix(mix(global) ^ mix(stream << 32 | counter)).
inline std::uint64_t derive_seed(std::uint64_t global, Stream stream, std::uint64_t counter = 0) {
  const std::uint64_t tag = (static_cast<std::uint64_t>(stream) << 40) ^ counter;
  return splitmix64(splitmix64(global) ^ splitmix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t counter) {
  return splitmix64(splitmix64(parent) ^ splitmix64(counter + 0x632BE59BD9B4E019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits; independent of the standard
  // library's distribution implementations.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    // Box-Muller on two fresh uniforms, no cached second value.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  // Inverse-CDF draw from probabilities that sum to one.
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    int last_nonzero = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last_nonzero = static_cast<int>(i);
      if (u < acc) return last_nonzero;
    }
    return last_nonzero;
  }

  // Fisher-Yates over 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[below(i)]);
    return idx;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace srppo
