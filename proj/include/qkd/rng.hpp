#pragma once

#include <cstdint>

namespace qkd {

// Counter-based random bits: out = mix(seed, counter). Every draw is a pure
// function of (seed, counter), so any slot of a simulated pulse train can be
// regenerated in O(1) without replaying the stream. Two rounds of the
// splitmix64 finalizer keep the avalanche quality high enough for Monte Carlo
// use while staying platform-independent.
uint64_t hash_mix(uint64_t seed, uint64_t counter);

// Derives an independent stream seed from a master seed and a purpose tag.
uint64_t substream(uint64_t master, uint64_t tag);

// Maps 64 random bits to [0, 1).
double to_unit_double(uint64_t bits);

// Sequential view over a counter stream.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t start_counter = 0)
      : seed_(seed), counter_(start_counter) {}

  uint64_t next() { return hash_mix(seed_, counter_++); }
  double next_double() { return to_unit_double(next()); }

  // Standard normal via Box-Muller; draws two uniforms per pair.
  double next_gaussian();

  uint64_t counter() const { return counter_; }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Draws from Poisson(mean). Exact for all means: inversion by sequential
// search below a cutoff, recursive halving (Poisson additivity) above it.
int poisson_sample(double mean, CounterRng& rng);

// Gaussian z-score from two fixed counter positions (used where random access
// by slot index is required instead of a sequential stream).
double gaussian_at(uint64_t seed, uint64_t counter);

}  // namespace qkd
