#include "qkd/rng.hpp"

#include <cmath>

namespace qkd {

namespace {

// splitmix64 finalizer (Stafford mix 13 variant).
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

uint64_t hash_mix(uint64_t seed, uint64_t counter) {
  uint64_t z = seed + kGolden * (counter + 1);
  return mix64(mix64(z) ^ (seed >> 1));
}

uint64_t substream(uint64_t master, uint64_t tag) {
  return mix64(master ^ mix64(tag + kGolden));
}

double to_unit_double(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

double CounterRng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int poisson_sample(double mean, CounterRng& rng) {
  if (mean <= 0.0) return 0;
  if (mean > 60.0) {
    // Poisson(a+b) = Poisson(a) + Poisson(b)
    double half = mean * 0.5;
    return poisson_sample(half, rng) + poisson_sample(mean - half, rng);
  }
  double limit = std::exp(-mean);
  double prod = rng.next_double();
  int k = 0;
  while (prod > limit) {
    prod *= rng.next_double();
    ++k;
  }
  return k;
}

double gaussian_at(uint64_t seed, uint64_t counter) {
  double u1 = 1.0 - to_unit_double(hash_mix(seed, counter * 2));
  double u2 = to_unit_double(hash_mix(seed, counter * 2 + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace qkd
