#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qkd::sync {

// Public correlation code interleaved into the pulse train: one code bit
// every (random_bits_per_code_bit + 1) slots, cycled over the code length.
// A full frame spans frame_length() = (M+1)*L slots.
struct SyncCodeConfig {
  int64_t code_length = 50000;       // L
  int random_bits_per_code_bit = 9;  // M
  std::vector<int8_t> code;          // entries in {+1, -1}, size L

  int64_t frame_length() const {
    return (static_cast<int64_t>(random_bits_per_code_bit) + 1) * code_length;
  }
  void validate() const;  // throws std::invalid_argument

  // Seeded random +-1 code. Rejects candidates whose peak off-peak circular
  // autocorrelation exceeds 5*sqrt(L).
  static SyncCodeConfig random_code(int64_t length, int random_bits_per_code_bit,
                                    uint64_t seed);
  // Maximal-length sequence (LFSR) code, length 2^order - 1.
  static SyncCodeConfig mls_code(int order, int random_bits_per_code_bit);

  double max_off_peak_autocorrelation() const;
};

enum class SyncStatus : uint8_t {
  locked,
  no_lock,        // no significant spectral peak
  ambiguous,      // two correlation peaks within 3 dB
  failed,         // correlation below threshold after all frames
  insufficient,   // not enough events / span for the stage
};

const char* to_string(SyncStatus status);

// Recovered timing: arrival period, absolute slot offset and quality figures.
struct SyncSolution {
  SyncStatus status = SyncStatus::insufficient;
  double tau_b_s = 0;            // recovered period
  int64_t offset_slots = 0;      // absolute slot index of the first detection
  double t0_estimate_s = 0;      // emission time of slot 0 in receiver clock
  double correlation_peak = 0;
  double correlation_noise_sigma = 0;
  double residual_sigma_s = 0;   // timing residual after period refinement
  int frames_used = 0;

  bool locked() const { return status == SyncStatus::locked; }
  std::string to_json() const;
};

}  // namespace qkd::sync
