#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qkd/link.hpp"
#include "qkd/sync_types.hpp"

namespace qkd::sync {

struct SyncOptions {
  double nominal_period_s = 20e-9;   // tau_a as agreed between the parties
  double resolution_s = 1e-12;       // timestamp resolution of the events
  int fft_samples = 1000000;         // N_s, sampled at 4 / tau_a
  int fft_windows = 8;               // magnitude spectra averaged (if data allows)
  double fft_search_halfwidth = 1e-3;  // relative frequency search range
  double fft_peak_threshold = 6.0;     // robust sigmas above the noise floor
  int min_events = 8;
  double trim_fraction = 0.10;       // worst residuals dropped per iteration
  int max_iterations = 40;
  size_t max_fit_events = 400000;
  double max_fit_span_s = 1.0;       // events beyond this span are not fitted
  double correlation_threshold = 6.0;  // robust sigmas for the offset peak
  int max_frames = 256;                // accumulation limit
};

struct PeriodEstimate {
  SyncStatus status = SyncStatus::insufficient;
  double tau0_s = 0;
  double peak_to_noise = 0;
  int windows_used = 0;
};

// Initial period from the FFT of the binned arrival-time series.
PeriodEstimate recover_period_fft(std::span<const link::DetectionEvent> events,
                                  const SyncOptions& opts);

struct PeriodFit {
  SyncStatus status = SyncStatus::insufficient;
  double tau_s = 0;           // refined period
  double anchor_s = 0;        // fitted emission time of relative slot 0
  double residual_sigma_s = 0;
  int iterations = 0;
  std::vector<int64_t> slots;    // per-event relative slot assignment
  std::vector<uint8_t> inlier;   // per-event inlier flag
};

// Least-trimmed-squares refinement: alternates nearest-slot assignment with a
// trimmed least-squares fit of (anchor, period) until assignments are stable.
// The reported residual sigma is corrected for the trimmed tail so it is
// comparable with the injected jitter.
PeriodFit refine_period_lts(std::span<const link::DetectionEvent> events,
                            double tau0_s, const SyncOptions& opts);

// Circular cross-correlation c(lag) = sum_b x[b] * y[(b + lag) mod L].
// FFT-accelerated; outputs are rounded to integers (inputs are integral).
std::vector<double> circular_cross_correlation(std::span<const double> x,
                                               std::span<const double> y);

// Absolute offset recovery from the interleaved correlation code. Builds the
// three-valued detection string over whole frames, reshapes it into an
// (M+1) x L matrix, correlates every row against the public code and converts
// the winning (row, lag) into the absolute slot offset. Frames are
// accumulated one at a time until the peak clears the significance threshold.
SyncSolution recover_offset(std::span<const link::DetectionEvent> events,
                            const PeriodFit& fit, const SyncCodeConfig& code,
                            const SyncOptions& opts);

enum class Admissibility : uint8_t { ok, repeat, reject };

struct AdmissibilityResult {
  Admissibility kind = Admissibility::ok;
  int repetitions = 1;  // frames needed so that sqrt(L * k * eta) >= 10
};

// sqrt(L * eta) >= 10 rule; eta is the per-sync-slot usable detection
// probability of the link.
AdmissibilityResult admissibility_check(int64_t code_length, double eta,
                                        int max_frames = 256);

// Full pipeline: FFT estimate -> LTS refinement -> offset recovery.
SyncSolution acquire(std::span<const link::DetectionEvent> events,
                     const SyncCodeConfig& code, const SyncOptions& opts);

}  // namespace qkd::sync
