#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qkd/config.hpp"
#include "qkd/feedback.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/link.hpp"
#include "qkd/sync.hpp"

namespace qkd::harness {

struct BlockTrace {
  int index = 0;
  double time_s = 0;
  double qber_z = -1, qber_x = -1;  // -1 while the estimate is unavailable
  std::array<double, 4> phases{};
  bool feedback_acted = false;
  bool sync_ok = true;
};

struct RunSummary {
  sync::SyncSolution sync;
  keyrate::SiftedCounts aggregate;
  link::SiftResult totals;
  keyrate::KeyRateReport report;
  std::vector<BlockTrace> trace;
  uint64_t slots_simulated = 0;
  int blocks = 0;
  int sync_degraded_blocks = 0;
  bool feedback_stalled = false;
  double wall_seconds = 0;  // not serialized (outputs must be reproducible)
};

// End-to-end pipeline: acquisition, per-block transmission, sifting,
// feedback, aggregation, finite-key analysis. Writes summary.json,
// qber_trace.csv and keyrate.json into config.output_dir (plus events.bin
// when dump_events is set).
RunSummary run_simulate(const RunConfig& config, bool write_files = true);

// Re-sift a dumped event stream with the deterministic train regenerated from
// the config; no simulation involved.
keyrate::KeyRateReport replay_keyrate(const RunConfig& config,
                                      const std::string& events_path,
                                      double acquisition_t_s);

// Standalone finite-key evaluation of a counts file. Writes keyrate.json and
// keyrate_summary.csv when out_dir is non-empty.
keyrate::KeyRateReport run_keyrate(const CountsFile& file,
                                   const std::string& out_dir);

std::string summary_to_json(const RunConfig& config, const RunSummary& summary);
std::string keyrate_summary_csv(const CountsFile& file,
                                const keyrate::KeyRateReport& report);

// Per-slot probability that a sync slot yields a usable (Z-detector) click;
// drives the admissibility rule and the bench's frame budgeting.
double sync_usable_click_probability(const link::LinkConfig& config);

struct SyncBenchRow {
  double loss_db = 0;
  double eta_usable = 0;
  double sqrt_l_eta = 0;
  int prescribed_frames = 1;
  int trials = 0;
  int locked = 0;
  int locked_single_frame = 0;
  int exact = 0;  // locked runs whose per-event mapping matched ground truth
  double mean_frames_used = 0;
  double max_fft_period_error_s = 0;
  double mean_residual_sigma_s = 0;
};

// Monte Carlo synchronization benchmark over a channel-loss sweep.
std::vector<SyncBenchRow> run_sync_bench(const RunConfig& base,
                                         const std::vector<double>& losses_db,
                                         int trials, const std::string& out_csv);

// Replay benchmark: run the sync pipeline once over a dumped event stream.
sync::SyncSolution run_sync_replay(const RunConfig& config,
                                   const std::string& dump_path);

struct FeedbackBenchResult {
  double mean_qber_z_on = 0, mean_qber_x_on = 0;
  double final_qber_on = 0, final_qber_off = 0;
  double max_recovery_s = 0;
  std::vector<double> recovery_times_s;
  bool stalled = false;
};

// Paired feedback-on / feedback-off runs over the same drift realization.
// Writes qber_trace_on.csv and qber_trace_off.csv plus a JSON summary.
FeedbackBenchResult run_feedback_bench(const RunConfig& config,
                                       const std::string& out_dir);

void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace qkd::harness
