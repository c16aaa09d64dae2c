#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "qkd/keyrate.hpp"
#include "qkd/optics.hpp"
#include "qkd/sync_types.hpp"

namespace qkd::link {

// Device and channel parameters. Defaults model the reference hardware:
// 50 MHz repetition, 4.6 dB receiver insertion loss, 75% detector efficiency,
// 25 Hz dark counts, 40 ns dead time, 70 ps FWHM timing jitter.
struct LinkConfig {
  double repetition_period_s = 20e-9;            // tau_a
  optics::IntensitySetting intensities{};
  double fiber_length_km = 0.0;
  double fiber_attenuation_db_per_km = 0.199;
  double decoder_insertion_loss_db = 4.6;
  double detector_efficiency = 0.75;
  double dark_count_rate_hz = 25.0;              // per detector
  double dead_time_s = 40e-9;
  double timing_jitter_sigma_s = 70e-12 / 2.355; // FWHM 70 ps -> sigma
  double im_dynamic_extinction_db = 18.0;
  bool decoy_leakage_enabled = false;            // nu contaminated by IM leakage
  double polarization_extinction_db = 23.0;
  double clock_skew_ppm = 0.0;                   // emission period seen by Bob
  double timestamp_resolution_s = 1e-12;

  double channel_loss_db() const {
    return fiber_length_km * fiber_attenuation_db_per_km;
  }
  // Channel * receiver * detector transmittance.
  double total_transmittance() const;
  // Wrong-detector probability from the polarization extinction ratio.
  double extinction_error_probability() const;
  // Emission period in the receiver clock: tau_a * (1 + skew).
  double receiver_period_s() const {
    return repetition_period_s * (1.0 + clock_skew_ppm * 1e-6);
  }
  void validate() const;  // throws std::invalid_argument
};

enum class DetectorId : uint8_t { Z0 = 0, Z1 = 1, X0 = 2, X1 = 3 };

inline optics::Basis detector_basis(DetectorId d) {
  return static_cast<uint8_t>(d) < 2 ? optics::Basis::Z : optics::Basis::X;
}
inline uint8_t detector_bit(DetectorId d) {
  return static_cast<uint8_t>(d) & 1;
}

// What Alice loaded into one clock slot.
struct PulseRecord {
  uint64_t index = 0;
  optics::Bb84Symbol symbol{};
  bool is_decoy = false;
  bool is_sync = false;
  bool is_x_probe = false;            // public X-basis feedback probe slot
  int64_t sync_code_position = -1;    // in [0, L) when is_sync
};

// One registered click. true_slot is simulation ground truth for test oracles
// (-1 for dark counts); algorithms must not read it.
struct DetectionEvent {
  int64_t timestamp_ticks = 0;   // units of timestamp_resolution_s
  DetectorId detector = DetectorId::Z0;
  int64_t true_slot = -1;

  double time_s(double resolution_s) const {
    return static_cast<double>(timestamp_ticks) * resolution_s;
  }
};

// Polarization drift of the channel.
struct ChannelDriftModel {
  enum class Mode { static_channel, random_walk, scrambler_steps };
  Mode mode = Mode::static_channel;
  double step_interval_s = 300.0;
  double step_magnitude_rad = 0.15;
  uint64_t seed = 0;
};

// Piecewise-constant drift unitary; monotone-in-time sampling.
class DriftSampler {
 public:
  explicit DriftSampler(const ChannelDriftModel& model);
  const optics::PolarizationUnitary& at_time(double t_s);
  // Time of the next unitary change after t_s (infinity for static mode).
  double next_change_time(double t_s) const;

 private:
  void advance_to(int64_t step);
  ChannelDriftModel model_;
  int64_t current_step_ = 0;
  optics::PolarizationUnitary current_;
};

// Deterministic pulse train: every per-slot choice is a pure function of
// (seed, slot index), so any slot can be regenerated in O(1) during sifting
// or replay without materializing the train.
class PulseTrain {
 public:
  PulseTrain(const optics::IntensitySetting& intensities,
             const sync::SyncCodeConfig& code, double x_probe_fraction,
             uint64_t seed);

  PulseRecord record_at(uint64_t slot) const;
  bool is_sync_slot(uint64_t slot) const {
    return slot % period_ == 0;
  }
  const sync::SyncCodeConfig& code() const { return code_; }
  double x_probe_fraction() const { return x_probe_fraction_; }

  // Materializes [first, first+count). count must cover at
  // least one frame.
  std::vector<PulseRecord> build(uint64_t first, uint64_t count) const;

  // Hot-path pieces used by the transmitter.
  bool is_decoy_at(uint64_t slot) const;

 private:
  sync::SyncCodeConfig code_;
  double x_probe_fraction_;
  uint64_t period_;  // M + 1
  uint64_t seed_class_, seed_symbol_, seed_probe_;
  uint64_t thr_mu_, thr_probe_;
  uint64_t thr_pz63_;
};

std::vector<PulseRecord> build_pulse_train(
    const optics::IntensitySetting& intensities,
    const sync::SyncCodeConfig& code, double x_probe_fraction, uint64_t count,
    uint64_t seed);

struct TransmitStats {
  uint64_t slots = 0;
  uint64_t clicks = 0;       // detector events before dead-time filtering
  uint64_t dark_clicks = 0;
  uint64_t dead_time_drops = 0;
};

// Full transmitter + receiver simulation. Keeps per-detector dead-time state
// across calls so consecutive slot ranges behave like one stream.
class LinkSimulator {
 public:
  LinkSimulator(const LinkConfig& config, const sync::SyncCodeConfig& code,
                double x_probe_fraction, uint64_t seed);

  const PulseTrain& train() const { return train_; }
  const LinkConfig& config() const { return config_; }
  double t0_s() const { return t0_s_; }         // drawn from the run seed
  double emission_time_s(uint64_t slot) const {
    return t0_s_ + static_cast<double>(slot) * config_.receiver_period_s();
  }

  void set_drift_model(const ChannelDriftModel& model);
  void set_compensation(const optics::PolarizationUnitary& u);
  const optics::PolarizationUnitary& compensation() const { return comp_; }

  // Simulates slots [first, first+count), appending time-sorted events.
  void transmit_range(uint64_t first, uint64_t count,
                      std::vector<DetectionEvent>& out,
                      TransmitStats* stats = nullptr);

 private:
  struct RouteTable {
    uint64_t cum[4][4];  // per symbol, cumulative detector thresholds
  };
  RouteTable make_table(const optics::PolarizationUnitary& drift) const;

  LinkConfig config_;
  PulseTrain train_;
  DriftSampler drift_;
  optics::PolarizationUnitary comp_;
  double t0_s_ = 0;
  uint64_t seed_detect_, seed_count_, seed_route_, seed_jitter_, seed_dark_;
  uint64_t thr_click_mu_, thr_click_nu_;
  double lambda_mu_, lambda_nu_;
  int64_t last_kept_ticks_[4];
};

// One-shot transmission of [0, count).
std::vector<DetectionEvent> transmit(const LinkConfig& config,
                                     const sync::SyncCodeConfig& code,
                                     double x_probe_fraction,
                                     const ChannelDriftModel& drift,
                                     const optics::PolarizationUnitary& comp,
                                     uint64_t count, uint64_t seed,
                                     TransmitStats* stats = nullptr);

// Timestamp -> slot mapping derived from a sync solution.
struct SlotMapping {
  double t0_s = 0;
  double tau_s = 20e-9;

  int64_t slot_of(double t_s) const {
    return static_cast<int64_t>(std::llround((t_s - t0_s) / tau_s));
  }
  static SlotMapping from_solution(const sync::SyncSolution& s) {
    return {s.t0_estimate_s, s.tau_b_s};
  }
};

// Sifting outcome: key counts plus feedback tallies and bookkeeping. Every
// event lands in exactly one category.
struct SiftResult {
  keyrate::SiftedCounts counts;
  uint64_t fb_sync_z_total = 0, fb_sync_z_err = 0;
  uint64_t fb_probe_x_total = 0, fb_probe_x_err = 0;
  uint64_t kept = 0;
  uint64_t basis_discarded = 0;
  uint64_t double_click_slots = 0;
  uint64_t double_click_events = 0;
  uint64_t sync_routed = 0;
  uint64_t probe_routed = 0;
  uint64_t unassigned = 0;

  void add(const SiftResult& other);
};

// Assigns events to slots (nearest slot within half a period), pairs them
// with Alice's records and accumulates counts. Slots with more than one
// event are discarded. Events mapping outside [0, total_slots) count as
// unassigned.
SiftResult sift(const PulseTrain& train, std::span<const DetectionEvent> events,
                const SlotMapping& mapping, double resolution_s,
                uint64_t total_slots);

}  // namespace qkd::link
