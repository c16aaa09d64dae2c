#include "qkd/link.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qkd::link {

using optics::Basis;
using optics::PolarizationUnitary;

namespace {

constexpr double kTwoPow64 = 18446744073709551616.0;

inline uint64_t prob_to_u64(double p) {
  if (p <= 0.0) return 0;
  double v = p * kTwoPow64;
  if (v >= kTwoPow64 - 2048.0) return std::numeric_limits<uint64_t>::max();
  return static_cast<uint64_t>(v);
}

inline uint64_t prob_to_u63(double p) {
  if (p <= 0.0) return 0;
  double v = p * 0x1p63;
  if (v >= 0x1p63 - 1024.0) return std::numeric_limits<uint64_t>::max();
  return static_cast<uint64_t>(v);
}

enum SeedTag : uint64_t {
  kTagClass = 1,
  kTagSymbol = 2,
  kTagProbe = 3,
  kTagDetect = 4,
  kTagCount = 5,
  kTagRoute = 6,
  kTagJitter = 7,
  kTagDark = 8,
  kTagT0 = 9,
};

}  // namespace

double LinkConfig::total_transmittance() const {
  double loss_db = channel_loss_db() + decoder_insertion_loss_db;
  return std::pow(10.0, -loss_db / 10.0) * detector_efficiency;
}

double LinkConfig::extinction_error_probability() const {
  return 1.0 / (1.0 + std::pow(10.0, polarization_extinction_db / 10.0));
}

void LinkConfig::validate() const {
  intensities.validate();
  if (repetition_period_s <= 0.0)
    throw std::invalid_argument("repetition_period_s must be > 0");
  if (fiber_length_km < 0.0 || fiber_attenuation_db_per_km < 0.0 ||
      decoder_insertion_loss_db < 0.0)
    throw std::invalid_argument("losses must be >= 0");
  if (!(detector_efficiency > 0.0 && detector_efficiency <= 1.0))
    throw std::invalid_argument("detector_efficiency must lie in (0, 1]");
  if (dark_count_rate_hz < 0.0 || dead_time_s < 0.0 ||
      timing_jitter_sigma_s < 0.0)
    throw std::invalid_argument("rates and times must be >= 0");
  if (timestamp_resolution_s <= 0.0)
    throw std::invalid_argument("timestamp_resolution_s must be > 0");
  if (polarization_extinction_db <= 0.0 || im_dynamic_extinction_db <= 0.0)
    throw std::invalid_argument("extinction ratios must be > 0 dB");
}

// ---------------------------------------------------------------------------
// Drift

DriftSampler::DriftSampler(const ChannelDriftModel& model) : model_(model) {}

void DriftSampler::advance_to(int64_t step) {
  if (model_.mode == ChannelDriftModel::Mode::static_channel) return;
  if (step < current_step_) {
    // Deterministic replay from the start.
    current_step_ = 0;
    current_ = PolarizationUnitary::identity();
  }
  if (model_.mode == ChannelDriftModel::Mode::scrambler_steps) {
    // Voltage ramp on the scrambler: accumulating differential H/V phase.
    current_ = PolarizationUnitary::phase_delay(
        model_.step_magnitude_rad * static_cast<double>(step));
    current_step_ = step;
    return;
  }
  // Random walk: compose one random rotation per elapsed step.
  while (current_step_ < step) {
    ++current_step_;
    uint64_t s = substream(model_.seed, static_cast<uint64_t>(current_step_));
    CounterRng rng(s);
    double a = rng.next_double() * 2.0 * M_PI;
    double b = rng.next_double() * 2.0 * M_PI;
    current_ = PolarizationUnitary::from_euler(a, model_.step_magnitude_rad, b) *
               current_;
  }
}

const PolarizationUnitary& DriftSampler::at_time(double t_s) {
  if (model_.mode == ChannelDriftModel::Mode::static_channel) return current_;
  int64_t step = t_s <= 0.0 ? 0
                            : static_cast<int64_t>(t_s / model_.step_interval_s);
  advance_to(step);
  return current_;
}

double DriftSampler::next_change_time(double t_s) const {
  if (model_.mode == ChannelDriftModel::Mode::static_channel)
    return std::numeric_limits<double>::infinity();
  int64_t step = t_s <= 0.0 ? 0
                            : static_cast<int64_t>(t_s / model_.step_interval_s);
  return static_cast<double>(step + 1) * model_.step_interval_s;
}

// ---------------------------------------------------------------------------
// Pulse train

PulseTrain::PulseTrain(const optics::IntensitySetting& intensities,
                       const sync::SyncCodeConfig& code,
                       double x_probe_fraction, uint64_t seed)
    : code_(code),
      x_probe_fraction_(x_probe_fraction),
      period_(static_cast<uint64_t>(code.random_bits_per_code_bit) + 1) {
  code_.validate();
  intensities.validate();
  if (x_probe_fraction < 0.0 || x_probe_fraction >= 1.0)
    throw std::invalid_argument("x_probe_fraction must lie in [0, 1)");
  seed_class_ = substream(seed, kTagClass);
  seed_symbol_ = substream(seed, kTagSymbol);
  seed_probe_ = substream(seed, kTagProbe);
  thr_mu_ = prob_to_u64(intensities.p_mu);
  thr_probe_ = prob_to_u64(x_probe_fraction);
  thr_pz63_ = prob_to_u63(intensities.p_z);
}

bool PulseTrain::is_decoy_at(uint64_t slot) const {
  return hash_mix(seed_class_, slot) >= thr_mu_;
}

PulseRecord PulseTrain::record_at(uint64_t slot) const {
  PulseRecord rec;
  rec.index = slot;
  rec.is_decoy = is_decoy_at(slot);
  if (slot % period_ == 0) {
    rec.is_sync = true;
    rec.sync_code_position =
        static_cast<int64_t>((slot / period_) % static_cast<uint64_t>(code_.code_length));
    rec.symbol.basis = Basis::Z;
    rec.symbol.bit = code_.code[rec.sync_code_position] > 0 ? 0 : 1;
    return rec;
  }
  uint64_t u = hash_mix(seed_symbol_, slot);
  uint8_t bit = static_cast<uint8_t>(u & 1);
  if (thr_probe_ != 0 && hash_mix(seed_probe_, slot) < thr_probe_) {
    rec.is_x_probe = true;
    rec.symbol = {Basis::X, bit};
    return rec;
  }
  rec.symbol.basis = (u >> 1) < thr_pz63_ ? Basis::Z : Basis::X;
  rec.symbol.bit = bit;
  return rec;
}

std::vector<PulseRecord> PulseTrain::build(uint64_t first,
                                           uint64_t count) const {
  if (count < static_cast<uint64_t>(code_.frame_length()))
    throw std::invalid_argument("pulse train must cover at least one frame");
  std::vector<PulseRecord> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) out.push_back(record_at(first + i));
  return out;
}

std::vector<PulseRecord> build_pulse_train(
    const optics::IntensitySetting& intensities,
    const sync::SyncCodeConfig& code, double x_probe_fraction, uint64_t count,
    uint64_t seed) {
  PulseTrain train(intensities, code, x_probe_fraction, seed);
  return train.build(0, count);
}

// ---------------------------------------------------------------------------
// Transmission

LinkSimulator::LinkSimulator(const LinkConfig& config,
                             const sync::SyncCodeConfig& code,
                             double x_probe_fraction, uint64_t seed)
    : config_(config),
      train_(config.intensities, code, x_probe_fraction, seed),
      drift_(ChannelDriftModel{}) {
  config_.validate();
  seed_detect_ = substream(seed, kTagDetect);
  seed_count_ = substream(seed, kTagCount);
  seed_route_ = substream(seed, kTagRoute);
  seed_jitter_ = substream(seed, kTagJitter);
  seed_dark_ = substream(seed, kTagDark);

  // t0 models propagation and trigger latency, unknown to the receiver.
  t0_s_ = to_unit_double(hash_mix(substream(seed, kTagT0), 0)) * 1e6 *
          config_.repetition_period_s;

  double eta = config_.total_transmittance();
  double nu_eff = config_.intensities.nu;
  if (config_.decoy_leakage_enabled) {
    nu_eff += config_.intensities.mu *
              std::pow(10.0, -config_.im_dynamic_extinction_db / 10.0);
  }
  lambda_mu_ = config_.intensities.mu * eta;
  lambda_nu_ = nu_eff * eta;
  thr_click_mu_ = prob_to_u64(1.0 - std::exp(-lambda_mu_));
  thr_click_nu_ = prob_to_u64(1.0 - std::exp(-lambda_nu_));
  for (auto& t : last_kept_ticks_) t = std::numeric_limits<int64_t>::min() / 2;
}

void LinkSimulator::set_drift_model(const ChannelDriftModel& model) {
  drift_ = DriftSampler(model);
}

void LinkSimulator::set_compensation(const PolarizationUnitary& u) {
  comp_ = u;
}

LinkSimulator::RouteTable LinkSimulator::make_table(
    const PolarizationUnitary& drift) const {
  RouteTable table{};
  PolarizationUnitary chain = comp_ * drift;
  double p_err = config_.extinction_error_probability();
  for (int s = 0; s < 4; ++s) {
    optics::Bb84Symbol sym{static_cast<Basis>(s >> 1),
                           static_cast<uint8_t>(s & 1)};
    optics::PolarizationState psi =
        optics::apply_unitary(chain, optics::symbol_to_state(sym));
    auto mix = [&](Basis b, double& p0, double& p1) {
      auto [q0, q1] =
          optics::measurement_probabilities(psi, b, PolarizationUnitary::identity());
      p0 = q0 * (1.0 - p_err) + q1 * p_err;
      p1 = q1 * (1.0 - p_err) + q0 * p_err;
    };
    double pz0, pz1, px0, px1;
    mix(Basis::Z, pz0, pz1);
    mix(Basis::X, px0, px1);
    // Passive 50/50 basis choice.
    double acc = 0.0;
    const double probs[4] = {0.5 * pz0, 0.5 * pz1, 0.5 * px0, 0.5 * px1};
    for (int d = 0; d < 4; ++d) {
      acc += probs[d];
      table.cum[s][d] = prob_to_u64(acc);
    }
    table.cum[s][3] = std::numeric_limits<uint64_t>::max();
  }
  return table;
}

void LinkSimulator::transmit_range(uint64_t first, uint64_t count,
                                   std::vector<DetectionEvent>& out,
                                   TransmitStats* stats) {
  const double tau = config_.receiver_period_s();
  const double res = config_.timestamp_resolution_s;
  const double jitter = config_.timing_jitter_sigma_s;
  const int64_t dead_ticks =
      static_cast<int64_t>(std::llround(config_.dead_time_s / res));

  std::vector<DetectionEvent> per_det[4];

  uint64_t slot = first;
  const uint64_t end = first + count;
  while (slot < end) {
    // Drift is piecewise constant; process one constant segment at a time.
    double t_seg = emission_time_s(slot);
    RouteTable table = make_table(drift_.at_time(t_seg));
    double t_next = drift_.next_change_time(t_seg);
    uint64_t seg_end = end;
    if (std::isfinite(t_next)) {
      double boundary = std::ceil((t_next - t0_s_) / tau);
      if (boundary < static_cast<double>(end)) {
        seg_end = std::max(slot + 1, static_cast<uint64_t>(boundary));
        seg_end = std::min(seg_end, end);
      }
    }

    for (; slot < seg_end; ++slot) {
      bool decoy = train_.is_decoy_at(slot);
      uint64_t u = hash_mix(seed_detect_, slot);
      uint64_t thr = decoy ? thr_click_nu_ : thr_click_mu_;
      if (u >= thr) continue;

      // At least one photon survives to the measurement stage: draw the
      // zero-truncated Poisson count, then route each photon.
      double lambda = decoy ? lambda_nu_ : lambda_mu_;
      double uc = to_unit_double(hash_mix(seed_count_, slot));
      int k = 1;
      {
        double denom = -std::expm1(-lambda);  // P(k >= 1)
        double pk = std::exp(-lambda) * lambda;  // P(k = 1)
        double acc = pk / denom;
        while (uc > acc && k < 32) {
          ++k;
          pk *= lambda / k;
          acc += pk / denom;
        }
      }

      PulseRecord rec = train_.record_at(slot);
      int sym = (static_cast<int>(rec.symbol.basis) << 1) | rec.symbol.bit;
      uint32_t hit_mask = 0;
      for (int i = 0; i < k; ++i) {
        uint64_t r = hash_mix(seed_route_, slot * 32 + static_cast<uint64_t>(i));
        int d = 0;
        while (d < 3 && r >= table.cum[sym][d]) ++d;
        hit_mask |= 1u << d;
      }

      double t_emit = t0_s_ + static_cast<double>(slot) * tau;
      for (int d = 0; d < 4; ++d) {
        if (!(hit_mask & (1u << d))) continue;
        double t = t_emit;
        if (jitter > 0.0) {
          t += jitter * gaussian_at(seed_jitter_, slot * 4 +
                                                      static_cast<uint64_t>(d));
        }
        DetectionEvent ev;
        ev.timestamp_ticks = static_cast<int64_t>(std::llround(t / res));
        ev.detector = static_cast<DetectorId>(d);
        ev.true_slot = static_cast<int64_t>(slot);
        per_det[d].push_back(ev);
        if (stats) ++stats->clicks;
      }
    }
  }

  // Dark counts: uniform Poisson process per detector over the range window.
  double t_lo = emission_time_s(first);
  double t_hi = emission_time_s(end);
  if (config_.dark_count_rate_hz > 0.0 && t_hi > t_lo) {
    for (int d = 0; d < 4; ++d) {
      uint64_t s = substream(seed_dark_,
                             first * 4 + static_cast<uint64_t>(d));
      CounterRng rng(s);
      int n = poisson_sample(config_.dark_count_rate_hz * (t_hi - t_lo), rng);
      std::vector<int64_t> ticks(static_cast<size_t>(n));
      for (auto& tk : ticks) {
        double t = t_lo + rng.next_double() * (t_hi - t_lo);
        tk = static_cast<int64_t>(std::llround(t / res));
      }
      std::sort(ticks.begin(), ticks.end());
      auto& dst = per_det[d];
      size_t signal_n = dst.size();
      for (int64_t tk : ticks) {
        DetectionEvent ev;
        ev.timestamp_ticks = tk;
        ev.detector = static_cast<DetectorId>(d);
        ev.true_slot = -1;
        dst.push_back(ev);
      }
      std::inplace_merge(dst.begin(), dst.begin() + signal_n, dst.end(),
                         [](const DetectionEvent& a, const DetectionEvent& b) {
                           return a.timestamp_ticks < b.timestamp_ticks;
                         });
      if (stats) stats->dark_clicks += static_cast<uint64_t>(n);
    }
  }

  // Dead-time filter per detector, then merge into the global stream.
  size_t merged_from = out.size();
  for (int d = 0; d < 4; ++d) {
    for (const DetectionEvent& ev : per_det[d]) {
      if (ev.timestamp_ticks - last_kept_ticks_[d] < dead_ticks) {
        if (stats) ++stats->dead_time_drops;
        continue;
      }
      last_kept_ticks_[d] = ev.timestamp_ticks;
      out.push_back(ev);
    }
  }
  std::sort(out.begin() + merged_from, out.end(),
            [](const DetectionEvent& a, const DetectionEvent& b) {
              if (a.timestamp_ticks != b.timestamp_ticks)
                return a.timestamp_ticks < b.timestamp_ticks;
              return a.detector < b.detector;
            });
  if (stats) stats->slots += count;
}

std::vector<DetectionEvent> transmit(const LinkConfig& config,
                                     const sync::SyncCodeConfig& code,
                                     double x_probe_fraction,
                                     const ChannelDriftModel& drift,
                                     const optics::PolarizationUnitary& comp,
                                     uint64_t count, uint64_t seed,
                                     TransmitStats* stats) {
  LinkSimulator sim(config, code, x_probe_fraction, seed);
  sim.set_drift_model(drift);
  sim.set_compensation(comp);
  std::vector<DetectionEvent> out;
  sim.transmit_range(0, count, out, stats);
  return out;
}

// ---------------------------------------------------------------------------
// Sifting

void SiftResult::add(const SiftResult& other) {
  counts.n_z_mu += other.counts.n_z_mu;
  counts.n_z_nu += other.counts.n_z_nu;
  counts.n_x_mu += other.counts.n_x_mu;
  counts.n_x_nu += other.counts.n_x_nu;
  counts.m_z_mu += other.counts.m_z_mu;
  counts.m_z_nu += other.counts.m_z_nu;
  counts.m_x_mu += other.counts.m_x_mu;
  counts.m_x_nu += other.counts.m_x_nu;
  fb_sync_z_total += other.fb_sync_z_total;
  fb_sync_z_err += other.fb_sync_z_err;
  fb_probe_x_total += other.fb_probe_x_total;
  fb_probe_x_err += other.fb_probe_x_err;
  kept += other.kept;
  basis_discarded += other.basis_discarded;
  double_click_slots += other.double_click_slots;
  double_click_events += other.double_click_events;
  sync_routed += other.sync_routed;
  probe_routed += other.probe_routed;
  unassigned += other.unassigned;
}

SiftResult sift(const PulseTrain& train,
                std::span<const DetectionEvent> events,
                const SlotMapping& mapping, double resolution_s,
                uint64_t total_slots) {
  SiftResult r;
  size_t i = 0;
  const size_t n = events.size();
  while (i < n) {
    int64_t slot = mapping.slot_of(events[i].time_s(resolution_s));
    size_t j = i + 1;
    while (j < n &&
           mapping.slot_of(events[j].time_s(resolution_s)) == slot)
      ++j;
    size_t clicks = j - i;
    if (slot < 0 || slot >= static_cast<int64_t>(total_slots)) {
      r.unassigned += clicks;
      i = j;
      continue;
    }
    if (clicks > 1) {
      ++r.double_click_slots;
      r.double_click_events += clicks;
      i = j;
      continue;
    }
    const DetectionEvent& ev = events[i];
    PulseRecord rec = train.record_at(static_cast<uint64_t>(slot));
    Basis det_basis = detector_basis(ev.detector);
    uint8_t det_bit = detector_bit(ev.detector);
    if (rec.is_sync) {
      ++r.sync_routed;
      if (det_basis == Basis::Z) {
        ++r.fb_sync_z_total;
        if (det_bit != rec.symbol.bit) ++r.fb_sync_z_err;
      }
    } else if (rec.is_x_probe) {
      ++r.probe_routed;
      if (det_basis == Basis::X) {
        ++r.fb_probe_x_total;
        if (det_bit != rec.symbol.bit) ++r.fb_probe_x_err;
      }
    } else if (det_basis != rec.symbol.basis) {
      ++r.basis_discarded;
    } else {
      ++r.kept;
      bool err = det_bit != rec.symbol.bit;
      if (det_basis == Basis::Z) {
        (rec.is_decoy ? r.counts.n_z_nu : r.counts.n_z_mu) += 1.0;
        if (err) (rec.is_decoy ? r.counts.m_z_nu : r.counts.m_z_mu) += 1.0;
      } else {
        (rec.is_decoy ? r.counts.n_x_nu : r.counts.n_x_mu) += 1.0;
        if (err) (rec.is_decoy ? r.counts.m_x_nu : r.counts.m_x_mu) += 1.0;
      }
    }
    i = j;
  }
  return r;
}

}  // namespace qkd::link
