#include "qkd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "qkd/event_io.hpp"

namespace qkd::harness {

using feedback::CompensatorState;
using feedback::FeedbackController;
using feedback::QberEstimate;
using link::DetectionEvent;
using link::LinkSimulator;
using link::SiftResult;
using link::SlotMapping;
using nlohmann::ordered_json;

namespace {

constexpr int kEstimateWindowBlocks = 3;

// Slots needed by the acquisition stage: FFT windows plus the frame budget
// prescribed by the admissibility rule (one spare frame).
uint64_t acquisition_slots(const RunConfig& cfg) {
  uint64_t fft_slots = static_cast<uint64_t>(cfg.sync_opts.fft_windows) *
                       static_cast<uint64_t>(cfg.sync_opts.fft_samples) / 4;
  double eta = sync_usable_click_probability(cfg.link);
  auto adm = sync::admissibility_check(cfg.sync_code_length, eta,
                                       cfg.sync_opts.max_frames);
  uint64_t frames = static_cast<uint64_t>(adm.repetitions) + 1;
  uint64_t nf = static_cast<uint64_t>(cfg.sync_code_length) *
                (static_cast<uint64_t>(cfg.sync_random_bits) + 1);
  return std::max(fft_slots, frames * nf);
}

// Trimmed least-squares refit of the slot mapping against one block of
// events. Applied identically by the live pipeline and replay so that both
// produce bit-identical slot assignments.
bool refit_mapping(std::span<const DetectionEvent> events, double resolution_s,
                   SlotMapping& mapping) {
  const size_t n = events.size();
  if (n < 32) return false;
  std::vector<double> t(n);
  std::vector<int64_t> slot(n);
  std::vector<uint8_t> in(n, 1);
  for (size_t i = 0; i < n; ++i) {
    t[i] = events[i].time_s(resolution_s);
    slot[i] = mapping.slot_of(t[i]);
  }
  double c = mapping.t0_s, tau = mapping.tau_s;
  for (int iter = 0; iter < 3; ++iter) {
    double sum_n = 0, sum_t = 0;
    size_t cnt = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!in[i]) continue;
      sum_n += static_cast<double>(slot[i]);
      sum_t += t[i];
      ++cnt;
    }
    if (cnt < 16) return false;
    double mn = sum_n / static_cast<double>(cnt);
    double mt = sum_t / static_cast<double>(cnt);
    double sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!in[i]) continue;
      double dn = static_cast<double>(slot[i]) - mn;
      sxx += dn * dn;
      sxy += dn * (t[i] - mt);
    }
    if (sxx <= 0.0) return false;
    tau = sxy / sxx;
    c = mt - tau * mn;
    if (!(tau > 0.0)) return false;

    std::vector<double> absres(n);
    for (size_t i = 0; i < n; ++i)
      absres[i] = std::abs(t[i] - (c + static_cast<double>(slot[i]) * tau));
    std::vector<double> sorted = absres;
    size_t keep = std::max<size_t>(16, n - n / 10);
    keep = std::min(keep, n);
    std::nth_element(sorted.begin(), sorted.begin() + (keep - 1), sorted.end());
    double cut = sorted[keep - 1];
    for (size_t i = 0; i < n; ++i) {
      in[i] = absres[i] <= cut ? 1 : 0;
      slot[i] = static_cast<int64_t>(std::llround((t[i] - c) / tau));
    }
  }
  // Sanity: the refit must stay on the same grid.
  size_t cnt = 0;
  double ss = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!in[i]) continue;
    double r = t[i] - (c + static_cast<double>(slot[i]) * tau);
    ss += r * r;
    ++cnt;
  }
  if (cnt * 2 < n) return false;
  if (std::sqrt(ss / static_cast<double>(cnt)) > 0.25 * tau) return false;
  if (std::abs(tau - mapping.tau_s) > 1e-6 * mapping.tau_s) return false;
  mapping.t0_s = c;
  mapping.tau_s = tau;
  return true;
}

// Fingerprint of everything that affects the results (output location does
// not).
uint64_t config_fingerprint(const RunConfig& cfg) {
  RunConfig canon = cfg;
  canon.output_dir.clear();
  canon.dump_events = false;
  return event_io::fnv1a64(run_config_to_json(canon));
}

struct FbWindow {
  std::deque<std::array<uint64_t, 4>> blocks;  // z_tot, z_err, x_tot, x_err

  void push(const SiftResult& r) {
    blocks.push_back({r.fb_sync_z_total, r.fb_sync_z_err, r.fb_probe_x_total,
                      r.fb_probe_x_err});
    while (blocks.size() > kEstimateWindowBlocks) blocks.pop_front();
  }
  QberEstimate estimate(uint64_t min_samples) const {
    uint64_t s[4] = {0, 0, 0, 0};
    for (const auto& b : blocks)
      for (int i = 0; i < 4; ++i) s[i] += b[i];
    return feedback::estimate_qber(s[0], s[1], s[2], s[3], min_samples);
  }
};

std::string trace_csv(const std::vector<BlockTrace>& trace) {
  std::string out = "time_s,qber_z,qber_x,p1,p2,p3,p4\n";
  char line[256];
  for (const auto& row : trace) {
    std::snprintf(line, sizeof line, "%.6f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f\n",
                  row.time_s, row.qber_z, row.qber_x, row.phases[0],
                  row.phases[1], row.phases[2], row.phases[3]);
    out += line;
  }
  return out;
}

ordered_json counts_json(const keyrate::SiftedCounts& c) {
  return {{"n_z_mu", c.n_z_mu}, {"m_z_mu", c.m_z_mu}, {"n_x_mu", c.n_x_mu},
          {"m_x_mu", c.m_x_mu}, {"n_z_nu", c.n_z_nu}, {"m_z_nu", c.m_z_nu},
          {"n_x_nu", c.n_x_nu}, {"m_x_nu", c.m_x_nu}, {"t_s", c.t_s}};
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  fs::rename(tmp, target);
}

double sync_usable_click_probability(const link::LinkConfig& config) {
  double eta = config.total_transmittance();
  const auto& in = config.intensities;
  double p_click = in.p_mu * (1.0 - std::exp(-in.mu * eta)) +
                   in.p_nu() * (1.0 - std::exp(-in.nu * eta));
  return 0.5 * p_click;  // passive Z-basis choice at the receiver
}

RunSummary run_simulate(const RunConfig& cfg, bool write_files) {
  cfg.validate();
  auto t_start = std::chrono::steady_clock::now();

  sync::SyncCodeConfig code = cfg.make_code();
  sync::SyncOptions opts = cfg.sync_opts;
  opts.nominal_period_s = cfg.link.repetition_period_s;
  opts.resolution_s = cfg.link.timestamp_resolution_s;

  link::ChannelDriftModel drift = cfg.drift;
  if (drift.mode != link::ChannelDriftModel::Mode::static_channel &&
      drift.seed == 0)
    drift.seed = substream(cfg.seed, 0xD81F7u);

  LinkSimulator sim(cfg.link, code, cfg.x_probe_fraction, cfg.seed);
  sim.set_drift_model(drift);
  sim.set_compensation(optics::PolarizationUnitary::identity());

  const uint64_t S = cfg.slots_per_block();
  const uint64_t main_slots = std::max<uint64_t>(
      1, static_cast<uint64_t>(std::llround(cfg.slot_duty * static_cast<double>(S))));
  const int blocks = static_cast<int>(
      std::ceil(cfg.total_duration_s / cfg.block_duration_s));
  const uint64_t acq = std::min(acquisition_slots(cfg), S);
  const uint64_t block0_main = std::max(main_slots, acq);
  opts.max_fit_span_s =
      static_cast<double>(block0_main) * cfg.link.repetition_period_s;

  RunSummary summary;
  summary.blocks = blocks;

  std::vector<DetectionEvent> dump;
  std::vector<DetectionEvent> events;
  FeedbackController controller(CompensatorState{}, cfg.feedback);
  FbWindow window;
  SlotMapping mapping;
  bool have_mapping = false;
  const double res = cfg.link.timestamp_resolution_s;
  const uint64_t total_slots = static_cast<uint64_t>(blocks) * S;

  for (int b = 0; b < blocks; ++b) {
    const uint64_t block_first = static_cast<uint64_t>(b) * S;
    const uint64_t this_main = b == 0 ? block0_main : main_slots;

    BlockTrace row;
    row.index = b;
    row.time_s = static_cast<double>(b) * cfg.block_duration_s;
    row.phases = controller.state().phases;

    // Feedback acts on the rolling estimate from previous blocks; probe
    // evaluations consume slots from the tail of this block.
    if (b > 0 && cfg.feedback_enabled && have_mapping && !controller.stalled()) {
      QberEstimate est = window.estimate(cfg.feedback.min_samples_per_estimate);
      if (est.available && est.worst() > cfg.feedback.qber_threshold) {
        uint64_t budget = S > this_main ? S - this_main : 0;
        uint64_t probe_each = std::min<uint64_t>(cfg.probe_slots, budget / 10);
        if (probe_each >= 1000) {
          uint64_t cursor = block_first + this_main;
          auto estimator = [&](const CompensatorState& s) -> QberEstimate {
            sim.set_compensation(s.unitary());
            events.clear();
            sim.transmit_range(cursor, probe_each, events);
            cursor += probe_each;
            SiftResult r = link::sift(sim.train(), events, mapping, res,
                                      total_slots);
            // Probe intervals run at perturbed settings and feed only the
            // public-slot tallies; their key-slot detections are discarded.
            r.counts = {};
            summary.totals.add(r);
            summary.slots_simulated += probe_each;
            if (cfg.dump_events)
              dump.insert(dump.end(), events.begin(), events.end());
            return feedback::estimate_qber(
                r.fb_sync_z_total, r.fb_sync_z_err, r.fb_probe_x_total,
                r.fb_probe_x_err, cfg.feedback.min_samples_per_estimate);
          };
          auto step = controller.step(estimator);
          row.feedback_acted = step.acted;
          summary.feedback_stalled = step.stalled;
          sim.set_compensation(controller.state().unitary());
          row.phases = controller.state().phases;
        }
      }
    }

    events.clear();
    sim.transmit_range(block_first, this_main, events);
    summary.slots_simulated += this_main;
    if (cfg.dump_events) dump.insert(dump.end(), events.begin(), events.end());

    if (b == 0) {
      summary.sync = sync::acquire(events, code, opts);
      if (!summary.sync.locked()) break;
      mapping = SlotMapping::from_solution(summary.sync);
      have_mapping = true;
    }

    SiftResult r = link::sift(sim.train(), events, mapping, res, total_slots);
    summary.totals.add(r);
    window.push(r);
    QberEstimate est = window.estimate(cfg.feedback.min_samples_per_estimate);
    if (est.available) {
      row.qber_z = est.qber_z;
      row.qber_x = est.qber_x;
    }
    row.sync_ok = refit_mapping(events, res, mapping);
    if (!row.sync_ok) ++summary.sync_degraded_blocks;
    summary.trace.push_back(row);
  }

  summary.aggregate = summary.totals.counts;
  summary.aggregate.t_s = static_cast<double>(summary.slots_simulated) *
                          cfg.link.repetition_period_s;
  if (summary.sync.locked() && summary.aggregate.n_z() > 0) {
    summary.report =
        keyrate::analyze(summary.aggregate, cfg.link.intensities, cfg.security);
  }

  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();

  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    write_text_atomic(cfg.output_dir + "/summary.json",
                      summary_to_json(cfg, summary));
    write_text_atomic(cfg.output_dir + "/qber_trace.csv",
                      trace_csv(summary.trace));
    write_text_atomic(cfg.output_dir + "/keyrate.json",
                      keyrate::report_to_json(summary.report));
    if (cfg.dump_events) {
      event_io::DumpHeader h;
      h.resolution_s = res;
      h.config_hash = config_fingerprint(cfg);
      std::sort(dump.begin(), dump.end(),
                [](const DetectionEvent& a, const DetectionEvent& b) {
                  if (a.timestamp_ticks != b.timestamp_ticks)
                    return a.timestamp_ticks < b.timestamp_ticks;
                  return a.detector < b.detector;
                });
      event_io::write_events(cfg.output_dir + "/events.bin", h, dump);
    }
  }
  return summary;
}

keyrate::KeyRateReport replay_keyrate(const RunConfig& cfg,
                                      const std::string& events_path,
                                      double acquisition_t_s) {
  cfg.validate();
  sync::SyncCodeConfig code = cfg.make_code();
  sync::SyncOptions opts = cfg.sync_opts;
  opts.nominal_period_s = cfg.link.repetition_period_s;
  opts.resolution_s = cfg.link.timestamp_resolution_s;

  const uint64_t S = cfg.slots_per_block();
  const uint64_t main_slots = std::max<uint64_t>(
      1, static_cast<uint64_t>(std::llround(cfg.slot_duty * static_cast<double>(S))));
  const uint64_t acq = std::min(acquisition_slots(cfg), S);
  const uint64_t block0_main = std::max(main_slots, acq);
  opts.max_fit_span_s =
      static_cast<double>(block0_main) * cfg.link.repetition_period_s;

  std::vector<DetectionEvent> events;
  event_io::read_events(events_path, events);

  sync::SyncSolution sol = sync::acquire(events, code, opts);
  if (!sol.locked())
    throw std::runtime_error(std::string("replay sync failed: ") +
                             sync::to_string(sol.status));
  SlotMapping mapping = SlotMapping::from_solution(sol);

  const double res = cfg.link.timestamp_resolution_s;
  const int blocks = static_cast<int>(
      std::ceil(cfg.total_duration_s / cfg.block_duration_s));
  const uint64_t total_slots = static_cast<uint64_t>(blocks) * S;

  // Same blockwise mapping maintenance as the live pipeline: partition the
  // stream by the entry mapping of each block.
  link::PulseTrain train(cfg.link.intensities, code, cfg.x_probe_fraction,
                         cfg.seed);
  SiftResult totals;
  size_t i = 0;
  for (int b = 0; b < blocks && i < events.size(); ++b) {
    const int64_t hi_slot =
        static_cast<int64_t>(static_cast<uint64_t>(b) * S +
                             (b == 0 ? block0_main : main_slots));
    size_t j = i;
    while (j < events.size() &&
           mapping.slot_of(events[j].time_s(res)) < hi_slot)
      ++j;
    std::span<const DetectionEvent> block(events.data() + i, j - i);
    totals.add(link::sift(train, block, mapping, res, total_slots));
    refit_mapping(block, res, mapping);
    i = j;
  }

  keyrate::SiftedCounts counts = totals.counts;
  counts.t_s = acquisition_t_s;
  return keyrate::analyze(counts, cfg.link.intensities, cfg.security);
}

keyrate::KeyRateReport run_keyrate(const CountsFile& file,
                                   const std::string& out_dir) {
  keyrate::KeyRateReport report =
      keyrate::analyze(file.counts, file.intensities, file.security);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_atomic(out_dir + "/keyrate.json",
                      keyrate::report_to_json(report));
    write_text_atomic(out_dir + "/keyrate_summary.csv",
                      keyrate_summary_csv(file, report));
  }
  return report;
}

std::string keyrate_summary_csv(const CountsFile& file,
                                const keyrate::KeyRateReport& r) {
  std::string out =
      "distance_km,loss_db,mu,nu,n_z,t_s,qber_z,phi_z_upper,s_z1_lower,skr_bps\n";
  char line[512];
  std::snprintf(line, sizeof line,
                "%s,%s,%.6g,%.6g,%.0f,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                file.distance_km ? std::to_string(*file.distance_km).c_str() : "",
                file.loss_db ? std::to_string(*file.loss_db).c_str() : "",
                file.intensities.mu, file.intensities.nu, file.counts.n_z(),
                file.counts.t_s, r.qber_z, r.phi_z_upper, r.s_z1_lower, r.skr);
  out += line;
  return out;
}

std::string summary_to_json(const RunConfig& cfg, const RunSummary& s) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_fingerprint(cfg);
  j["blocks"] = s.blocks;
  j["slots_simulated"] = s.slots_simulated;
  j["sync"] = ordered_json::parse(s.sync.to_json());
  j["counts"] = counts_json(s.aggregate);
  j["diagnostics"] = {{"kept", s.totals.kept},
                      {"basis_discarded", s.totals.basis_discarded},
                      {"double_click_slots", s.totals.double_click_slots},
                      {"double_click_events", s.totals.double_click_events},
                      {"sync_routed", s.totals.sync_routed},
                      {"probe_routed", s.totals.probe_routed},
                      {"unassigned", s.totals.unassigned},
                      {"fb_sync_z_total", s.totals.fb_sync_z_total},
                      {"fb_sync_z_err", s.totals.fb_sync_z_err},
                      {"fb_probe_x_total", s.totals.fb_probe_x_total},
                      {"fb_probe_x_err", s.totals.fb_probe_x_err},
                      {"sync_degraded_blocks", s.sync_degraded_blocks},
                      {"feedback_stalled", s.feedback_stalled}};
  j["keyrate"] = ordered_json::parse(keyrate::report_to_json(s.report));
  return j.dump(2);
}

std::vector<SyncBenchRow> run_sync_bench(const RunConfig& base,
                                         const std::vector<double>& losses_db,
                                         int trials,
                                         const std::string& out_csv) {
  base.validate();
  std::vector<SyncBenchRow> rows;
  sync::SyncCodeConfig code = base.make_code();
  const double max_skew_ppm = base.link.clock_skew_ppm;

  for (size_t li = 0; li < losses_db.size(); ++li) {
    RunConfig cfg = base;
    cfg.link.fiber_attenuation_db_per_km = 1.0;
    cfg.link.fiber_length_km = losses_db[li];

    SyncBenchRow row;
    row.loss_db = losses_db[li];
    row.eta_usable = sync_usable_click_probability(cfg.link);
    row.sqrt_l_eta = std::sqrt(static_cast<double>(cfg.sync_code_length) *
                               row.eta_usable);
    auto adm = sync::admissibility_check(cfg.sync_code_length, row.eta_usable,
                                         cfg.sync_opts.max_frames);
    row.prescribed_frames = adm.repetitions;
    row.trials = trials;

    sync::SyncOptions opts = cfg.sync_opts;
    opts.nominal_period_s = cfg.link.repetition_period_s;
    opts.resolution_s = cfg.link.timestamp_resolution_s;

    uint64_t nf = static_cast<uint64_t>(code.frame_length());
    uint64_t fft_slots = static_cast<uint64_t>(opts.fft_windows) *
                         static_cast<uint64_t>(opts.fft_samples) / 4;
    uint64_t slots = std::max(
        fft_slots, (static_cast<uint64_t>(adm.repetitions) + 1) * nf);

    double sum_frames = 0, sum_residual = 0;
    for (int trial = 0; trial < trials; ++trial) {
      uint64_t seed = substream(cfg.seed, li * 100003 + static_cast<uint64_t>(trial));
      cfg.link.clock_skew_ppm =
          max_skew_ppm * to_unit_double(hash_mix(seed, 0x5EEDu));

      LinkSimulator sim(cfg.link, code, cfg.x_probe_fraction, seed);
      sim.set_compensation(optics::PolarizationUnitary::identity());
      std::vector<DetectionEvent> events;
      sim.transmit_range(0, slots, events);

      sync::PeriodEstimate est = sync::recover_period_fft(events, opts);
      if (est.status != sync::SyncStatus::locked) continue;
      double tau_true = cfg.link.receiver_period_s();
      row.max_fft_period_error_s = std::max(row.max_fft_period_error_s,
                                            std::abs(est.tau0_s - tau_true));
      sync::PeriodFit fit = sync::refine_period_lts(events, est.tau0_s, opts);
      if (fit.status != sync::SyncStatus::locked) continue;
      sync::SyncSolution sol = sync::recover_offset(events, fit, code, opts);
      if (!sol.locked()) continue;
      ++row.locked;
      if (sol.frames_used == 1) ++row.locked_single_frame;
      sum_frames += sol.frames_used;
      sum_residual += sol.residual_sigma_s;

      SlotMapping mapping = SlotMapping::from_solution(sol);
      bool exact = true;
      for (const auto& ev : events) {
        if (ev.true_slot < 0) continue;
        if (mapping.slot_of(ev.time_s(opts.resolution_s)) != ev.true_slot) {
          exact = false;
          break;
        }
      }
      if (exact) ++row.exact;
    }
    if (row.locked > 0) {
      row.mean_frames_used = sum_frames / row.locked;
      row.mean_residual_sigma_s = sum_residual / row.locked;
    }
    rows.push_back(row);
  }

  if (!out_csv.empty()) {
    std::string out =
        "loss_db,eta_usable,sqrt_l_eta,prescribed_frames,trials,locked,"
        "locked_single_frame,exact,mean_frames_used,max_fft_period_error_s,"
        "mean_residual_sigma_s\n";
    char line[512];
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line,
                    "%.3f,%.6g,%.4f,%d,%d,%d,%d,%d,%.3f,%.6g,%.6g\n",
                    r.loss_db, r.eta_usable, r.sqrt_l_eta, r.prescribed_frames,
                    r.trials, r.locked, r.locked_single_frame, r.exact,
                    r.mean_frames_used, r.max_fft_period_error_s,
                    r.mean_residual_sigma_s);
      out += line;
    }
    write_text_atomic(out_csv, out);
  }
  return rows;
}

sync::SyncSolution run_sync_replay(const RunConfig& cfg,
                                   const std::string& dump_path) {
  sync::SyncCodeConfig code = cfg.make_code();
  sync::SyncOptions opts = cfg.sync_opts;
  opts.nominal_period_s = cfg.link.repetition_period_s;
  opts.resolution_s = cfg.link.timestamp_resolution_s;
  std::vector<DetectionEvent> events;
  event_io::read_events(dump_path, events);
  return sync::acquire(events, code, opts);
}

FeedbackBenchResult run_feedback_bench(const RunConfig& config,
                                       const std::string& out_dir) {
  RunConfig on = config;
  on.feedback_enabled = true;
  RunConfig off = config;
  off.feedback_enabled = false;
  if (on.drift.mode != link::ChannelDriftModel::Mode::static_channel &&
      on.drift.seed == 0) {
    // Pin the drift realization so both traces see the same channel.
    on.drift.seed = substream(config.seed, 0xD81F7u);
    off.drift.seed = on.drift.seed;
  }

  RunSummary rs_on = run_simulate(on, false);
  RunSummary rs_off = run_simulate(off, false);

  FeedbackBenchResult result;
  result.stalled = rs_on.feedback_stalled;

  double sum_z = 0, sum_x = 0;
  int avail = 0;
  bool breached = false;
  double breach_start = 0;
  for (const auto& row : rs_on.trace) {
    if (row.qber_z < 0) continue;
    sum_z += row.qber_z;
    sum_x += row.qber_x;
    ++avail;
    double worst = std::max(row.qber_z, row.qber_x);
    if (!breached && worst > on.feedback.qber_threshold) {
      breached = true;
      breach_start = row.time_s;
    } else if (breached && worst <= on.feedback.qber_threshold) {
      breached = false;
      result.recovery_times_s.push_back(row.time_s - breach_start);
    }
    result.final_qber_on = worst;
  }
  if (breached && !rs_on.trace.empty())
    result.recovery_times_s.push_back(rs_on.trace.back().time_s - breach_start);
  if (avail > 0) {
    result.mean_qber_z_on = sum_z / avail;
    result.mean_qber_x_on = sum_x / avail;
  }
  for (const auto& t : result.recovery_times_s)
    result.max_recovery_s = std::max(result.max_recovery_s, t);
  for (auto it = rs_off.trace.rbegin(); it != rs_off.trace.rend(); ++it) {
    if (it->qber_z >= 0) {
      result.final_qber_off = std::max(it->qber_z, it->qber_x);
      break;
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_atomic(out_dir + "/qber_trace_on.csv", trace_csv(rs_on.trace));
    write_text_atomic(out_dir + "/qber_trace_off.csv", trace_csv(rs_off.trace));
    ordered_json j;
    j["mean_qber_z_on"] = result.mean_qber_z_on;
    j["mean_qber_x_on"] = result.mean_qber_x_on;
    j["final_qber_on"] = result.final_qber_on;
    j["final_qber_off"] = result.final_qber_off;
    j["max_recovery_s"] = result.max_recovery_s;
    j["recoveries"] = result.recovery_times_s;
    j["stalled"] = result.stalled;
    write_text_atomic(out_dir + "/feedback_bench.json", j.dump(2));
  }
  return result;
}

}  // namespace qkd::harness
