#include "qkd/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace qkd::harness {

using nlohmann::ordered_json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void get_if(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* drift_mode_name(link::ChannelDriftModel::Mode m) {
  switch (m) {
    case link::ChannelDriftModel::Mode::static_channel: return "static";
    case link::ChannelDriftModel::Mode::random_walk: return "random_walk";
    case link::ChannelDriftModel::Mode::scrambler_steps: return "scrambler_steps";
  }
  return "static";
}

link::ChannelDriftModel::Mode drift_mode_from(const std::string& s) {
  if (s == "static") return link::ChannelDriftModel::Mode::static_channel;
  if (s == "random_walk") return link::ChannelDriftModel::Mode::random_walk;
  if (s == "scrambler_steps")
    return link::ChannelDriftModel::Mode::scrambler_steps;
  throw std::invalid_argument("unknown drift mode: " + s);
}

}  // namespace

void RunConfig::validate() const {
  link.validate();
  feedback.validate();
  security.validate();
  if (sync_code_length < 1)
    throw std::invalid_argument("sync.code_length must be >= 1");
  if (sync_random_bits < 0)
    throw std::invalid_argument("sync.random_bits_per_code_bit must be >= 0");
  if (!(block_duration_s > 0.0) || !(total_duration_s > 0.0))
    throw std::invalid_argument("durations must be > 0");
  if (block_duration_s > total_duration_s)
    throw std::invalid_argument("block_duration_s must not exceed total_duration_s");
  if (!(slot_duty > 0.0 && slot_duty <= 1.0))
    throw std::invalid_argument("slot_duty must lie in (0, 1]");
  if (x_probe_fraction < 0.0 || x_probe_fraction >= 1.0)
    throw std::invalid_argument("x_probe_fraction must lie in [0, 1)");
}

sync::SyncCodeConfig RunConfig::make_code() const {
  return sync::SyncCodeConfig::random_code(sync_code_length, sync_random_bits,
                                           sync_code_seed);
}

uint64_t RunConfig::slots_per_block() const {
  return static_cast<uint64_t>(
      std::llround(block_duration_s / link.repetition_period_s));
}

RunConfig run_config_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  RunConfig cfg;

  if (j.contains("link")) {
    const auto& l = j.at("link");
    auto& lc = cfg.link;
    get_if(l, "repetition_period_s", lc.repetition_period_s);
    get_if(l, "fiber_length_km", lc.fiber_length_km);
    get_if(l, "fiber_attenuation_db_per_km", lc.fiber_attenuation_db_per_km);
    get_if(l, "decoder_insertion_loss_db", lc.decoder_insertion_loss_db);
    get_if(l, "detector_efficiency", lc.detector_efficiency);
    get_if(l, "dark_count_rate_hz", lc.dark_count_rate_hz);
    get_if(l, "dead_time_s", lc.dead_time_s);
    get_if(l, "timing_jitter_sigma_s", lc.timing_jitter_sigma_s);
    get_if(l, "im_dynamic_extinction_db", lc.im_dynamic_extinction_db);
    get_if(l, "decoy_leakage_enabled", lc.decoy_leakage_enabled);
    get_if(l, "polarization_extinction_db", lc.polarization_extinction_db);
    get_if(l, "clock_skew_ppm", lc.clock_skew_ppm);
    get_if(l, "timestamp_resolution_s", lc.timestamp_resolution_s);
    if (l.contains("intensities")) {
      const auto& i = l.at("intensities");
      get_if(i, "mu", lc.intensities.mu);
      get_if(i, "nu", lc.intensities.nu);
      get_if(i, "p_mu", lc.intensities.p_mu);
      get_if(i, "p_z", lc.intensities.p_z);
    }
  }
  if (j.contains("drift")) {
    const auto& d = j.at("drift");
    std::string mode = drift_mode_name(cfg.drift.mode);
    get_if(d, "mode", mode);
    cfg.drift.mode = drift_mode_from(mode);
    get_if(d, "step_interval_s", cfg.drift.step_interval_s);
    get_if(d, "step_magnitude_rad", cfg.drift.step_magnitude_rad);
    get_if(d, "seed", cfg.drift.seed);
  }
  if (j.contains("sync")) {
    const auto& s = j.at("sync");
    get_if(s, "code_length", cfg.sync_code_length);
    get_if(s, "random_bits_per_code_bit", cfg.sync_random_bits);
    get_if(s, "code_seed", cfg.sync_code_seed);
    get_if(s, "fft_samples", cfg.sync_opts.fft_samples);
    get_if(s, "fft_windows", cfg.sync_opts.fft_windows);
    get_if(s, "fft_peak_threshold", cfg.sync_opts.fft_peak_threshold);
    get_if(s, "correlation_threshold", cfg.sync_opts.correlation_threshold);
    get_if(s, "trim_fraction", cfg.sync_opts.trim_fraction);
    get_if(s, "max_frames", cfg.sync_opts.max_frames);
  }
  if (j.contains("feedback")) {
    const auto& f = j.at("feedback");
    get_if(f, "enabled", cfg.feedback_enabled);
    get_if(f, "qber_threshold", cfg.feedback.qber_threshold);
    get_if(f, "probe_step_rad", cfg.feedback.probe_step_rad);
    get_if(f, "learning_rate", cfg.feedback.learning_rate);
    get_if(f, "min_samples_per_estimate", cfg.feedback.min_samples_per_estimate);
    get_if(f, "max_iterations", cfg.feedback.max_iterations);
    get_if(f, "x_probe_fraction", cfg.x_probe_fraction);
    get_if(f, "probe_slots", cfg.probe_slots);
  }
  if (j.contains("security")) {
    const auto& s = j.at("security");
    get_if(s, "eps_sec", cfg.security.eps_sec);
    get_if(s, "eps_cor", cfg.security.eps_cor);
    get_if(s, "f_ec", cfg.security.f_ec);
  }
  if (!j.contains("run") || !j.at("run").contains("seed"))
    throw std::invalid_argument("config requires run.seed (no wall-clock seeding)");
  const auto& r = j.at("run");
  get_if(r, "block_duration_s", cfg.block_duration_s);
  get_if(r, "total_duration_s", cfg.total_duration_s);
  get_if(r, "slot_duty", cfg.slot_duty);
  get_if(r, "seed", cfg.seed);
  get_if(r, "output_dir", cfg.output_dir);
  get_if(r, "dump_events", cfg.dump_events);

  // Sync stage options follow the link timing.
  cfg.sync_opts.nominal_period_s = cfg.link.repetition_period_s;
  cfg.sync_opts.resolution_s = cfg.link.timestamp_resolution_s;

  cfg.validate();
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  auto& l = j["link"];
  l["repetition_period_s"] = cfg.link.repetition_period_s;
  l["fiber_length_km"] = cfg.link.fiber_length_km;
  l["fiber_attenuation_db_per_km"] = cfg.link.fiber_attenuation_db_per_km;
  l["decoder_insertion_loss_db"] = cfg.link.decoder_insertion_loss_db;
  l["detector_efficiency"] = cfg.link.detector_efficiency;
  l["dark_count_rate_hz"] = cfg.link.dark_count_rate_hz;
  l["dead_time_s"] = cfg.link.dead_time_s;
  l["timing_jitter_sigma_s"] = cfg.link.timing_jitter_sigma_s;
  l["im_dynamic_extinction_db"] = cfg.link.im_dynamic_extinction_db;
  l["decoy_leakage_enabled"] = cfg.link.decoy_leakage_enabled;
  l["polarization_extinction_db"] = cfg.link.polarization_extinction_db;
  l["clock_skew_ppm"] = cfg.link.clock_skew_ppm;
  l["timestamp_resolution_s"] = cfg.link.timestamp_resolution_s;
  l["intensities"] = {{"mu", cfg.link.intensities.mu},
                      {"nu", cfg.link.intensities.nu},
                      {"p_mu", cfg.link.intensities.p_mu},
                      {"p_z", cfg.link.intensities.p_z}};
  j["drift"] = {{"mode", drift_mode_name(cfg.drift.mode)},
                {"step_interval_s", cfg.drift.step_interval_s},
                {"step_magnitude_rad", cfg.drift.step_magnitude_rad},
                {"seed", cfg.drift.seed}};
  j["sync"] = {{"code_length", cfg.sync_code_length},
               {"random_bits_per_code_bit", cfg.sync_random_bits},
               {"code_seed", cfg.sync_code_seed},
               {"fft_samples", cfg.sync_opts.fft_samples},
               {"fft_windows", cfg.sync_opts.fft_windows},
               {"fft_peak_threshold", cfg.sync_opts.fft_peak_threshold},
               {"correlation_threshold", cfg.sync_opts.correlation_threshold},
               {"trim_fraction", cfg.sync_opts.trim_fraction},
               {"max_frames", cfg.sync_opts.max_frames}};
  j["feedback"] = {{"enabled", cfg.feedback_enabled},
                   {"qber_threshold", cfg.feedback.qber_threshold},
                   {"probe_step_rad", cfg.feedback.probe_step_rad},
                   {"learning_rate", cfg.feedback.learning_rate},
                   {"min_samples_per_estimate", cfg.feedback.min_samples_per_estimate},
                   {"max_iterations", cfg.feedback.max_iterations},
                   {"x_probe_fraction", cfg.x_probe_fraction},
                   {"probe_slots", cfg.probe_slots}};
  j["security"] = {{"eps_sec", cfg.security.eps_sec},
                   {"eps_cor", cfg.security.eps_cor},
                   {"f_ec", cfg.security.f_ec}};
  j["run"] = {{"block_duration_s", cfg.block_duration_s},
              {"total_duration_s", cfg.total_duration_s},
              {"slot_duty", cfg.slot_duty},
              {"seed", cfg.seed},
              {"output_dir", cfg.output_dir},
              {"dump_events", cfg.dump_events}};
  return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(read_file(path));
}

namespace {

CountsFile counts_from_json(const ordered_json& j) {
  CountsFile f;
  std::vector<std::string> missing;
  auto need = [&](const char* key) -> double {
    if (!j.contains(key)) {
      missing.push_back(key);
      return 0.0;
    }
    return j.at(key).get<double>();
  };
  const ordered_json& c = j.contains("counts") ? j.at("counts") : j;
  auto need_in = [&](const ordered_json& src, const char* key) -> double {
    if (!src.contains(key)) {
      missing.push_back(key);
      return 0.0;
    }
    return src.at(key).get<double>();
  };
  f.counts.n_z_mu = need_in(c, "n_z_mu");
  f.counts.m_z_mu = need_in(c, "m_z_mu");
  f.counts.n_x_mu = need_in(c, "n_x_mu");
  f.counts.m_x_mu = need_in(c, "m_x_mu");
  f.counts.n_z_nu = need_in(c, "n_z_nu");
  f.counts.m_z_nu = need_in(c, "m_z_nu");
  f.counts.n_x_nu = need_in(c, "n_x_nu");
  f.counts.m_x_nu = need_in(c, "m_x_nu");
  f.counts.t_s = need("t_s");
  f.intensities.mu = need("mu");
  f.intensities.nu = need("nu");
  f.intensities.p_mu = need("p_mu");
  f.intensities.p_z = need("p_z");
  if (j.contains("security")) {
    const auto& s = j.at("security");
    get_if(s, "eps_sec", f.security.eps_sec);
    get_if(s, "eps_cor", f.security.eps_cor);
    get_if(s, "f_ec", f.security.f_ec);
  }
  if (j.contains("distance_km")) f.distance_km = j.at("distance_km").get<double>();
  if (j.contains("loss_db")) f.loss_db = j.at("loss_db").get<double>();
  get_if(j, "description", f.description);
  if (!missing.empty()) {
    std::string msg = "counts file missing fields:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  f.counts.validate();
  f.intensities.validate();
  f.security.validate();
  return f;
}

CountsFile counts_from_csv(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  if (lines.size() < 2)
    throw std::invalid_argument("counts CSV needs a header and one data row");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream row(s);
    std::string cell;
    while (std::getline(row, cell, ',')) out.push_back(cell);
    return out;
  };
  auto header = split(lines[0]);
  auto values = split(lines[1]);
  if (header.size() != values.size())
    throw std::invalid_argument("counts CSV header/data width mismatch");
  ordered_json j;
  for (size_t i = 0; i < header.size(); ++i) {
    // Trim spaces.
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    j[trim(header[i])] = std::stod(trim(values[i]));
  }
  return counts_from_json(j);
}

}  // namespace

CountsFile load_counts_file(const std::string& path) {
  std::string text = read_file(path);
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv")
    return counts_from_csv(text);
  return counts_from_json(ordered_json::parse(text));
}

}  // namespace qkd::harness
