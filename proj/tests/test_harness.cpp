#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "qkd/harness.hpp"

using namespace qkd;
using namespace qkd::harness;

namespace {

namespace fs = std::filesystem;

// Small fast link for pipeline tests: 10 MHz clock, short code, small FFT.
RunConfig small_config() {
  RunConfig cfg;
  cfg.link.repetition_period_s = 1e-7;
  cfg.link.intensities = {0.5, 0.125, 0.75, 0.944};
  cfg.sync_code_length = 2000;
  cfg.sync_random_bits = 9;
  cfg.sync_opts.fft_samples = 100000;
  cfg.sync_opts.fft_windows = 4;
  cfg.block_duration_s = 0.5;
  cfg.total_duration_s = 1.0;
  cfg.probe_slots = 100000;
  cfg.feedback.min_samples_per_estimate = 200;
  cfg.seed = 42;
  cfg.output_dir = (fs::temp_directory_path() / "qkd_harness_test").string();
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config round trip is the identity") {
  RunConfig cfg = small_config();
  cfg.link.fiber_length_km = 33.5;
  cfg.drift.mode = link::ChannelDriftModel::Mode::scrambler_steps;
  cfg.drift.step_magnitude_rad = 0.21;
  cfg.slot_duty = 0.25;
  std::string a = run_config_to_json(cfg);
  RunConfig parsed = run_config_from_json(a);
  std::string b = run_config_to_json(parsed);
  CHECK(a == b);
}

TEST_CASE("config requires an explicit seed") {
  CHECK_THROWS_AS(run_config_from_json("{\"run\": {\"total_duration_s\": 1.0}}"),
                  std::invalid_argument);
}

TEST_CASE("config validation rejects bad durations") {
  RunConfig cfg = small_config();
  cfg.block_duration_s = 2.0;  // exceeds total
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("counts file loading: json, csv, missing fields") {
  auto dir = fs::temp_directory_path() / "qkd_counts_test";
  fs::create_directories(dir);

  std::ofstream((dir / "ok.json"))
      << R"({"mu": 0.5, "nu": 0.125, "p_mu": 0.75, "p_z": 0.9, "t_s": 10,
             "counts": {"n_z_mu": 1000, "m_z_mu": 5, "n_x_mu": 60, "m_x_mu": 1,
                        "n_z_nu": 100, "m_z_nu": 1, "n_x_nu": 6, "m_x_nu": 0}})";
  CountsFile ok = load_counts_file((dir / "ok.json").string());
  CHECK(ok.counts.n_z() == 1100);

  std::ofstream((dir / "ok.csv"))
      << "# one-decoy counts\n"
         "mu,nu,p_mu,p_z,t_s,n_z_mu,m_z_mu,n_x_mu,m_x_mu,n_z_nu,m_z_nu,n_x_nu,m_x_nu\n"
         "0.5,0.125,0.75,0.9,10,1000,5,60,1,100,1,6,0\n";
  CountsFile csv = load_counts_file((dir / "ok.csv").string());
  CHECK(csv.counts.n_z() == ok.counts.n_z());
  CHECK(csv.counts.m_x_mu == 1);

  std::ofstream((dir / "bad.json")) << R"({"mu": 0.5, "nu": 0.125})";
  try {
    load_counts_file((dir / "bad.json").string());
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("p_mu") != std::string::npos);
    CHECK(msg.find("n_z_mu") != std::string::npos);
    CHECK(msg.find("t_s") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("keyrate path reproduces the golden 50 km row") {
  CountsFile file = load_counts_file(std::string(QKD_DATA_DIR) + "/table2_50km.json");
  auto dir = fs::temp_directory_path() / "qkd_keyrate_test";
  keyrate::KeyRateReport r = run_keyrate(file, dir.string());
  CHECK(std::abs(r.skr - 8.96e4) / 8.96e4 < 0.05);
  CHECK(fs::exists(dir / "keyrate.json"));
  std::string csv = slurp((dir / "keyrate_summary.csv").string());
  CHECK(csv.find("distance_km") != std::string::npos);
  CHECK(csv.find("50") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("simulate pipeline locks, sifts and reports") {
  RunConfig cfg = small_config();
  RunSummary s = run_simulate(cfg);
  REQUIRE(s.sync.locked());
  CHECK(s.aggregate.n_z() > 1000);
  CHECK(s.report.key_length >= 0);
  CHECK(s.trace.size() == static_cast<size_t>(s.blocks));
  CHECK(s.sync_degraded_blocks == 0);

  // No NaNs or infinities anywhere in the outputs.
  std::string summary = slurp(cfg.output_dir + "/summary.json");
  CHECK(summary.find("nan") == std::string::npos);
  CHECK(summary.find("inf") == std::string::npos);
  CHECK(fs::exists(cfg.output_dir + "/qber_trace.csv"));
  CHECK(fs::exists(cfg.output_dir + "/keyrate.json"));
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("identical config and seed produce byte-identical summaries") {
  RunConfig cfg = small_config();
  cfg.output_dir = (fs::temp_directory_path() / "qkd_det_a").string();
  run_simulate(cfg);
  std::string a = slurp(cfg.output_dir + "/summary.json");
  fs::remove_all(cfg.output_dir);

  cfg.output_dir = (fs::temp_directory_path() / "qkd_det_b").string();
  run_simulate(cfg);
  std::string b = slurp(cfg.output_dir + "/summary.json");
  fs::remove_all(cfg.output_dir);
  CHECK(a == b);
}

TEST_CASE("replay of a dumped event stream reproduces the report") {
  RunConfig cfg = small_config();
  cfg.feedback_enabled = false;  // replay-consistency scenario
  cfg.dump_events = true;
  cfg.output_dir = (fs::temp_directory_path() / "qkd_replay_test").string();
  RunSummary live = run_simulate(cfg);
  REQUIRE(live.sync.locked());

  keyrate::KeyRateReport replayed = replay_keyrate(
      cfg, cfg.output_dir + "/events.bin", live.aggregate.t_s);
  CHECK(keyrate::report_to_json(replayed) ==
        keyrate::report_to_json(live.report));
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("feedback probing never touches key-slot statistics") {
  // Aligned static channel: feedback stays below threshold either way, and
  // the key counts must be identical with the control loop on or off.
  RunConfig on = small_config();
  on.feedback_enabled = true;
  RunConfig off = small_config();
  off.feedback_enabled = false;
  RunSummary a = run_simulate(on, false);
  RunSummary b = run_simulate(off, false);
  CHECK(keyrate::report_to_json(a.report) == keyrate::report_to_json(b.report));
  CHECK(a.aggregate.n_z() == b.aggregate.n_z());
  CHECK(a.aggregate.m_z() == b.aggregate.m_z());
}

TEST_CASE("simulated qber sits at the extinction floor") {
  RunConfig cfg = small_config();
  cfg.total_duration_s = 2.0;
  cfg.output_dir = (fs::temp_directory_path() / "qkd_floor_test").string();
  RunSummary s = run_simulate(cfg, false);
  REQUIRE(s.sync.locked());
  double qber = (s.aggregate.m_z() + s.aggregate.m_x()) /
                (s.aggregate.n_z() + s.aggregate.n_x());
  CHECK(qber > 0.0025);
  CHECK(qber < 0.0075);
}

TEST_CASE("sync bench: small sweep locks and recovers exactly") {
  RunConfig cfg = small_config();
  cfg.link.repetition_period_s = 2e-8;
  cfg.link.clock_skew_ppm = 20.0;  // bench treats this as the sweep maximum
  cfg.link.timing_jitter_sigma_s = 3e-11;
  cfg.sync_code_length = 5000;
  cfg.sync_opts.fft_samples = 250000;
  auto rows = run_sync_bench(cfg, {0.0, 6.0}, 4, "");
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    CHECK(row.locked == row.trials);
    CHECK(row.exact == row.locked);
    CHECK(row.max_fft_period_error_s <=
          4.0 * cfg.link.repetition_period_s / cfg.sync_opts.fft_samples);
  }
}

TEST_CASE("feedback bench: drift without compensation degrades the link") {
  RunConfig cfg = small_config();
  cfg.link.repetition_period_s = 2e-8;
  cfg.sync_code_length = 5000;
  cfg.sync_opts.fft_samples = 250000;
  cfg.block_duration_s = 1.0;
  cfg.total_duration_s = 60.0;
  cfg.slot_duty = 0.02;
  cfg.probe_slots = 500000;
  cfg.feedback.min_samples_per_estimate = 150;
  cfg.drift.mode = link::ChannelDriftModel::Mode::scrambler_steps;
  cfg.drift.step_interval_s = 10.0;
  cfg.drift.step_magnitude_rad = 0.5;
  auto dir = (fs::temp_directory_path() / "qkd_fb_bench").string();
  FeedbackBenchResult r = run_feedback_bench(cfg, dir);
  CHECK(r.final_qber_off > 0.05);
  CHECK(r.mean_qber_z_on < 0.03);
  CHECK_FALSE(r.stalled);
  CHECK(fs::exists(dir + "/qber_trace_on.csv"));
  CHECK(fs::exists(dir + "/qber_trace_off.csv"));
  fs::remove_all(dir);
}
