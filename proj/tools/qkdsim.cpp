// Command-line front end: simulate | keyrate | sync-bench | feedback-bench.
// Errors go to stderr as one JSON object; exit codes: 0 success, 2 bad
// config/input, 3 runtime failure (e.g. synchronization lost).

#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qkd/harness.hpp"

namespace {

int fail(int code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = message;
  std::fprintf(stderr, "%s\n", j.dump().c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoy-state BB84 link simulator and finite-key analyzer"};
  app.require_subcommand(1);

  std::string config_path, counts_path, out_dir, dump_path, losses_arg;
  int trials = 50;
  uint64_t seed_override = 0;
  bool have_seed = false;
  double eps_sec = 0, eps_cor = 0, f_ec = 0;

  auto* sim = app.add_subcommand("simulate", "run the end-to-end pipeline");
  sim->add_option("--config", config_path, "run config JSON")->required();
  sim->add_option("--seed", seed_override)->each([&](const std::string&) {
    have_seed = true;
  });
  sim->add_option("--out", out_dir, "output directory override");

  auto* key = app.add_subcommand("keyrate", "finite-key analysis of a counts file");
  key->add_option("--counts", counts_path, "counts JSON or CSV")->required();
  key->add_option("--out", out_dir, "output directory");
  key->add_option("--eps-sec", eps_sec, "secrecy parameter override");
  key->add_option("--eps-cor", eps_cor, "correctness parameter override");
  key->add_option("--f-ec", f_ec, "error-correction inefficiency override");

  auto* sb = app.add_subcommand("sync-bench", "synchronization Monte Carlo");
  sb->add_option("--config", config_path, "run config JSON")->required();
  sb->add_option("--trials", trials, "seeded trials per loss point");
  sb->add_option("--losses", losses_arg,
                 "comma-separated channel losses in dB (default 0..30 step 3)");
  sb->add_option("--dump", dump_path, "replay: run sync once over an event dump");
  sb->add_option("--out", out_dir, "output directory");

  auto* fb = app.add_subcommand("feedback-bench", "paired drift-compensation runs");
  fb->add_option("--config", config_path, "run config JSON")->required();
  fb->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      qkd::harness::RunConfig cfg = qkd::harness::load_run_config(config_path);
      if (have_seed) cfg.seed = seed_override;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      auto summary = qkd::harness::run_simulate(cfg);
      if (!summary.sync.locked())
        return fail(3, std::string("synchronization failed in block 0: ") +
                           qkd::sync::to_string(summary.sync.status));
      std::printf("%s\n", qkd::keyrate::report_to_json(summary.report).c_str());
      return 0;
    }
    if (key->parsed()) {
      qkd::harness::CountsFile file = qkd::harness::load_counts_file(counts_path);
      if (eps_sec > 0) file.security.eps_sec = eps_sec;
      if (eps_cor > 0) file.security.eps_cor = eps_cor;
      if (f_ec > 0) file.security.f_ec = f_ec;
      auto report = qkd::harness::run_keyrate(file, out_dir);
      std::printf("%s\n", qkd::keyrate::report_to_json(report).c_str());
      return 0;
    }
    if (sb->parsed()) {
      qkd::harness::RunConfig cfg = qkd::harness::load_run_config(config_path);
      if (!dump_path.empty()) {
        auto sol = qkd::harness::run_sync_replay(cfg, dump_path);
        std::printf("%s\n", sol.to_json().c_str());
        return sol.locked() ? 0 : 3;
      }
      std::vector<double> losses;
      if (losses_arg.empty()) {
        for (int db = 0; db <= 30; db += 3) losses.push_back(db);
      } else {
        std::string item;
        std::stringstream ss(losses_arg);
        while (std::getline(ss, item, ',')) losses.push_back(std::stod(item));
      }
      std::string csv = out_dir.empty() ? "sync_bench.csv"
                                        : out_dir + "/sync_bench.csv";
      auto rows = qkd::harness::run_sync_bench(cfg, losses, trials, csv);
      for (const auto& r : rows)
        std::printf("loss %5.1f dB  sqrt(L*eta) %6.2f  k %3d  lock %d/%d  exact %d\n",
                    r.loss_db, r.sqrt_l_eta, r.prescribed_frames, r.locked,
                    r.trials, r.exact);
      return 0;
    }
    if (fb->parsed()) {
      qkd::harness::RunConfig cfg = qkd::harness::load_run_config(config_path);
      std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
      auto result = qkd::harness::run_feedback_bench(cfg, dir);
      std::printf(
          "mean qber_z %.4f  mean qber_x %.4f  max recovery %.1f s  final off %.3f\n",
          result.mean_qber_z_on, result.mean_qber_x_on, result.max_recovery_s,
          result.final_qber_off);
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    return fail(2, e.what());
  } catch (const std::domain_error& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(3, e.what());
  }
  return 0;
}
