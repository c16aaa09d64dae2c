#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "qkd/feedback.hpp"
#include "qkd/link.hpp"
#include "qkd/sync_types.hpp"

using namespace qkd;
using namespace qkd::feedback;
using optics::Basis;
using optics::PolarizationUnitary;

namespace {

// Noiseless estimator: exact Born-rule QBER of comp * drift across the four
// symbols, no statistical noise.
Estimator exact_estimator(const PolarizationUnitary& drift) {
  return [drift](const CompensatorState& s) {
    PolarizationUnitary chain = s.unitary() * drift;
    QberEstimate e;
    e.available = true;
    e.samples_z = e.samples_x = 1000000;
    double qz = 0, qx = 0;
    for (uint8_t bit = 0; bit < 2; ++bit) {
      auto sz = optics::apply_unitary(chain, optics::symbol_to_state({Basis::Z, bit}));
      auto [pz0, pz1] = optics::measurement_probabilities(
          sz, Basis::Z, PolarizationUnitary::identity());
      qz += 0.5 * (bit == 0 ? pz1 : pz0);
      auto sx = optics::apply_unitary(chain, optics::symbol_to_state({Basis::X, bit}));
      auto [px0, px1] = optics::measurement_probabilities(
          sx, Basis::X, PolarizationUnitary::identity());
      qx += 0.5 * (bit == 0 ? px1 : px0);
    }
    e.qber_z = qz;
    e.qber_x = qx;
    return e;
  };
}

}  // namespace

TEST_CASE("estimate_qber basics") {
  auto e = estimate_qber(2000, 10, 1500, 9, 400);
  CHECK(e.available);
  CHECK(e.qber_z == doctest::Approx(0.005));
  CHECK(e.qber_x == doctest::Approx(0.006));
  CHECK(e.stderr_z == doctest::Approx(std::sqrt(0.005 * 0.995 / 2000)));

  CHECK_FALSE(estimate_qber(0, 0, 0, 0, 400).available);
  CHECK_FALSE(estimate_qber(399, 1, 1000, 1, 400).available);
}

TEST_CASE("estimated floor on an aligned simulated link") {
  link::LinkConfig cfg;
  cfg.intensities = {0.5, 0.125, 0.75, 0.944};
  cfg.dark_count_rate_hz = 0;
  auto code = sync::SyncCodeConfig::random_code(2000, 9, 5);
  link::LinkSimulator sim(cfg, code, 0.05, 61);
  std::vector<link::DetectionEvent> events;
  sim.transmit_range(0, 2000000, events);
  auto r = link::sift(sim.train(), events,
                      {sim.t0_s(), cfg.receiver_period_s()},
                      cfg.timestamp_resolution_s, 2000000);
  auto e = estimate_qber(r.fb_sync_z_total, r.fb_sync_z_err, r.fb_probe_x_total,
                         r.fb_probe_x_err, 400);
  REQUIRE(e.available);
  double floor = cfg.extinction_error_probability();
  CHECK(std::abs(e.qber_z - floor) < 3.0 * e.stderr_z + 1e-4);
  CHECK(std::abs(e.qber_x - floor) < 3.0 * e.stderr_x + 1e-4);
}

TEST_CASE("compensator state produces unitaries and wraps phases") {
  CounterRng rng(8);
  for (int i = 0; i < 200; ++i) {
    CompensatorState s;
    for (auto& p : s.phases) p = (rng.next_double() - 0.5) * 20.0;
    s.wrap();
    for (double p : s.phases) {
      CHECK(p >= 0.0);
      CHECK(p < 2.0 * M_PI);
    }
    REQUIRE(s.unitary().is_unitary(1e-10));
  }
  CompensatorState zero;
  auto z0 = optics::symbol_to_state({Basis::Z, 0});
  CHECK(optics::fidelity(optics::apply_unitary(zero.unitary(), z0), z0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("below threshold: step is a no-op") {
  FeedbackConfig cfg;
  FeedbackController ctl(CompensatorState{}, cfg);
  auto est = exact_estimator(PolarizationUnitary::identity());
  auto before = ctl.state().phases;
  StepResult r = ctl.step(est);
  CHECK_FALSE(r.acted);
  CHECK(ctl.state().phases == before);
}

TEST_CASE("unavailable estimate: waits for more data") {
  FeedbackConfig cfg;
  FeedbackController ctl(CompensatorState{}, cfg);
  Estimator starving = [](const CompensatorState&) { return QberEstimate{}; };
  StepResult r = ctl.step(starving);
  CHECK_FALSE(r.acted);
  CHECK_FALSE(r.before.available);
}

TEST_CASE("single-axis misalignment: monotone descent to threshold") {
  // 0.2 rad differential phase drift: QBER = sin^2(0.1) ~ 1%.
  auto est = exact_estimator(PolarizationUnitary::phase_delay(0.2));
  FeedbackConfig cfg;
  cfg.qber_threshold = 0.001;
  FeedbackController ctl(CompensatorState{}, cfg);

  double prev_cost = 1e9;
  int steps = 0;
  bool reached = false;
  for (; steps < 50; ++steps) {
    StepResult r = ctl.step(est);
    if (!r.acted) {
      reached = r.before.worst() <= cfg.qber_threshold;
      break;
    }
    // Noiseless single-parameter problem: cost never increases.
    CHECK(r.cost_after <= prev_cost + 1e-12);
    prev_cost = r.cost_after;
  }
  CHECK(reached);
  CHECK(steps <= 50);
}

TEST_CASE("recovery from an injected 0.3 rad step within a few updates") {
  auto est = exact_estimator(PolarizationUnitary::phase_delay(0.3));
  FeedbackConfig cfg;
  FeedbackController ctl(CompensatorState{}, cfg);
  int used = 0;
  for (int i = 0; i < 60; ++i) {
    StepResult r = ctl.step(est);
    ++used;
    if (!r.acted) break;
  }
  CHECK(used < 15);
  CHECK(est(ctl.state()).worst() <= cfg.qber_threshold);
  CHECK_FALSE(ctl.stalled());
}

TEST_CASE("slew limit bounds every parameter change") {
  auto est = exact_estimator(PolarizationUnitary::phase_delay(1.5));
  FeedbackConfig cfg;
  CompensatorState init;
  init.slew_limit_rad = 0.05;
  FeedbackController ctl(init, cfg);
  auto before = ctl.state().phases;
  StepResult r = ctl.step(est);
  REQUIRE(r.acted);
  for (int p = 0; p < 4; ++p) {
    double d = std::abs(r.state.phases[p] - before[p]);
    d = std::min(d, 2.0 * M_PI - d);  // wrap distance
    CHECK(d <= 0.05 + 1e-12);
  }
}

TEST_CASE("persistent cost increases halve the rate and stall") {
  // Adversarial estimator: cost always grows.
  FeedbackConfig cfg;
  cfg.qber_threshold = 0.001;
  FeedbackController ctl(CompensatorState{}, cfg);
  int calls = 0;
  Estimator hostile = [&calls](const CompensatorState&) {
    QberEstimate e;
    e.available = true;
    e.samples_z = e.samples_x = 100000;
    e.qber_z = e.qber_x = 0.05 + 0.001 * static_cast<double>(calls++);
    return e;
  };
  bool stalled = false;
  for (int i = 0; i < 200 && !stalled; ++i) {
    StepResult r = ctl.step(hostile);
    stalled = r.stalled;
  }
  CHECK(stalled);
  CHECK(ctl.halvings() >= 5);
  CHECK(ctl.learning_rate() < cfg.learning_rate);
}

TEST_CASE("random-walk drift below slew capability stays bounded") {
  FeedbackConfig cfg;
  cfg.qber_threshold = 0.005;
  FeedbackController ctl(CompensatorState{}, cfg);
  CounterRng rng(314);
  PolarizationUnitary drift = PolarizationUnitary::identity();
  double worst_seen = 0;
  for (int step = 0; step < 200; ++step) {
    double a = rng.next_double() * 2.0 * M_PI;
    drift = PolarizationUnitary::from_euler(a, 0.02, -a) * drift;
    auto est = exact_estimator(drift);
    StepResult r = ctl.step(est);
    worst_seen = std::max(worst_seen, est(ctl.state()).worst());
    CHECK_FALSE(r.stalled);
  }
  CHECK(worst_seen < 0.05);
}
