#pragma once

#include <array>
#include <cstdint>
#include <functional>

#include "qkd/optics.hpp"

namespace qkd::feedback {

// Four phase-shifter settings of the receiver's compensation stages. Phases
// are periodic: every update wraps into [0, 2*pi).
struct CompensatorState {
  std::array<double, 4> phases{0.0, 0.0, 0.0, 0.0};
  double slew_limit_rad = 0.5;  // max per-parameter change per update

  // Rz(p3) * Ry(p2) * Rz(p1) * Ry(p0): covers SU(2) up to global phase.
  optics::PolarizationUnitary unitary() const;
  void wrap();
};

struct FeedbackConfig {
  double qber_threshold = 0.01;
  double probe_step_rad = 0.05;       // finite-difference probe amplitude
  double learning_rate = 0.8;
  uint64_t min_samples_per_estimate = 400;
  int max_iterations = 1000;
  void validate() const;
};

struct QberEstimate {
  double qber_z = 0, qber_x = 0;
  double stderr_z = 0, stderr_x = 0;  // binomial standard errors
  uint64_t samples_z = 0, samples_x = 0;
  bool available = false;

  double cost() const { return qber_z + qber_x; }
  double worst() const { return qber_z > qber_x ? qber_z : qber_x; }
};

// Empirical error fractions from public-slot tallies. Unavailable until both
// bases reach min_samples.
QberEstimate estimate_qber(uint64_t z_total, uint64_t z_err, uint64_t x_total,
                           uint64_t x_err, uint64_t min_samples);

// Evaluates the link QBER at the given compensator setting.
using Estimator = std::function<QberEstimate(const CompensatorState&)>;

struct StepResult {
  CompensatorState state;
  QberEstimate before;
  double cost_after = 0;
  bool acted = false;    // probes were run and an update applied
  bool stalled = false;  // learning rate exhausted
};

// Gradient-descent controller over the four compensator phases. Each step
// estimates the cost gradient by symmetric finite differences (8 probe
// evaluations), applies a slew-limited descent update and adapts the learning
// rate: three consecutive cost increases halve it, five halvings stall.
class FeedbackController {
 public:
  FeedbackController(CompensatorState initial, FeedbackConfig config);

  StepResult step(const Estimator& estimate);

  const CompensatorState& state() const { return state_; }
  const FeedbackConfig& config() const { return config_; }
  double learning_rate() const { return learning_rate_; }
  int halvings() const { return halvings_; }
  bool stalled() const { return halvings_ >= 5; }

 private:
  CompensatorState state_;
  FeedbackConfig config_;
  double learning_rate_;
  int consecutive_increases_ = 0;
  int halvings_ = 0;
};

}  // namespace qkd::feedback
