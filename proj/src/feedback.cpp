#include "qkd/feedback.hpp"

#include <cmath>
#include <stdexcept>

namespace qkd::feedback {

using optics::PolarizationUnitary;

namespace {
double wrap_phase(double p) {
  double w = std::fmod(p, 2.0 * M_PI);
  if (w < 0.0) w += 2.0 * M_PI;
  return w;
}
}  // namespace

PolarizationUnitary CompensatorState::unitary() const {
  // Two cascaded stages, each a rotation preceded by a differential phase.
  PolarizationUnitary u = PolarizationUnitary::from_euler(phases[3], phases[2], 0.0) *
                          PolarizationUnitary::from_euler(phases[1], phases[0], 0.0);
  return u;
}

void CompensatorState::wrap() {
  for (double& p : phases) p = wrap_phase(p);
}

void FeedbackConfig::validate() const {
  if (!(qber_threshold > 0.0 && qber_threshold < 0.5))
    throw std::invalid_argument("qber_threshold must lie in (0, 0.5)");
  if (probe_step_rad <= 0.0 || learning_rate <= 0.0)
    throw std::invalid_argument("probe_step_rad and learning_rate must be > 0");
  if (max_iterations <= 0)
    throw std::invalid_argument("max_iterations must be > 0");
}

QberEstimate estimate_qber(uint64_t z_total, uint64_t z_err, uint64_t x_total,
                           uint64_t x_err, uint64_t min_samples) {
  QberEstimate e;
  e.samples_z = z_total;
  e.samples_x = x_total;
  if (z_total < min_samples || x_total < min_samples) return e;
  e.qber_z = static_cast<double>(z_err) / static_cast<double>(z_total);
  e.qber_x = static_cast<double>(x_err) / static_cast<double>(x_total);
  e.stderr_z =
      std::sqrt(e.qber_z * (1.0 - e.qber_z) / static_cast<double>(z_total));
  e.stderr_x =
      std::sqrt(e.qber_x * (1.0 - e.qber_x) / static_cast<double>(x_total));
  e.available = true;
  return e;
}

FeedbackController::FeedbackController(CompensatorState initial,
                                       FeedbackConfig config)
    : state_(initial), config_(config), learning_rate_(config.learning_rate) {
  config_.validate();
  state_.wrap();
}

StepResult FeedbackController::step(const Estimator& estimate) {
  StepResult result;
  result.before = estimate(state_);
  result.state = state_;
  if (!result.before.available) return result;
  if (result.before.worst() <= config_.qber_threshold) {
    // Below threshold: no probing, no update.
    consecutive_increases_ = 0;
    result.cost_after = result.before.cost();
    return result;
  }
  if (stalled()) {
    result.stalled = true;
    result.cost_after = result.before.cost();
    return result;
  }

  // Symmetric finite differences on each phase: 8 probe evaluations.
  std::array<double, 4> grad{};
  for (int p = 0; p < 4; ++p) {
    CompensatorState plus = state_, minus = state_;
    plus.phases[p] += config_.probe_step_rad;
    minus.phases[p] -= config_.probe_step_rad;
    plus.wrap();
    minus.wrap();
    QberEstimate ep = estimate(plus);
    QberEstimate em = estimate(minus);
    if (!ep.available || !em.available) {
      result.cost_after = result.before.cost();
      return result;  // wait for more data
    }
    grad[p] = (ep.cost() - em.cost()) / (2.0 * config_.probe_step_rad);
  }

  CompensatorState next = state_;
  for (int p = 0; p < 4; ++p) {
    double step = -learning_rate_ * grad[p];
    step = std::clamp(step, -state_.slew_limit_rad, state_.slew_limit_rad);
    next.phases[p] += step;
  }
  next.wrap();

  QberEstimate after = estimate(next);
  result.cost_after = after.available ? after.cost() : result.before.cost();
  if (after.available && after.cost() > result.before.cost()) {
    if (++consecutive_increases_ >= 3) {
      learning_rate_ *= 0.5;
      ++halvings_;
      consecutive_increases_ = 0;
    }
  } else {
    consecutive_increases_ = 0;
  }
  state_ = next;
  result.state = state_;
  result.acted = true;
  result.stalled = stalled();
  return result;
}

}  // namespace qkd::feedback
