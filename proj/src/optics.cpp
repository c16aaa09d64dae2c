#include "qkd/optics.hpp"

#include <cmath>
#include <stdexcept>

namespace qkd::optics {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
}

double Bb84Symbol::theta() const {
  if (basis == Basis::Z) return bit ? M_PI : 0.0;
  return bit ? 1.5 * M_PI : 0.5 * M_PI;
}

double PolarizationState::norm() const {
  return std::sqrt(std::norm(h) + std::norm(v));
}

complexd inner_product(const PolarizationState& a, const PolarizationState& b) {
  return std::conj(a.h) * b.h + std::conj(a.v) * b.v;
}

double fidelity(const PolarizationState& a, const PolarizationState& b) {
  return std::norm(inner_product(a, b));
}

PolarizationUnitary::PolarizationUnitary() {
  m_[0][0] = 1.0;
  m_[0][1] = 0.0;
  m_[1][0] = 0.0;
  m_[1][1] = 1.0;
}

PolarizationUnitary PolarizationUnitary::identity() { return {}; }

PolarizationUnitary PolarizationUnitary::rotation(double angle) {
  PolarizationUnitary u;
  double c = std::cos(angle), s = std::sin(angle);
  u.m_[0][0] = c;
  u.m_[0][1] = -s;
  u.m_[1][0] = s;
  u.m_[1][1] = c;
  return u;
}

PolarizationUnitary PolarizationUnitary::phase_delay(double phi) {
  PolarizationUnitary u;
  u.m_[0][0] = 1.0;
  u.m_[0][1] = 0.0;
  u.m_[1][0] = 0.0;
  u.m_[1][1] = std::polar(1.0, phi);
  return u;
}

PolarizationUnitary PolarizationUnitary::from_euler(double alpha, double theta,
                                                    double beta) {
  auto rz = [](double a) {
    PolarizationUnitary u;
    u.m_[0][0] = std::polar(1.0, -0.5 * a);
    u.m_[0][1] = 0.0;
    u.m_[1][0] = 0.0;
    u.m_[1][1] = std::polar(1.0, 0.5 * a);
    return u;
  };
  auto ry = [](double t) {
    PolarizationUnitary u;
    double c = std::cos(0.5 * t), s = std::sin(0.5 * t);
    u.m_[0][0] = c;
    u.m_[0][1] = -s;
    u.m_[1][0] = s;
    u.m_[1][1] = c;
    return u;
  };
  return rz(alpha) * ry(theta) * rz(beta);
}

PolarizationUnitary PolarizationUnitary::random(CounterRng& rng) {
  double alpha = rng.next_double() * 2.0 * M_PI;
  double beta = rng.next_double() * 2.0 * M_PI;
  double theta = rng.next_double() * M_PI;
  return from_euler(alpha, theta, beta);
}

PolarizationUnitary PolarizationUnitary::operator*(
    const PolarizationUnitary& rhs) const {
  PolarizationUnitary out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.m_[i][j] = m_[i][0] * rhs.m_[0][j] + m_[i][1] * rhs.m_[1][j];
  return out;
}

PolarizationUnitary PolarizationUnitary::adjoint() const {
  PolarizationUnitary out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.m_[i][j] = std::conj(m_[j][i]);
  return out;
}

bool PolarizationUnitary::is_unitary(double tol) const {
  PolarizationUnitary p = adjoint() * (*this);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      complexd want = (i == j) ? complexd{1.0, 0.0} : complexd{0.0, 0.0};
      if (std::abs(p.m_[i][j] - want) > tol) return false;
    }
  complexd det = m_[0][0] * m_[1][1] - m_[0][1] * m_[1][0];
  return std::abs(std::abs(det) - 1.0) <= tol;
}

void IntensitySetting::validate() const {
  if (!(mu > nu && nu > 0.0))
    throw std::invalid_argument("intensities require mu > nu > 0");
  if (!(p_mu > 0.0 && p_mu < 1.0))
    throw std::invalid_argument("p_mu must lie in (0, 1)");
  if (!(p_z > 0.0 && p_z < 1.0))
    throw std::invalid_argument("p_z must lie in (0, 1)");
}

PolarizationState symbol_to_state(Bb84Symbol symbol) {
  PolarizationState s;
  s.h = kInvSqrt2;
  s.v = std::polar(kInvSqrt2, symbol.theta());
  return s;
}

PolarizationState apply_unitary(const PolarizationUnitary& u,
                                const PolarizationState& s) {
  PolarizationState out;
  out.h = u.at(0, 0) * s.h + u.at(0, 1) * s.v;
  out.v = u.at(1, 0) * s.h + u.at(1, 1) * s.v;
  return out;
}

std::pair<double, double> measurement_probabilities(
    const PolarizationState& s, Basis basis,
    const PolarizationUnitary& compensation) {
  PolarizationState r = apply_unitary(compensation, s);
  double p0 = fidelity(symbol_to_state({basis, 0}), r);
  double p1 = fidelity(symbol_to_state({basis, 1}), r);
  // Renormalize away rounding so the pair sums to one exactly.
  double sum = p0 + p1;
  if (sum > 0.0) {
    p0 /= sum;
    p1 /= sum;
  }
  return {p0, p1};
}

int poisson_photon_number(double mean, CounterRng& rng) {
  if (mean < 0.0) throw std::invalid_argument("mean photon number < 0");
  return poisson_sample(mean, rng);
}

double binary_entropy(double x) {
  if (x < 0.0 || x > 1.0)
    throw std::domain_error("binary_entropy argument outside [0, 1]");
  if (x == 0.0 || x == 1.0) return 0.0;
  return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

}  // namespace qkd::optics
