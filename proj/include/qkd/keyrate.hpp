#pragma once

#include <cstdint>
#include <string>

#include "qkd/optics.hpp"

namespace qkd::keyrate {

// Sifted detection and error counts per basis and intensity class, plus the
// acquisition duration. Stored as doubles: real counts are integral and well
// below 2^53, and the decoy-bound test oracles feed fractional expectation
// values through the same interface.
struct SiftedCounts {
  double n_z_mu = 0, n_z_nu = 0, n_x_mu = 0, n_x_nu = 0;
  double m_z_mu = 0, m_z_nu = 0, m_x_mu = 0, m_x_nu = 0;
  double t_s = 0;  // acquisition duration

  double n_z() const { return n_z_mu + n_z_nu; }
  double n_x() const { return n_x_mu + n_x_nu; }
  double m_z() const { return m_z_mu + m_z_nu; }
  double m_x() const { return m_x_mu + m_x_nu; }
  void validate() const;  // throws std::invalid_argument
};

struct SecurityParams {
  double eps_sec = 1e-9;
  double eps_cor = 1e-15;
  double f_ec = 1.16;       // error-correction inefficiency
  bool finite_size = true;  // false: drop deviation terms (diagnostics only)
  void validate() const;
};

struct DecoyBounds {
  double s_z0_lower = 0, s_x0_lower = 0;
  double s_z0_upper = 0, s_x0_upper = 0;
  double s_z1_lower = 0, s_x1_lower = 0;
  double v_x1_upper = 0;
  bool clamped = false;  // any raw bound fell outside its physical range
};

struct KeyRateReport {
  double tau_0 = 0, tau_1 = 0;
  double s_z0_lower = 0, s_z1_lower = 0, s_x1_lower = 0;
  double v_x1_upper = 0;
  double phi_z_upper = 0;
  double leak_ec = 0;
  double key_length = 0;  // bits
  double skr = 0;         // bits/second
  double qber_z = 0, qber_x = 0;
  bool clamped = false;
};

// tau_n = sum_k p_k e^{-k} k^n / n! over k in {mu, nu}.
double tau_n(int n, const optics::IntensitySetting& intensities);

// Hoeffding deviation sqrt((n/2) ln(1/eps)).
double hoeffding_delta(double n, double eps);

// One-decoy bounds with finite-size deviations. The per-use failure
// probability is eps_sec/19, matching the 19-term secrecy budget of the key
// length formula. Deviations use the bits-convention delta
// sqrt((n/2) log2(1/eps1)); the vacuum upper bound takes the tighter of the
// total-error bound 2(m_b + delta) and the decoy-class error bound
// 2 tau_0 (e^nu/p_nu)(m_{b,nu} + delta).
DecoyBounds decoy_bounds(const SiftedCounts& counts,
                         const optics::IntensitySetting& intensities,
                         const SecurityParams& sec);

// phi_z^U = v/s_x1 + gamma(eps_sec, v/s_x1, s_z1, s_x1), clamped to [0, 0.5].
double phase_error_upper(double s_z1_lower, double s_x1_lower,
                         double v_x1_upper, const SecurityParams& sec);

// Secure key length and rate:
// l = s_z0 + s_z1 (1 - h(phi)) - leak_EC - 6 log2(19/eps_sec) - log2(2/eps_cor)
// with leak_EC = f_ec * n_z * h(QBER_z), clamped at zero and floored.
std::pair<double, double> key_length(const DecoyBounds& bounds,
                                     double phi_z_upper,
                                     const SiftedCounts& counts,
                                     const SecurityParams& sec);

// Full pipeline: bounds -> phase error -> key length.
KeyRateReport analyze(const SiftedCounts& counts,
                      const optics::IntensitySetting& intensities,
                      const SecurityParams& sec);

std::string report_to_json(const KeyRateReport& report);

}  // namespace qkd::keyrate
