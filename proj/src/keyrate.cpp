#include "qkd/keyrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace qkd::keyrate {

namespace {

// Deviation in the bits convention used by the bound set.
double delta_bits(double n, double eps) {
  if (n <= 0.0) return 0.0;
  return std::sqrt(0.5 * n * std::log2(1.0 / eps));
}

// Finite-key correction of the phase error estimate.
double gamma_correction(double a, double b, double c, double d) {
  if (b <= 0.0 || b >= 1.0 || c <= 0.0 || d <= 0.0) return 0.0;
  double t1 = (c + d) * (1.0 - b) * b / (c * d * std::log(2.0));
  double t2 = std::log2((c + d) / (c * d * (1.0 - b) * b) * (21.0 * 21.0) /
                        (a * a));
  if (t2 <= 0.0) return 0.0;
  return std::sqrt(t1 * t2);
}

struct BasisBounds {
  double s0_lower, s0_upper, s1_lower;
  bool clamped;
};

BasisBounds basis_bounds(double n_mu, double n_nu, double m_nu, double n_tot,
                         double m_tot, double mu, double nu, double p_mu,
                         double tau0, double tau1, double eps1,
                         bool finite_size) {
  double scale_mu = std::exp(mu) / p_mu;
  double scale_nu = std::exp(nu) / (1.0 - p_mu);
  double dn = finite_size ? delta_bits(n_tot, eps1) : 0.0;
  double dm = finite_size ? delta_bits(m_tot, eps1) : 0.0;
  bool clamped = false;

  double n_mu_plus = scale_mu * (n_mu + dn);
  double n_nu_minus_raw = n_nu - dn;
  if (n_nu_minus_raw < 0.0) {
    n_nu_minus_raw = 0.0;
    clamped = true;
  }
  double n_nu_minus = scale_nu * n_nu_minus_raw;

  double s0_raw = tau0 * (mu * n_nu_minus - nu * n_mu_plus) / (mu - nu);
  double s0_lower = std::max(0.0, s0_raw);
  if (s0_raw < 0.0) clamped = true;

  double s0_upper = std::min(2.0 * (m_tot + dm),
                             2.0 * tau0 * scale_nu * (m_nu + dm));

  double s1_raw = tau1 * mu / (nu * (mu - nu)) *
                  (n_nu_minus - (nu * nu) / (mu * mu) * n_mu_plus -
                   (mu * mu - nu * nu) / (mu * mu) * (s0_upper / tau0));
  double s1_lower = std::max(0.0, s1_raw);
  if (s1_raw < 0.0) clamped = true;

  // Physical range: the bounded event classes cannot exceed what was seen.
  if (s0_lower > n_tot) {
    s0_lower = n_tot;
    clamped = true;
  }
  if (s1_lower > n_tot - s0_lower) {
    s1_lower = n_tot - s0_lower;
    clamped = true;
  }

  return {s0_lower, s0_upper, s1_lower, clamped};
}

}  // namespace

void SiftedCounts::validate() const {
  auto check = [](double m, double n, const char* what) {
    if (m < 0.0 || n < 0.0 || m > n)
      throw std::invalid_argument(std::string("counts require 0 <= m <= n: ") +
                                  what);
  };
  check(m_z_mu, n_z_mu, "z/mu");
  check(m_z_nu, n_z_nu, "z/nu");
  check(m_x_mu, n_x_mu, "x/mu");
  check(m_x_nu, n_x_nu, "x/nu");
  if (t_s <= 0.0) throw std::invalid_argument("acquisition duration t must be > 0");
}

void SecurityParams::validate() const {
  if (!(eps_sec > 0.0 && eps_sec < 1.0))
    throw std::invalid_argument("eps_sec must lie in (0, 1)");
  if (!(eps_cor > 0.0 && eps_cor < 1.0))
    throw std::invalid_argument("eps_cor must lie in (0, 1)");
  if (f_ec < 1.0) throw std::invalid_argument("f_ec must be >= 1");
}

double tau_n(int n, const optics::IntensitySetting& intensities) {
  if (n < 0) throw std::invalid_argument("tau_n requires n >= 0");
  double log_fact = std::lgamma(static_cast<double>(n) + 1.0);
  auto term = [&](double k, double p) {
    if (k <= 0.0) return n == 0 ? p : 0.0;
    return p * std::exp(-k + n * std::log(k) - log_fact);
  };
  return term(intensities.mu, intensities.p_mu) +
         term(intensities.nu, intensities.p_nu());
}

double hoeffding_delta(double n, double eps) {
  if (n < 0.0) throw std::invalid_argument("hoeffding_delta requires n >= 0");
  if (!(eps > 0.0 && eps <= 1.0))
    throw std::invalid_argument("hoeffding_delta requires eps in (0, 1]");
  if (n == 0.0) return 0.0;
  return std::sqrt(0.5 * n * std::log(1.0 / eps));
}

DecoyBounds decoy_bounds(const SiftedCounts& counts,
                         const optics::IntensitySetting& intensities,
                         const SecurityParams& sec) {
  intensities.validate();
  counts.validate();
  double mu = intensities.mu, nu = intensities.nu, p_mu = intensities.p_mu;
  double eps1 = sec.eps_sec / 19.0;
  double tau0 = tau_n(0, intensities);
  double tau1 = tau_n(1, intensities);

  BasisBounds z = basis_bounds(counts.n_z_mu, counts.n_z_nu, counts.m_z_nu,
                               counts.n_z(), counts.m_z(), mu, nu, p_mu, tau0,
                               tau1, eps1, sec.finite_size);
  BasisBounds x = basis_bounds(counts.n_x_mu, counts.n_x_nu, counts.m_x_nu,
                               counts.n_x(), counts.m_x(), mu, nu, p_mu, tau0,
                               tau1, eps1, sec.finite_size);

  DecoyBounds out;
  out.s_z0_lower = z.s0_lower;
  out.s_z0_upper = z.s0_upper;
  out.s_z1_lower = z.s1_lower;
  out.s_x0_lower = x.s0_lower;
  out.s_x0_upper = x.s0_upper;
  out.s_x1_lower = x.s1_lower;
  out.clamped = z.clamped || x.clamped;

  double dm = sec.finite_size ? delta_bits(counts.m_x(), eps1) : 0.0;
  double m_mu_plus = std::exp(mu) / p_mu * (counts.m_x_mu + dm);
  double m_nu_minus = std::exp(nu) / (1.0 - p_mu) *
                      std::max(0.0, counts.m_x_nu - dm);
  double v_raw = tau1 * (m_mu_plus - m_nu_minus) / (mu - nu);
  out.v_x1_upper = std::clamp(v_raw, 0.0, out.s_x1_lower);
  if (v_raw < 0.0 || v_raw > out.s_x1_lower) out.clamped = true;
  return out;
}

double phase_error_upper(double s_z1_lower, double s_x1_lower,
                         double v_x1_upper, const SecurityParams& sec) {
  if (s_x1_lower <= 0.0) return 0.5;
  double b = std::clamp(v_x1_upper / s_x1_lower, 0.0, 1.0);
  double phi = b + gamma_correction(sec.eps_sec, b, s_z1_lower, s_x1_lower);
  return std::clamp(phi, 0.0, 0.5);
}

std::pair<double, double> key_length(const DecoyBounds& bounds,
                                     double phi_z_upper,
                                     const SiftedCounts& counts,
                                     const SecurityParams& sec) {
  double n_z = counts.n_z();
  double qber_z = n_z > 0.0 ? counts.m_z() / n_z : 0.0;
  double leak = sec.f_ec * n_z * optics::binary_entropy(qber_z);
  double l = bounds.s_z0_lower +
             bounds.s_z1_lower * (1.0 - optics::binary_entropy(phi_z_upper)) -
             leak - 6.0 * std::log2(19.0 / sec.eps_sec) -
             std::log2(2.0 / sec.eps_cor);
  l = std::max(0.0, std::floor(l));
  return {l, l / counts.t_s};
}

KeyRateReport analyze(const SiftedCounts& counts,
                      const optics::IntensitySetting& intensities,
                      const SecurityParams& sec) {
  sec.validate();
  DecoyBounds bounds = decoy_bounds(counts, intensities, sec);
  double phi = phase_error_upper(bounds.s_z1_lower, bounds.s_x1_lower,
                                 bounds.v_x1_upper, sec);
  auto [l, skr] = key_length(bounds, phi, counts, sec);

  KeyRateReport r;
  r.tau_0 = tau_n(0, intensities);
  r.tau_1 = tau_n(1, intensities);
  r.s_z0_lower = bounds.s_z0_lower;
  r.s_z1_lower = bounds.s_z1_lower;
  r.s_x1_lower = bounds.s_x1_lower;
  r.v_x1_upper = bounds.v_x1_upper;
  r.phi_z_upper = phi;
  r.leak_ec = sec.f_ec * counts.n_z() *
              optics::binary_entropy(counts.n_z() > 0.0
                                         ? counts.m_z() / counts.n_z()
                                         : 0.0);
  r.key_length = l;
  r.skr = skr;
  r.qber_z = counts.n_z() > 0.0 ? counts.m_z() / counts.n_z() : 0.0;
  r.qber_x = counts.n_x() > 0.0 ? counts.m_x() / counts.n_x() : 0.0;
  r.clamped = bounds.clamped;
  return r;
}

std::string report_to_json(const KeyRateReport& r) {
  nlohmann::ordered_json j;
  j["tau_0"] = r.tau_0;
  j["tau_1"] = r.tau_1;
  j["s_z0_lower"] = r.s_z0_lower;
  j["s_z1_lower"] = r.s_z1_lower;
  j["s_x1_lower"] = r.s_x1_lower;
  j["v_x1_upper"] = r.v_x1_upper;
  j["phi_z_upper"] = r.phi_z_upper;
  j["leak_ec"] = r.leak_ec;
  j["key_length_bits"] = r.key_length;
  j["skr_bps"] = r.skr;
  j["qber_z"] = r.qber_z;
  j["qber_x"] = r.qber_x;
  j["clamped"] = r.clamped;
  return j.dump(2);
}

}  // namespace qkd::keyrate
