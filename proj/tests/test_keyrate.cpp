#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "qkd/keyrate.hpp"
#include "qkd/rng.hpp"

using namespace qkd;
using namespace qkd::keyrate;
using optics::IntensitySetting;

namespace {

// Published raw counts used as golden inputs (50 / 100 / 150 km).
struct GoldenRow {
  IntensitySetting in;
  SiftedCounts counts;
  double s_z1, phi, l, skr;
};

std::vector<GoldenRow> golden_rows() {
  std::vector<GoldenRow> rows(3);
  rows[0].in = {0.568, 0.144, 0.799, 0.944};
  rows[0].counts = {9628161, 613101, 575986, 35863, 62566, 4387, 3379, 236, 42.3};
  rows[0].s_z1 = 5280589;
  rows[0].phi = 0.0224;
  rows[0].l = 3787713;
  rows[0].skr = 8.96e4;
  rows[1].in = {0.565, 0.143, 0.798, 0.944};
  rows[1].counts = {9419400, 602441, 557703, 35140, 70873, 5644, 2576, 200, 317.8};
  rows[1].s_z1 = 5155932;
  rows[1].phi = 0.0177;
  rows[1].l = 3742736;
  rows[1].skr = 1.18e4;
  rows[2].in = {0.564, 0.142, 0.798, 0.944};
  rows[2].counts = {9456469, 621718, 577883, 37593, 126891, 9973, 4653, 334, 3640.4};
  rows[2].s_z1 = 5317027;
  rows[2].phi = 0.0270;
  rows[2].l = 3152614;
  rows[2].skr = 8.66e2;
  return rows;
}

// Expectation-value counts from a known per-photon-number yield model: the
// independent oracle for the decoy bounds. Poisson terms truncated at n=24
// (tail < 1e-20 for the intensities used here).
struct YieldModel {
  double y0;        // vacuum yield (dark-driven)
  double eta;       // per-photon transmittance
  double e_det;     // detector misalignment error
  double n_pulses;  // pulses per intensity class normalization

  double yield(int n) const {
    return 1.0 - (1.0 - y0) * std::pow(1.0 - eta, n);
  }
  double error_rate(int n) const {
    double y = yield(n);
    if (y <= 0.0) return 0.0;
    double e = (0.5 * y0 + e_det * (1.0 - std::pow(1.0 - eta, n))) / y;
    return std::min(e, 0.5);
  }
};

void fill_counts(const YieldModel& m, const IntensitySetting& in,
                 SiftedCounts& c, double& s0_true, double& s1_true) {
  auto accum = [&](double k, double p_k, double& n_out, double& m_out) {
    double log_fact = 0.0;
    for (int n = 0; n <= 24; ++n) {
      if (n > 0) log_fact += std::log(n);
      double pois = std::exp(-k + n * std::log(std::max(k, 1e-300)) - log_fact);
      if (n == 0) pois = std::exp(-k);
      double cnt = m.n_pulses * p_k * pois * m.yield(n);
      n_out += cnt;
      m_out += cnt * m.error_rate(n);
    }
  };
  c = {};
  c.t_s = 1.0;
  accum(in.mu, in.p_mu, c.n_z_mu, c.m_z_mu);
  accum(in.nu, in.p_nu(), c.n_z_nu, c.m_z_nu);
  c.n_x_mu = c.n_z_mu;
  c.m_x_mu = c.m_z_mu;
  c.n_x_nu = c.n_z_nu;
  c.m_x_nu = c.m_z_nu;
  // True vacuum / single-photon detection counts across both classes.
  double tau0 = tau_n(0, in), tau1 = tau_n(1, in);
  s0_true = m.n_pulses * tau0 * m.yield(0);
  s1_true = m.n_pulses * tau1 * m.yield(1);
}

}  // namespace

TEST_CASE("tau_n values and normalization") {
  IntensitySetting in{0.565, 0.143, 0.798, 0.944};
  // Direct evaluation: 0.798 e^-0.565 0.565 + 0.202 e^-0.143 0.143.
  double expect = 0.798 * std::exp(-0.565) * 0.565 + 0.202 * std::exp(-0.143) * 0.143;
  CHECK(tau_n(1, in) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(tau_n(1, in) == doctest::Approx(0.2812).epsilon(5e-4));

  double sum = 0.0;
  for (int n = 0; n <= 50; ++n) sum += tau_n(n, in);
  CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("hoeffding delta") {
  CHECK(hoeffding_delta(0, 1e-10) == 0.0);
  // sqrt(5e6 * ln(1e10))
  CHECK(hoeffding_delta(1e7, 1e-10) ==
        doctest::Approx(std::sqrt(5e6 * std::log(1e10))).epsilon(1e-12));
  CHECK(hoeffding_delta(1e7, 1e-10) == doctest::Approx(10729.83).epsilon(1e-4));
  // Monotone in n, antitone in eps.
  CHECK(hoeffding_delta(2e7, 1e-10) > hoeffding_delta(1e7, 1e-10));
  CHECK(hoeffding_delta(1e7, 1e-8) < hoeffding_delta(1e7, 1e-10));
  CHECK_THROWS_AS(hoeffding_delta(-1, 1e-10), std::invalid_argument);
}

TEST_CASE("golden rows reproduce the published bound set") {
  SecurityParams sec;  // eps_sec 1e-9, eps_cor 1e-15, f_ec 1.16
  for (const auto& row : golden_rows()) {
    KeyRateReport r = analyze(row.counts, row.in, sec);
    CHECK(std::abs(r.s_z1_lower - row.s_z1) / row.s_z1 < 0.02);
    CHECK(std::abs(r.phi_z_upper - row.phi) / row.phi < 0.10);
    CHECK(std::abs(r.key_length - row.l) / row.l < 0.05);
    CHECK(std::abs(r.skr - row.skr) / row.skr < 0.05);
  }
}

TEST_CASE("zero counts give a zero-length key") {
  SiftedCounts zero;
  zero.t_s = 10.0;
  IntensitySetting in{0.5, 0.125, 0.75, 0.9};
  KeyRateReport r = analyze(zero, in, SecurityParams{});
  CHECK(r.key_length == 0.0);
  CHECK(r.skr == 0.0);
  CHECK(r.s_z1_lower == 0.0);
}

TEST_CASE("decoy bounds reject mu <= nu") {
  SiftedCounts c;
  c.n_z_mu = c.n_z_nu = c.n_x_mu = c.n_x_nu = 100;
  c.t_s = 1;
  IntensitySetting bad{0.2, 0.2, 0.7, 0.9};
  CHECK_THROWS_AS(decoy_bounds(c, bad, SecurityParams{}), std::invalid_argument);
}

TEST_CASE("decoy bounds bracket the Poisson-mixture oracle (1000 instances)") {
  // Finite-size deviations only widen the bounds, so bracketing must hold
  // with the default security parameters too.
  SecurityParams sec;
  CounterRng rng(77001);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    IntensitySetting in;
    in.mu = 0.3 + 0.35 * rng.next_double();
    in.nu = 0.02 + rng.next_double() * (in.mu / 2.2 - 0.02);
    in.p_mu = 0.3 + 0.6 * rng.next_double();
    in.p_z = 0.9;
    YieldModel m;
    m.y0 = std::pow(10.0, -7.0 + 4.0 * rng.next_double());
    m.eta = std::pow(10.0, -4.0 + 3.5 * rng.next_double());
    m.e_det = 0.001 + 0.05 * rng.next_double();
    m.n_pulses = 1e9;

    SiftedCounts c;
    double s0_true = 0, s1_true = 0;
    fill_counts(m, in, c, s0_true, s1_true);
    DecoyBounds b = decoy_bounds(c, in, sec);

    REQUIRE(b.s_z0_lower <= s0_true * (1.0 + 1e-9) + 1e-9);
    REQUIRE(b.s_z0_upper >= s0_true * (1.0 - 1e-9) - 1e-9);
    REQUIRE(b.s_z1_lower <= s1_true * (1.0 + 1e-9) + 1e-9);

    // Single-photon errors in X upper-bounded.
    double v_true = m.n_pulses * tau_n(1, in) * m.yield(1) * m.error_rate(1);
    if (b.s_x1_lower > 0)
      REQUIRE(b.v_x1_upper >= std::min(v_true, b.s_x1_lower) * (1.0 - 1e-9) - 1e-9);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("zero-deviation bound is tight on synthetic counts") {
  // The multi-photon and vacuum-term slack of the one-decoy bound costs a few
  // percent even with deviations off; 0.935 is the oracle value for this
  // model (frozen here, with the upper side guaranteed by bracketing).
  SecurityParams sec;
  sec.finite_size = false;
  IntensitySetting in{0.565, 0.143, 0.798, 0.944};
  YieldModel m{1e-6, 2e-2, 0.005, 1e9};
  SiftedCounts c;
  double s0_true = 0, s1_true = 0;
  fill_counts(m, in, c, s0_true, s1_true);
  DecoyBounds b = decoy_bounds(c, in, sec);
  CHECK(b.s_z1_lower <= s1_true);
  CHECK(b.s_z1_lower / s1_true == doctest::Approx(0.935).epsilon(0.01));
}

TEST_CASE("phase error clamps and continuity") {
  SecurityParams sec;
  CHECK(phase_error_upper(1000, 0, 0, sec) == 0.5);
  // No observed errors: the gamma term vanishes with the ratio.
  CHECK(phase_error_upper(1e6, 1e6, 0, sec) == 0.0);
  // Same error ratio, larger samples: smaller finite-size penalty.
  double small = phase_error_upper(1e4, 1e4, 100, sec);
  double large = phase_error_upper(1e7, 1e7, 1e5, sec);
  CHECK(small > large);
  CHECK(large > 0.01);  // ratio term persists
  // Grid check: gamma decreases in both sample-size arguments.
  double prev = 1.0;
  for (double scale : {1e3, 1e4, 1e5, 1e6, 1e7}) {
    double phi = phase_error_upper(scale, scale, 0.01 * scale, sec);
    CHECK(phi <= prev + 1e-15);
    prev = phi;
  }
}

TEST_CASE("key length monotonicity") {
  auto rows = golden_rows();
  const auto& row = rows[0];
  SecurityParams sec;
  KeyRateReport base = analyze(row.counts, row.in, sec);

  SecurityParams tighter = sec;
  tighter.eps_sec = 1e-12;
  CHECK(analyze(row.counts, row.in, tighter).key_length <= base.key_length);

  SiftedCounts worse = row.counts;
  worse.m_z_mu *= 1.5;
  worse.m_z_nu *= 1.5;
  CHECK(analyze(worse, row.in, sec).key_length < base.key_length);

  SiftedCounts worse_x = row.counts;
  worse_x.m_x_mu *= 2.0;
  worse_x.m_x_nu *= 2.0;
  KeyRateReport wx = analyze(worse_x, row.in, sec);
  CHECK(wx.phi_z_upper > base.phi_z_upper);
  CHECK(wx.key_length < base.key_length);
}

TEST_CASE("physicality: s0 + s1 never exceeds n_z") {
  CounterRng rng(555);
  SecurityParams sec;
  for (int i = 0; i < 200; ++i) {
    IntensitySetting in;
    in.mu = 0.3 + 0.5 * rng.next_double();
    in.nu = 0.02 + rng.next_double() * (in.mu / 2.2 - 0.02);
    in.p_mu = 0.3 + 0.6 * rng.next_double();
    in.p_z = 0.9;
    SiftedCounts c;
    c.n_z_mu = 1e5 + rng.next_double() * 1e7;
    c.n_z_nu = c.n_z_mu * (0.02 + 0.2 * rng.next_double());
    c.m_z_mu = c.n_z_mu * 0.01 * rng.next_double();
    c.m_z_nu = c.n_z_nu * 0.01 * rng.next_double();
    c.n_x_mu = c.n_z_mu * 0.06;
    c.n_x_nu = c.n_z_nu * 0.06;
    c.m_x_mu = c.n_x_mu * 0.01 * rng.next_double();
    c.m_x_nu = c.n_x_nu * 0.01 * rng.next_double();
    c.t_s = 1;
    DecoyBounds b = decoy_bounds(c, in, sec);
    REQUIRE(b.s_z0_lower + b.s_z1_lower <= c.n_z() * (1.0 + 1e-12));
  }
}

TEST_CASE("reports are deterministic") {
  auto rows = golden_rows();
  std::string a = report_to_json(analyze(rows[1].counts, rows[1].in, SecurityParams{}));
  std::string b = report_to_json(analyze(rows[1].counts, rows[1].in, SecurityParams{}));
  CHECK(a == b);
}
