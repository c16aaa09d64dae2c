#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "qkd/optics.hpp"

using namespace qkd;
using namespace qkd::optics;

namespace {
const Bb84Symbol kSymbols[4] = {
    {Basis::Z, 0}, {Basis::Z, 1}, {Basis::X, 0}, {Basis::X, 1}};
}

TEST_CASE("symbol encoding follows the four-state convention") {
  auto z0 = symbol_to_state({Basis::Z, 0});
  CHECK(z0.h.real() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(z0.v.real() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(z0.v.imag()) < 1e-12);

  auto x0 = symbol_to_state({Basis::X, 0});
  CHECK(x0.h.real() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(x0.v.imag() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(x0.v.real()) < 1e-12);

  CHECK(Bb84Symbol{Basis::Z, 1}.theta() == doctest::Approx(M_PI));
  CHECK(Bb84Symbol{Basis::X, 1}.theta() == doctest::Approx(1.5 * M_PI));
}

TEST_CASE("pairwise overlaps: orthogonal within a basis, 1/2 across") {
  for (const auto& a : kSymbols) {
    for (const auto& b : kSymbols) {
      double f = fidelity(symbol_to_state(a), symbol_to_state(b));
      if (a.basis == b.basis && a.bit == b.bit) {
        CHECK(f == doctest::Approx(1.0).epsilon(1e-12));
      } else if (a.basis == b.basis) {
        CHECK(f < 1e-12);
      } else {
        CHECK(f == doctest::Approx(0.5).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("apply_unitary basics") {
  auto s = symbol_to_state({Basis::Z, 0});
  auto same = apply_unitary(PolarizationUnitary::identity(), s);
  CHECK(fidelity(s, same) == doctest::Approx(1.0).epsilon(1e-12));

  // diag(1, e^{i pi}) flips Z0 onto Z1.
  auto flipped = apply_unitary(PolarizationUnitary::phase_delay(M_PI), s);
  CHECK(fidelity(flipped, symbol_to_state({Basis::Z, 1})) ==
        doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("random unitaries preserve norm and unitarity") {
  CounterRng rng(17);
  for (int i = 0; i < 10000; ++i) {
    auto u = PolarizationUnitary::random(rng);
    REQUIRE(u.is_unitary(1e-10));
    auto out = apply_unitary(u, symbol_to_state(kSymbols[i % 4]));
    REQUIRE(out.norm() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("unitary composition matches sequential application") {
  CounterRng rng(99);
  for (int i = 0; i < 1000; ++i) {
    auto u1 = PolarizationUnitary::random(rng);
    auto u2 = PolarizationUnitary::random(rng);
    auto s = symbol_to_state(kSymbols[i % 4]);
    auto seq = apply_unitary(u2, apply_unitary(u1, s));
    auto comp = apply_unitary(u2 * u1, s);
    REQUIRE(fidelity(seq, comp) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("measurement probabilities") {
  auto z0 = symbol_to_state({Basis::Z, 0});
  auto id = PolarizationUnitary::identity();

  auto [pz0, pz1] = measurement_probabilities(z0, Basis::Z, id);
  CHECK(pz0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pz1 < 1e-12);

  auto [px0, px1] = measurement_probabilities(z0, Basis::X, id);
  CHECK(px0 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(px1 == doctest::Approx(0.5).epsilon(1e-12));

  // A rotation by eps moves sin^2(eps) of the weight onto the wrong detector.
  for (double eps : {0.01, 0.1, 0.35, 1.0}) {
    auto [p0, p1] =
        measurement_probabilities(z0, Basis::Z, PolarizationUnitary::rotation(eps));
    CHECK(p1 == doctest::Approx(std::sin(eps) * std::sin(eps)).epsilon(1e-10));
    CHECK(p0 + p1 == doctest::Approx(1.0).epsilon(1e-12));
    // The same rotation leaves the X pair untouched.
    auto [q0, q1] = measurement_probabilities(symbol_to_state({Basis::X, 0}),
                                              Basis::X,
                                              PolarizationUnitary::rotation(eps));
    CHECK(q1 < 1e-10);
    (void)q0;
  }
}

TEST_CASE("probabilities sum to one for random states and compensations") {
  CounterRng rng(5);
  for (int i = 0; i < 1000; ++i) {
    auto u = PolarizationUnitary::random(rng);
    auto c = PolarizationUnitary::random(rng);
    auto s = apply_unitary(u, symbol_to_state(kSymbols[i % 4]));
    for (Basis b : {Basis::Z, Basis::X}) {
      auto [p0, p1] = measurement_probabilities(s, b, c);
      REQUIRE(p0 + p1 == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoded bit is recovered with certainty in the matching basis") {
  for (const auto& sym : kSymbols) {
    auto [p0, p1] = measurement_probabilities(
        symbol_to_state(sym), sym.basis, PolarizationUnitary::identity());
    CHECK((sym.bit == 0 ? p0 : p1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("poisson sampling") {
  CounterRng rng(42);
  for (int i = 0; i < 100; ++i) CHECK(poisson_photon_number(0.0, rng) == 0);

  const double mean = 0.565;
  const int n = 10000000;
  long long sum = 0, ones = 0;
  for (int i = 0; i < n; ++i) {
    int k = poisson_photon_number(mean, rng);
    sum += k;
    if (k == 1) ++ones;
  }
  CHECK(std::abs(static_cast<double>(sum) / n - mean) < 0.001);

  // P(n=1) = mean * e^{-mean}, binomial 3-sigma band.
  double p1 = mean * std::exp(-mean);
  double sigma = std::sqrt(p1 * (1.0 - p1) / n);
  CHECK(std::abs(static_cast<double>(ones) / n - p1) < 3.0 * sigma);
}

TEST_CASE("binary entropy") {
  CHECK(binary_entropy(0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(binary_entropy(0.0) == 0.0);
  CHECK(binary_entropy(1.0) == 0.0);

  double x = 0.0224;
  double direct = -x * std::log2(x) - (1 - x) * std::log2(1 - x);
  CHECK(binary_entropy(x) == doctest::Approx(direct).epsilon(1e-12));

  CounterRng rng(3);
  for (int i = 0; i < 1000; ++i) {
    double p = rng.next_double();
    REQUIRE(std::abs(binary_entropy(p) - binary_entropy(1.0 - p)) < 1e-12);
  }
  CHECK_THROWS_AS(binary_entropy(-0.01), std::domain_error);
  CHECK_THROWS_AS(binary_entropy(1.01), std::domain_error);
}

TEST_CASE("counter rng is stable and order-independent") {
  CounterRng a(123), b(123);
  for (int i = 0; i < 64; ++i) REQUIRE(a.next() == b.next());
  CHECK(hash_mix(123, 7) == hash_mix(123, 7));
  CHECK(hash_mix(123, 7) != hash_mix(124, 7));
  CHECK(hash_mix(123, 7) != hash_mix(123, 8));
}
