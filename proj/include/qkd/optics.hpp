#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <utility>

#include "qkd/rng.hpp"

namespace qkd::optics {

using complexd = std::complex<double>;

enum class Basis : uint8_t { Z = 0, X = 1 };

// One of the four BB84 symbols. The encoding convention is
// theta = 0, pi for Z-basis bits 0, 1 and theta = pi/2, 3pi/2 for X-basis
// bits 0, 1.
struct Bb84Symbol {
  Basis basis = Basis::Z;
  uint8_t bit = 0;

  double theta() const;
  bool operator==(const Bb84Symbol&) const = default;
};

// Pure polarization qubit (|H>, |V>) amplitudes, unit norm.
struct PolarizationState {
  complexd h{1.0, 0.0};
  complexd v{0.0, 0.0};

  double norm() const;
};

complexd inner_product(const PolarizationState& a, const PolarizationState& b);

// |<a|b>|^2 — global phase independent overlap.
double fidelity(const PolarizationState& a, const PolarizationState& b);

// 2x2 unitary on the polarization qubit. Models both channel drift and the
// receiver's compensation stages.
class PolarizationUnitary {
 public:
  PolarizationUnitary();  // identity

  static PolarizationUnitary identity();
  // Real rotation mixing the theta in {0, pi} pair while leaving the
  // theta in {pi/2, 3pi/2} pair invariant up to phase.
  static PolarizationUnitary rotation(double angle);
  // diag(1, e^{i phi}) — differential H/V phase (fiber retardance).
  static PolarizationUnitary phase_delay(double phi);
  // Rz(alpha) * Ry(theta) * Rz(beta): full SU(2) up to global phase.
  static PolarizationUnitary from_euler(double alpha, double theta, double beta);
  static PolarizationUnitary random(CounterRng& rng);

  PolarizationUnitary operator*(const PolarizationUnitary& rhs) const;
  PolarizationUnitary adjoint() const;

  complexd at(int row, int col) const { return m_[row][col]; }
  bool is_unitary(double tol = 1e-10) const;

 private:
  complexd m_[2][2];
};

// Signal/decoy intensity pair and the protocol probabilities.
struct IntensitySetting {
  double mu = 0.5;    // signal mean photon number
  double nu = 0.125;  // decoy mean photon number
  double p_mu = 0.75; // probability of sending the signal intensity
  double p_z = 0.944; // probability Alice encodes in Z

  double p_nu() const { return 1.0 - p_mu; }
  double p_x() const { return 1.0 - p_z; }
  void validate() const;  // throws std::invalid_argument
};

// (|H> + e^{i theta}|V>)/sqrt(2) for the symbol's theta.
PolarizationState symbol_to_state(Bb84Symbol symbol);

PolarizationState apply_unitary(const PolarizationUnitary& u,
                                const PolarizationState& s);

// Born probabilities of the two outcomes when (compensation * s) is measured
// against the basis states of `basis`. Returns (p_bit0, p_bit1).
std::pair<double, double> measurement_probabilities(
    const PolarizationState& s, Basis basis,
    const PolarizationUnitary& compensation);

// Photon number of one phase-randomized weak coherent pulse.
int poisson_photon_number(double mean, CounterRng& rng);

// Shannon binary entropy in bits, h(0) = h(1) = 0. Throws std::domain_error
// outside [0, 1].
double binary_entropy(double x);

}  // namespace qkd::optics
