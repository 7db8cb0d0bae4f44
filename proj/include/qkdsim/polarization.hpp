#pragma once

// Two-photon polarization states and their exact measurement statistics.
//
// Conventions used throughout the simulator:
//   * basis order |HH>, |HV>, |VH>, |VV>;
//   * the source emits (a noisy version of) |Phi+> = (|HH> + |VV>)/sqrt(2);
//   * an analyser at angle theta projects onto |theta> = cos(theta)|H> +
//     sin(theta)|V> at the Transmitted port and onto theta + pi/2 at the
//     Reflected port;
//   * with |Phi+>, equal analyser angles give equal ports, so "same port" is
//     "same bit" and no bit flip is needed after sifting.

#include <array>
#include <cstdint>
#include <utility>

#include <Eigen/Core>

#include "qkdsim/rng.hpp"

namespace qkdsim {

enum class Port : std::uint8_t { Transmitted = 0, Reflected = 1 };

/// Linear analysis angle in radians. Measurement statistics have period pi.
struct AnalyzerAngle {
    double radians = 0.0;

    constexpr AnalyzerAngle() = default;
    constexpr explicit AnalyzerAngle(double r) : radians(r) {}
};

/// Validated 4x4 density matrix.
class TwoQubitState {
public:
    using Matrix = Eigen::Matrix4cd;

    static constexpr double kHermitianTolerance = 1e-12;
    static constexpr double kTraceTolerance = 1e-12;
    static constexpr double kEigenvalueFloor = -1e-10;

    /// Throws DomainError unless the matrix is Hermitian, unit-trace and PSD.
    static TwoQubitState from_matrix(const Matrix& rho);

    const Matrix& matrix() const noexcept { return rho_; }

private:
    explicit TwoQubitState(const Matrix& rho) : rho_(rho) {}
    Matrix rho_;
};

/// V |Phi+><Phi+| + (1 - V) I/4.
TwoQubitState werner_state(double visibility);

/// Probabilities of the four port pairs, indexed 2*portA + portB.
using OutcomeDistribution = std::array<double, 4>;

OutcomeDistribution outcome_distribution(const TwoQubitState& state, AnalyzerAngle a,
                                         AnalyzerAngle b);

double outcome_probability(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle b,
                           Port port_a, Port port_b);

/// E = P(TT) + P(RR) - P(TR) - P(RT).
double correlation(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle b);

struct ChshAngles {
    AnalyzerAngle a, a_prime, b, b_prime;
};

/// Settings that reach 2*sqrt(2) on |Phi+>: a = 0, a' = pi/4, b = pi/8, b' = 3pi/8.
ChshAngles canonical_chsh_angles();

inline constexpr double kTsirelsonBound = 2.8284271247461903;

/// S = E(a,b) - E(a,b') + E(a',b) + E(a',b').
double chsh_value(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle a_prime,
                  AnalyzerAngle b, AnalyzerAngle b_prime);

/// Probability that both parties measuring at `basis` obtain different ports.
double qber_in_basis(const TwoQubitState& state, AnalyzerAngle basis);

/// Draws port pairs from a fixed distribution with one uniform per draw.
class OutcomeSampler {
public:
    explicit OutcomeSampler(const OutcomeDistribution& p);

    std::pair<Port, Port> operator()(Rng& rng) const;

private:
    std::array<double, 3> cumulative_{};
};

std::pair<Port, Port> sample_outcome(const TwoQubitState& state, AnalyzerAngle a,
                                     AnalyzerAngle b, Rng& rng);

} // namespace qkdsim
