#include "qkdsim/polarization.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace {

using Matrix4d = Eigen::Matrix4d;
using Matrix2d = Eigen::Matrix2d;

Matrix2d projector(AnalyzerAngle theta, Port port) {
    const double angle =
        theta.radians + (port == Port::Reflected ? std::numbers::pi / 2.0 : 0.0);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Matrix2d p;
    p << c * c, c * s, c * s, s * s;
    return p;
}

Matrix4d kron(const Matrix2d& a, const Matrix2d& b) {
    Matrix4d out;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
    return out;
}

// Tr[rho M] for real symmetric M.
double expectation(const TwoQubitState::Matrix& rho, const Matrix4d& m) {
    double sum = 0.0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            sum += rho(r, c).real() * m(c, r);
    return sum;
}

} // namespace

TwoQubitState TwoQubitState::from_matrix(const Matrix& rho) {
    if (!rho.allFinite()) throw DomainError("density matrix has non-finite entries");
    const double asym = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (asym > kHermitianTolerance)
        throw DomainError("density matrix is not Hermitian (deviation " + std::to_string(asym) +
                          ")");
    const std::complex<double> tr = rho.trace();
    if (std::abs(tr.real() - 1.0) >= kTraceTolerance || std::abs(tr.imag()) >= kTraceTolerance)
        throw DomainError("density matrix trace is not 1");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(rho, Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().minCoeff() < kEigenvalueFloor)
        throw DomainError("density matrix is not positive semidefinite");
    return TwoQubitState(rho);
}

TwoQubitState werner_state(double visibility) {
    if (!(visibility >= 0.0 && visibility <= 1.0))
        throw DomainError("visibility must lie in [0, 1]");
    TwoQubitState::Matrix rho = TwoQubitState::Matrix::Identity() * ((1.0 - visibility) / 4.0);
    // |Phi+><Phi+| has 1/2 at the HH/VV corners.
    const double half = visibility / 2.0;
    rho(0, 0) += half;
    rho(0, 3) += half;
    rho(3, 0) += half;
    rho(3, 3) += half;
    return TwoQubitState::from_matrix(rho);
}

OutcomeDistribution outcome_distribution(const TwoQubitState& state, AnalyzerAngle a,
                                         AnalyzerAngle b) {
    OutcomeDistribution p{};
    for (int pa = 0; pa < 2; ++pa) {
        for (int pb = 0; pb < 2; ++pb) {
            const Matrix4d m =
                kron(projector(a, static_cast<Port>(pa)), projector(b, static_cast<Port>(pb)));
            p[2 * pa + pb] = std::clamp(expectation(state.matrix(), m), 0.0, 1.0);
        }
    }
    return p;
}

double outcome_probability(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle b,
                           Port port_a, Port port_b) {
    const Matrix4d m = kron(projector(a, port_a), projector(b, port_b));
    return std::clamp(expectation(state.matrix(), m), 0.0, 1.0);
}

double correlation(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle b) {
    const auto p = outcome_distribution(state, a, b);
    return p[0] + p[3] - p[1] - p[2];
}

ChshAngles canonical_chsh_angles() {
    constexpr double pi = std::numbers::pi;
    return {AnalyzerAngle(0.0), AnalyzerAngle(pi / 4.0), AnalyzerAngle(pi / 8.0),
            AnalyzerAngle(3.0 * pi / 8.0)};
}

double chsh_value(const TwoQubitState& state, AnalyzerAngle a, AnalyzerAngle a_prime,
                  AnalyzerAngle b, AnalyzerAngle b_prime) {
    const double s = correlation(state, a, b) - correlation(state, a, b_prime) +
                     correlation(state, a_prime, b) + correlation(state, a_prime, b_prime);
    assert(std::abs(s) <= kTsirelsonBound + 1e-10);
    return s;
}

double qber_in_basis(const TwoQubitState& state, AnalyzerAngle basis) {
    const auto p = outcome_distribution(state, basis, basis);
    return p[1] + p[2];
}

OutcomeSampler::OutcomeSampler(const OutcomeDistribution& p) {
    const double total = p[0] + p[1] + p[2] + p[3];
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        acc += p[i] / total;
        cumulative_[i] = acc;
    }
    // Round-off must never select a trailing zero-probability outcome.
    std::size_t last = 3;
    while (last > 0 && p[last] <= 0.0) --last;
    for (std::size_t i = last; i < 3; ++i) cumulative_[i] = 2.0;
}

std::pair<Port, Port> OutcomeSampler::operator()(Rng& rng) const {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng);
    int k = 3;
    for (int i = 0; i < 3; ++i) {
        if (u < cumulative_[i]) {
            k = i;
            break;
        }
    }
    return {static_cast<Port>(k >> 1), static_cast<Port>(k & 1)};
}

std::pair<Port, Port> sample_outcome(const TwoQubitState& state, AnalyzerAngle a,
                                     AnalyzerAngle b, Rng& rng) {
    return OutcomeSampler(outcome_distribution(state, a, b))(rng);
}

} // namespace qkdsim
