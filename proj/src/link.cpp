#include "qkdsim/link.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/non_central_chi_squared.hpp>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace {

constexpr int kHermiteOrder = 64;

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Golub-Welsch for the physicists' Hermite weight exp(-x^2).
QuadratureRule make_gauss_hermite(int order) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double off = std::sqrt(k / 2.0);
        jacobi(k, k - 1) = off;
        jacobi(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    QuadratureRule rule;
    const double mu0 = std::sqrt(std::numbers::pi);
    for (int k = 0; k < order; ++k) {
        rule.nodes.push_back(solver.eigenvalues()(k));
        const double v0 = solver.eigenvectors()(0, k);
        rule.weights.push_back(mu0 * v0 * v0);
    }
    return rule;
}

const QuadratureRule& gauss_hermite_rule() {
    static const QuadratureRule rule = make_gauss_hermite(kHermiteOrder);
    return rule;
}

void require_range(double range) {
    if (!(range >= 0.0)) throw DomainError("range must be non-negative");
}

} // namespace

double separation_at(const GeometryState& geometry, double t) {
    if (!(t >= 0.0)) throw DomainError("time must be non-negative");
    return geometry.initial_separation + geometry.relative_velocity * t;
}

double rayleigh_range(const OpticsConfig& optics) {
    return std::numbers::pi * optics.waist * optics.waist / optics.wavelength;
}

double beam_radius(double range, const OpticsConfig& optics) {
    require_range(range);
    const double ratio = range / rayleigh_range(optics);
    return optics.waist * std::sqrt(1.0 + ratio * ratio);
}

double centered_transmittance(double range, const OpticsConfig& optics) {
    const double w = beam_radius(range, optics);
    const double a = optics.rx_aperture_radius;
    return -std::expm1(-2.0 * a * a / (w * w));
}

double offset_transmittance(double range, double offset, const OpticsConfig& optics) {
    // Intensity exp(-2 r^2 / w^2) is a 2-D Gaussian with sigma = w/2, so the
    // captured fraction is the CDF of a noncentral chi-square with 2 dof.
    const double w = beam_radius(range, optics);
    const double sigma = w / 2.0;
    const double a = optics.rx_aperture_radius;
    if (a <= 0.0) return 0.0;
    const double lambda = (offset / sigma) * (offset / sigma);
    const double x = (a / sigma) * (a / sigma);
    if (lambda == 0.0) return -std::expm1(-x / 2.0);
    boost::math::non_central_chi_squared dist(2.0, lambda);
    return boost::math::cdf(dist, x);
}

double jitter_averaged_transmittance(double range, const OpticsConfig& optics) {
    const double t0 = centered_transmittance(range, optics);
    const double sigma_r = optics.pointing_sigma * range;
    if (sigma_r == 0.0 || t0 == 0.0) return t0;
    const double w = beam_radius(range, optics);
    if (optics.rx_aperture_radius <= w / 3.0)
        return t0 / (1.0 + 4.0 * sigma_r * sigma_r / (w * w));

    // E[f(x, y)] with x, y ~ N(0, sigma_r^2): substitute x = sqrt(2) sigma_r u.
    const auto& rule = gauss_hermite_rule();
    const double scale = std::numbers::sqrt2 * sigma_r;
    double sum = 0.0;
    for (int i = 0; i < kHermiteOrder; ++i) {
        const double x = scale * rule.nodes[static_cast<std::size_t>(i)];
        for (int j = 0; j < kHermiteOrder; ++j) {
            const double y = scale * rule.nodes[static_cast<std::size_t>(j)];
            sum += rule.weights[static_cast<std::size_t>(i)] *
                   rule.weights[static_cast<std::size_t>(j)] *
                   offset_transmittance(range, std::hypot(x, y), optics);
        }
    }
    return std::min(sum / std::numbers::pi, t0);
}

double total_link_db(double range, const OpticsConfig& optics) {
    const double t = jitter_averaged_transmittance(range, optics);
    if (t <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(t) + optics.excess_loss_db;
}

double db_to_transmittance(double db) {
    if (!(db >= 0.0)) throw DomainError("loss in dB must be non-negative");
    return std::pow(10.0, -db / 10.0);
}

double temperature_at(const ThermalProfile& profile, double t) {
    if (!(t >= 0.0)) throw DomainError("time must be non-negative");
    const double mid = 0.5 * (profile.temp_min + profile.temp_max);
    const double half = 0.5 * (profile.temp_max - profile.temp_min);
    const double value =
        mid + half * std::sin(2.0 * std::numbers::pi * t / profile.period + profile.phase);
    return std::clamp(value, profile.temp_min, profile.temp_max);
}

} // namespace qkdsim
