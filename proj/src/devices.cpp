#include "qkdsim/devices.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <boost/math/constants/constants.hpp>
#include <boost/math/special_functions/lambert_w.hpp>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Paralyzable dead time on one time-ordered detector stream: every arrival,
// kept or not, restarts the dead window.
std::vector<DetectionEvent> apply_dead_time(const std::vector<DetectionEvent>& arrivals,
                                            double dead_time) {
    std::vector<DetectionEvent> kept;
    kept.reserve(arrivals.size());
    double last = -std::numeric_limits<double>::infinity();
    for (const auto& ev : arrivals) {
        if (ev.time - last >= dead_time) kept.push_back(ev);
        last = ev.time;
    }
    return kept;
}

bool earlier(const DetectionEvent& x, const DetectionEvent& y) { return x.time < y.time; }

} // namespace

double source_brightness(const SourceModel& model, double temp) {
    return std::max(0.0, model.brightness_ref *
                             (1.0 + model.brightness_slope * (model.temp_ref - temp)));
}

AnalyzerAngle lcpr_rotation(const LcprModel& model, double voltage, double temp) {
    if (!(voltage >= model.v_min && voltage <= model.v_max))
        throw DomainError("LCPR voltage outside actuation range");
    const double v_eff = voltage - model.temp_coeff * (model.temp_cal - temp);
    const double theta = kHalfPi * logistic(model.slope * (v_eff - model.v_half));
    return AnalyzerAngle(std::clamp(theta, 0.0, kHalfPi));
}

double lcpr_voltage_for(const LcprModel& model, double rotation, double temp) {
    if (!(rotation > 0.0 && rotation < kHalfPi))
        throw DomainError("LCPR rotation must lie strictly inside (0, pi/2)");
    const double s = rotation / kHalfPi;
    return model.v_half + std::log(s / (1.0 - s)) / model.slope +
           model.temp_coeff * (model.temp_cal - temp);
}

double detector_efficiency(const DetectorModel& model, double temp) {
    if (model.compensated) return model.efficiency_ref;
    return std::clamp(model.efficiency_ref * (1.0 - model.temp_coeff * (temp - model.temp_ref)),
                      0.0, 1.0);
}

double measured_rate_paralyzable(double true_rate, double dead_time) {
    if (!(true_rate >= 0.0)) throw DomainError("true rate must be non-negative");
    if (!(dead_time > 0.0)) throw DomainError("dead time must be positive");
    return true_rate * std::exp(-true_rate * dead_time);
}

double correct_measured_rate(double measured, double dead_time) {
    if (!(dead_time > 0.0)) throw DomainError("dead time must be positive");
    if (!(measured >= 0.0)) throw DomainError("measured rate must be non-negative");
    // A few ulps of slack so the forward model evaluated at n tau = 1 inverts.
    if (measured * dead_time > std::exp(-1.0) * (1.0 + 1e-12))
        throw SaturationError("measured rate exceeds the paralyzable maximum e^-1/tau");
    // m tau = n tau exp(-n tau)  =>  n tau = -W0(-m tau) on the rising branch.
    const double branch_point = -boost::math::constants::exp_minus_one<double>();
    const double z = std::max(-measured * dead_time, branch_point);
    return -boost::math::lambert_w0(z) / dead_time;
}

std::vector<double> generate_pair_times(double rate, double duration, Rng& rng) {
    if (!(rate >= 0.0)) throw DomainError("pair rate must be non-negative");
    if (!(duration > 0.0)) throw DomainError("duration must be positive");
    std::vector<double> times;
    if (rate == 0.0) return times;
    times.reserve(static_cast<std::size_t>(rate * duration * 1.01) + 16);
    std::exponential_distribution<double> gap(rate);
    double t = gap(rng);
    while (t < duration) {
        times.push_back(t);
        t += gap(rng);
    }
    return times;
}

std::vector<DetectionEvent> detect_stream(std::span<const double> pair_times,
                                          std::span<const Port> ports, double transmittance,
                                          const ArmDetectors& detectors, double temp,
                                          double duration, Rng& rng) {
    if (pair_times.size() != ports.size())
        throw DomainError("pair_times and ports differ in length");
    if (!(transmittance >= 0.0 && transmittance <= 1.0))
        throw DomainError("transmittance must lie in [0, 1]");
    if (!(duration > 0.0)) throw DomainError("duration must be positive");

    const std::array<double, 2> survive = {
        transmittance * detector_efficiency(detectors.transmitted, temp),
        transmittance * detector_efficiency(detectors.reflected, temp)};

    std::array<std::vector<DetectionEvent>, 2> arrivals;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    // One draw per pair regardless of outcome keeps thinning draws aligned
    // between runs that differ only in dark-count settings.
    for (std::size_t i = 0; i < pair_times.size(); ++i) {
        const auto port = static_cast<std::size_t>(ports[i]);
        if (uniform(rng) < survive[port])
            arrivals[port].push_back({pair_times[i], ports[i], EventOrigin::Pair, i});
    }

    std::vector<DetectionEvent> out;
    for (std::size_t port = 0; port < 2; ++port) {
        const DetectorModel& det = detectors.at(static_cast<Port>(port));
        auto& stream = arrivals[port];
        if (det.dark_rate > 0.0) {
            std::poisson_distribution<std::uint64_t> count(det.dark_rate * duration);
            const std::uint64_t n = count(rng);
            std::vector<DetectionEvent> darks;
            darks.reserve(n);
            for (std::uint64_t k = 0; k < n; ++k)
                darks.push_back({uniform(rng) * duration, static_cast<Port>(port),
                                 EventOrigin::Dark, DetectionEvent::kNoPair});
            std::sort(darks.begin(), darks.end(), earlier);
            std::vector<DetectionEvent> merged;
            merged.reserve(stream.size() + darks.size());
            std::merge(stream.begin(), stream.end(), darks.begin(), darks.end(),
                       std::back_inserter(merged), earlier);
            stream = std::move(merged);
        }
        auto kept = apply_dead_time(stream, det.dead_time);
        const auto mid = static_cast<std::ptrdiff_t>(out.size());
        out.insert(out.end(), kept.begin(), kept.end());
        std::inplace_merge(out.begin(), out.begin() + mid, out.end(), earlier);
    }
    return out;
}

std::vector<DetectionEvent> detect_stream(std::span<const double> pair_times,
                                          std::span<const Port> ports, double transmittance,
                                          const DetectorModel& detector, double temp,
                                          double duration, Rng& rng) {
    return detect_stream(pair_times, ports, transmittance, ArmDetectors{detector, detector}, temp,
                         duration, rng);
}

std::vector<CoincidenceMatch> match_coincidences(std::span<const double> times_a,
                                                 std::span<const double> times_b,
                                                 double window) {
    if (!(window > 0.0)) throw DomainError("coincidence window must be positive");
    const double half = window / 2.0 + kTimestampResolution;
    std::vector<CoincidenceMatch> matches;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < times_a.size() && j < times_b.size()) {
        const double ta = times_a[i];
        const double tb = times_b[j];
        if (std::abs(ta - tb) <= half) {
            matches.push_back({i, j});
            ++i;
            ++j;
        } else if (ta < tb) {
            ++i; // nothing left in B can reach ta
        } else {
            ++j;
        }
    }
    return matches;
}

std::vector<CoincidenceMatch> match_coincidences(std::span<const DetectionEvent> stream_a,
                                                 std::span<const DetectionEvent> stream_b,
                                                 double window) {
    std::vector<double> ta(stream_a.size());
    std::vector<double> tb(stream_b.size());
    std::transform(stream_a.begin(), stream_a.end(), ta.begin(),
                   [](const DetectionEvent& e) { return e.time; });
    std::transform(stream_b.begin(), stream_b.end(), tb.begin(),
                   [](const DetectionEvent& e) { return e.time; });
    return match_coincidences(ta, tb, window);
}

double accidental_rate(double singles_a, double singles_b, double window) {
    if (!(singles_a >= 0.0 && singles_b >= 0.0 && window >= 0.0))
        throw DomainError("accidental_rate inputs must be non-negative");
    return singles_a * singles_b * window;
}

CurveFit fit_correlation_curve(std::span<const ScanPoint> points) {
    if (points.size() < 8) throw FitError("curve fit needs at least 8 points");
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd design(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = 2.0 * points[static_cast<std::size_t>(i)].setting;
        design(i, 0) = 1.0;
        design(i, 1) = std::cos(x);
        design(i, 2) = std::sin(x);
        y(i) = points[static_cast<std::size_t>(i)].counts;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) throw FitError("degenerate scan: design matrix is rank deficient");
    const Eigen::Vector3d c = qr.solve(y);
    if (!(c(0) > 0.0)) throw FitError("fitted mean level is not positive");

    const double p = c(1) / c(0);
    const double q = c(2) / c(0);
    CurveFit fit;
    fit.amplitude = 2.0 * c(0);
    fit.visibility = std::min(std::hypot(p, q), 1.05);
    double phase = 0.5 * std::atan2(q, p);
    if (phase < 0.0) phase += std::numbers::pi;
    if (phase >= std::numbers::pi) phase -= std::numbers::pi;
    fit.phase = phase;
    fit.residual_rms = std::sqrt((design * c - y).squaredNorm() / static_cast<double>(n));
    return fit;
}

} // namespace qkdsim
