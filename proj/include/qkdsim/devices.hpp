#pragma once

// Parametric models of the pair source, the liquid-crystal polarization
// rotators and the Geiger-mode APDs, plus the event-stream machinery built on
// them (pair emission, detection, coincidence matching, curve fitting).

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "qkdsim/polarization.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim {

struct SourceModel {
    double brightness_ref = 1.0e6; ///< pairs/s at temp_ref
    double temp_ref = 24.7;        ///< degC
    double brightness_slope = 0.01; ///< fractional change per degC, >0 brighter when colder
    double visibility = 0.96;
    double wavelength_local = 867e-9;
    double wavelength_remote = 760e-9;

    bool operator==(const SourceModel&) const = default;
};

/// Voltage-to-rotation response of a liquid crystal rotator. The rotation is
/// a logistic curve in voltage whose midpoint drifts with temperature.
struct LcprModel {
    double v_min = 0.0;
    double v_max = 5.0;
    double v_half = 2.5;   ///< voltage for 45 deg at temp_cal
    double slope = 3.0;    ///< logistic steepness, 1/V
    double temp_coeff = 0.05; ///< V/degC
    double temp_cal = 24.7;

    bool operator==(const LcprModel&) const = default;
};

struct DetectorModel {
    double efficiency_ref = 0.5;
    double temp_coeff = 0.005; ///< fractional efficiency change per degC
    double temp_ref = 24.7;
    double dark_rate = 500.0;  ///< counts/s
    double dead_time = 0.5e-6; ///< s, paralyzable
    bool compensated = true;   ///< efficiency held at efficiency_ref

    bool operator==(const DetectorModel&) const = default;
};

/// The two detectors behind one polarizing beam splitter.
struct ArmDetectors {
    DetectorModel transmitted;
    DetectorModel reflected;

    const DetectorModel& at(Port port) const {
        return port == Port::Transmitted ? transmitted : reflected;
    }
};

enum class EventOrigin : std::uint8_t { Pair, Dark };

struct DetectionEvent {
    static constexpr std::size_t kNoPair = std::numeric_limits<std::size_t>::max();

    double time = 0.0;
    Port port = Port::Transmitted;
    EventOrigin origin = EventOrigin::Pair;
    std::size_t pair_index = kNoPair; ///< emitting pair for Pair events
};

/// Least-squares fit of C(x) = A (1 + V cos(2 (x - phase))) / 2.
/// `phase` is the peak position, normalized to [0, pi).
struct CurveFit {
    double amplitude = 0.0;
    double visibility = 0.0;
    double phase = 0.0;
    double residual_rms = 0.0;
};

struct ScanPoint {
    double setting = 0.0;
    double counts = 0.0;
};

double source_brightness(const SourceModel& model, double temp);

/// Realized rotation, clamped to [0, pi/2]. Throws DomainError for voltages
/// outside [v_min, v_max].
AnalyzerAngle lcpr_rotation(const LcprModel& model, double voltage, double temp);

/// Voltage that realizes `rotation` at `temp` (inverse of lcpr_rotation before
/// range clamping). `rotation` must lie strictly inside (0, pi/2).
double lcpr_voltage_for(const LcprModel& model, double rotation, double temp);

double detector_efficiency(const DetectorModel& model, double temp);

/// Paralyzable dead time: m = n exp(-n tau).
double measured_rate_paralyzable(double true_rate, double dead_time);

/// Inverts measured_rate_paralyzable on the rising branch n tau <= 1.
/// Throws SaturationError when measured > e^-1/tau.
double correct_measured_rate(double measured, double dead_time);

/// Homogeneous Poisson emission times, sorted, in [0, duration).
std::vector<double> generate_pair_times(double rate, double duration, Rng& rng);

/// Thins pair photons by transmittance x efficiency, adds dark counts, and
/// applies paralyzable dead time. Each port is its own detector with its own
/// dark counts and dead time. Output is time ordered.
std::vector<DetectionEvent> detect_stream(std::span<const double> pair_times,
                                          std::span<const Port> ports, double transmittance,
                                          const ArmDetectors& detectors, double temp,
                                          double duration, Rng& rng);

/// Same model on both ports.
std::vector<DetectionEvent> detect_stream(std::span<const double> pair_times,
                                          std::span<const Port> ports, double transmittance,
                                          const DetectorModel& detector, double temp,
                                          double duration, Rng& rng);

struct CoincidenceMatch {
    std::size_t a = 0;
    std::size_t b = 0;

    bool operator==(const CoincidenceMatch&) const = default;
};

/// Timestamp resolution used when comparing time differences to the window.
inline constexpr double kTimestampResolution = 1e-15;

/// Greedy one-pass matching of two time-ordered streams. Events pair when
/// |tA - tB| <= window / 2, i.e. `window` is the full width of the
/// coincidence interval. Each event is used at most once; the earliest
/// pending event is paired with its closest available partner, which yields
/// a maximum-cardinality matching.
std::vector<CoincidenceMatch> match_coincidences(std::span<const double> times_a,
                                                 std::span<const double> times_b, double window);

std::vector<CoincidenceMatch> match_coincidences(std::span<const DetectionEvent> stream_a,
                                                 std::span<const DetectionEvent> stream_b,
                                                 double window);

/// Expected accidental coincidence rate singles_a * singles_b * window.
double accidental_rate(double singles_a, double singles_b, double window);

/// Needs at least eight points with distinct settings; throws FitError when
/// the design matrix is rank deficient or the mean level is not positive.
/// Settings are angles (radians); curves have period pi.
CurveFit fit_correlation_curve(std::span<const ScanPoint> points);

} // namespace qkdsim
