#pragma once

// Mission-level composition of the device, link and protocol models.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qkdsim/bbm92.hpp"
#include "qkdsim/devices.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/link.hpp"
#include "qkdsim/polarization.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim {

struct DetectorSet {
    DetectorModel local_t;
    DetectorModel local_r;
    DetectorModel remote_t;
    DetectorModel remote_r;

    ArmDetectors local() const { return {local_t, local_r}; }
    ArmDetectors remote() const { return {remote_t, remote_r}; }

    bool operator==(const DetectorSet&) const = default;
};

struct RunParams {
    double step_seconds = 1.0;        ///< spacing between records
    double total_seconds = 10.0;
    double integration_seconds = 1.0; ///< acquisition simulated per record, <= step
    std::uint64_t seed = 1;
    double coincidence_window = 2e-9; ///< full width, s

    bool operator==(const RunParams&) const = default;
};

enum class ScanAxis { Angle, Voltage };

std::string_view to_string(ScanAxis axis);

struct ScanParams {
    ScanAxis axis = ScanAxis::Angle;
    double fixed_setting = 0.0;  ///< analyser angle of the fixed (local) arm, rad
    std::optional<double> start; ///< default: 0 rad or v_min
    std::optional<double> stop;  ///< default: 35 pi / 36 rad or v_max
    int points = 36;
    double temperature = 24.7;
    std::uint64_t samples_per_point = 10000;

    bool operator==(const ScanParams&) const = default;
};

struct ChshParams {
    std::uint64_t samples = 1000000;
    double temperature = 24.7;

    bool operator==(const ChshParams&) const = default;
};

struct MissionConfig {
    SourceModel source;
    LcprModel lcpr_local;
    LcprModel lcpr_remote;
    DetectorSet detectors;
    OpticsConfig optics;
    GeometryState geometry;
    ThermalProfile thermal;
    ProtocolParams protocol;
    RunParams run;
    ScanParams scan;
    ChshParams chsh;

    bool operator==(const MissionConfig&) const = default;
};

/// Config invariant violation; what() starts with the dotted field path.
class InvalidConfig : public DomainError {
public:
    InvalidConfig(std::string field, const std::string& message)
        : DomainError(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Throws InvalidConfig naming the first offending field.
void validate(const MissionConfig& config);

struct StepRecord {
    double t = 0.0;
    double range = 0.0;
    double link_db = 0.0;
    double temp = 0.0;
    std::uint64_t pairs_generated = 0;
    std::uint64_t coincidences = 0;
    double accidentals_est = 0.0; ///< expected accidental coincidences in the integration time
    std::uint64_t sifted_bits = 0;
    std::optional<double> qber;   ///< empty with fewer than 10 sifted bits
    double key_fraction = 0.0;
    double secret_bits_per_s = 0.0;

    bool operator==(const StepRecord&) const = default;
};

/// Fixed wave-plate offset in front of every LCPR. It keeps the protocol and
/// CHSH settings away from the ends of the rotator's range.
inline constexpr double kAnalyzerMountOffset = -0.19634954084936207; // -pi/16

/// Angle realized by an analyser whose LCPR is driven with the
/// temperature-compensated voltage for `target`. Angles outside the rotator's
/// span use the port swap (theta + pi/2 is theta with ports exchanged).
AnalyzerAngle realize_angle(const LcprModel& lcpr, AnalyzerAngle target, double temp);

/// Angle realized when `voltage` is applied without compensation.
AnalyzerAngle realize_voltage(const LcprModel& lcpr, double voltage, double temp);

/// Times of the records produced by run_mission: k * step_seconds for k = 1..N.
std::vector<double> step_times(const RunParams& run);

/// One record: simulate `integration_seconds` of acquisition at time t and run
/// a protocol sub-session on the resulting coincidences.
StepRecord step(const MissionConfig& config, double t, Rng& rng);

/// Records are independent of execution order: step k draws from
/// derive_stream(seed, k).
std::vector<StepRecord> run_mission(const MissionConfig& config);

/// Scan grid from config.scan (start/stop defaults depend on the axis).
std::vector<double> scan_grid(const MissionConfig& config);

/// Polarization correlation scan: fixed local analyser, remote analyser scanned. For each
/// grid point emits Poisson(samples_per_point * B(T)/B_ref) pairs and counts
/// coincidences with both photons at the Transmitted detectors.
std::vector<ScanPoint> run_correlation_scan(const MissionConfig& config,
                                            AnalyzerAngle fixed_setting,
                                            std::span<const double> grid, double temp,
                                            std::uint64_t samples_per_point, ScanAxis axis,
                                            Rng& rng);

struct ScanFit {
    CurveFit fit;          ///< in angle units (voltage scans use calibrated angles)
    double peak_setting = 0.0; ///< peak position in the scan's own units
};

/// Voltage scans are fitted against the calibrated angle of each voltage
/// (the rotator response at temp_cal), then the peak is mapped back to volts.
ScanFit fit_scan(std::span<const ScanPoint> points, ScanAxis axis, const LcprModel& scanned);

struct ChshEstimate {
    double s = 0.0;
    double standard_error = 0.0;
};

/// n/4 samples at each canonical setting pair, S with binomial standard error.
ChshEstimate run_chsh_experiment(const MissionConfig& config, std::uint64_t n_samples,
                                 double temp, Rng& rng);

} // namespace qkdsim
