#pragma once

// TOML configuration, CSV output and the process exit-code contract.
//
// Config schema (every key optional; omitted keys keep the defaults in sim.hpp
// and the model headers; any other key is rejected):
//
//   [source]        brightness_ref temp_ref brightness_slope visibility
//                   wavelength_local wavelength_remote
//   [lcpr_local]    v_min v_max v_half slope temp_coeff temp_cal
//   [lcpr_remote]   (same keys as lcpr_local)
//   [detectors.local_t] [detectors.local_r] [detectors.remote_t] [detectors.remote_r]
//                   efficiency temp_coeff temp_ref dark_rate dead_time compensated
//   [optics]        waist wavelength rx_aperture_radius pointing_sigma excess_loss_db
//   [geometry]      initial_separation relative_velocity
//   [thermal]       temp_min temp_max period phase
//   [protocol]      sample_fraction qber_abort_threshold ec_efficiency
//   [run]           step_seconds total_seconds integration_seconds seed coincidence_window
//   [scan]          axis ("angle" | "voltage") fixed_setting start stop points
//                   temperature samples_per_point
//   [chsh]          samples temperature

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "qkdsim/devices.hpp"
#include "qkdsim/sim.hpp"

namespace qkdsim {

enum class ExitCode : int {
    Ok = 0,
    NotWitnessed = 1, ///< chsh ran correctly but S - 4 stderr <= 2
    MissingFile = 2,
    SyntaxError = 3,
    UnknownKey = 4,
    InvalidValue = 5,
    Unwritable = 6,
    Usage = 64,
};

class CliError : public std::runtime_error {
public:
    CliError(ExitCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Parses TOML text. `origin` names the source in error messages.
MissionConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");

/// Reads and parses a config file. Throws CliError with MissingFile,
/// SyntaxError, UnknownKey or InvalidValue.
MissionConfig parse_config(const std::filesystem::path& path);

/// Full TOML rendering of every field; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const MissionConfig& config);

inline constexpr std::string_view kMissionCsvHeader =
    "t_s,range_m,link_db,temp_c,pairs_generated,coincidences,accidentals_est,sifted_bits,qber,"
    "key_fraction,secret_bits_per_s";

/// Header plus one row per record, LF line endings. Reals use 6 significant
/// digits, counts are exact integers, a missing qber is an empty field.
std::string format_mission_csv(std::span<const StepRecord> records);

/// `setting,counts` rows followed by `# fit A=<..> V=<..> phi=<..>`.
std::string format_scan_csv(std::span<const ScanPoint> points, const CurveFit& fit);

/// Writes atomically (temporary file + rename). Throws CliError(Unwritable).
void write_output(const std::filesystem::path& path, std::string_view content);

/// Throws DomainError for an empty record list, CliError(Unwritable) on I/O failure.
void emit_csv(std::span<const StepRecord> records, const std::filesystem::path& path);

} // namespace qkdsim
