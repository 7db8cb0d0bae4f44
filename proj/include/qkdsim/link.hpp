#pragma once

// Free-space intersatellite channel: Gaussian beam spread, aperture
// collection, pointing-jitter averaging, and the slowly varying geometry and
// temperature seen by the payload.

namespace qkdsim {

struct OpticsConfig {
    double waist = 0.01;               ///< transmit beam waist radius, m
    double wavelength = 760e-9;        ///< m
    double rx_aperture_radius = 0.045; ///< m
    double pointing_sigma = 5e-6;      ///< rad rms per axis
    double excess_loss_db = 0.0;

    bool operator==(const OpticsConfig&) const = default;
};

struct GeometryState {
    double initial_separation = 100.0; ///< m
    double relative_velocity = 0.1;    ///< m/s

    bool operator==(const GeometryState&) const = default;
};

/// Sinusoidal orbital temperature swing.
struct ThermalProfile {
    double temp_min = 10.0;
    double temp_max = 30.0;
    double period = 5700.0; ///< s
    double phase = 0.0;     ///< rad

    bool operator==(const ThermalProfile&) const = default;
};

double separation_at(const GeometryState& geometry, double t);

/// pi w0^2 / lambda.
double rayleigh_range(const OpticsConfig& optics);

double beam_radius(double range, const OpticsConfig& optics);

/// Power fraction collected by a centered circular aperture: 1 - exp(-2a^2/w^2).
double centered_transmittance(double range, const OpticsConfig& optics);

/// Power fraction collected when the beam center is displaced by `offset`
/// metres from the aperture center.
double offset_transmittance(double range, double offset, const OpticsConfig& optics);

/// Mean collected fraction under per-axis Gaussian pointing jitter.
/// Uses T0 / (1 + 4 sigma_r^2 / w^2) when a <= w/3, otherwise 64-point
/// Gauss-Hermite quadrature over the 2-D offset.
double jitter_averaged_transmittance(double range, const OpticsConfig& optics);

/// Link loss in dB. Returns +infinity when the transmittance underflows to 0.
double total_link_db(double range, const OpticsConfig& optics);

double db_to_transmittance(double db);

double temperature_at(const ThermalProfile& profile, double t);

} // namespace qkdsim
