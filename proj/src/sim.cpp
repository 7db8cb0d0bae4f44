#include "qkdsim/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

namespace qkdsim {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

void require(bool ok, const char* field, const char* message) {
    if (!ok) throw InvalidConfig(field, message);
}

bool finite(double x) { return std::isfinite(x); }

void validate_lcpr(const LcprModel& m, const std::string& prefix) {
    auto f = [&prefix](const char* name) { return prefix + "." + name; };
    if (!(finite(m.v_min) && finite(m.v_max) && m.v_min < m.v_max))
        throw InvalidConfig(f("v_max"), "must be finite and greater than v_min");
    if (!(m.v_half > m.v_min && m.v_half < m.v_max))
        throw InvalidConfig(f("v_half"), "must lie strictly between v_min and v_max");
    if (!(m.slope > 0.0 && finite(m.slope))) throw InvalidConfig(f("slope"), "must be positive");
    if (!finite(m.temp_coeff)) throw InvalidConfig(f("temp_coeff"), "must be finite");
    if (!finite(m.temp_cal)) throw InvalidConfig(f("temp_cal"), "must be finite");
}

void validate_detector(const DetectorModel& d, const std::string& prefix) {
    auto f = [&prefix](const char* name) { return prefix + "." + name; };
    if (!(d.efficiency_ref >= 0.0 && d.efficiency_ref <= 1.0))
        throw InvalidConfig(f("efficiency"), "must lie in [0, 1]");
    if (!finite(d.temp_coeff)) throw InvalidConfig(f("temp_coeff"), "must be finite");
    if (!finite(d.temp_ref)) throw InvalidConfig(f("temp_ref"), "must be finite");
    if (!(d.dark_rate >= 0.0 && finite(d.dark_rate)))
        throw InvalidConfig(f("dark_rate"), "must be non-negative");
    if (!(d.dead_time > 0.0 && finite(d.dead_time)))
        throw InvalidConfig(f("dead_time"), "must be positive");
}

// Per-pair basis choice and outcome for one integration window.
struct PairDraws {
    std::vector<double> times;
    std::vector<Basis> local_basis;
    std::vector<Basis> remote_basis;
    std::vector<Port> local_port;
    std::vector<Port> remote_port;
};

PairDraws draw_pairs(const MissionConfig& config, double brightness, double temp, Rng& rng) {
    const TwoQubitState state = werner_state(config.source.visibility);
    std::array<std::array<AnalyzerAngle, 2>, 2> angles{};
    for (int b = 0; b < 2; ++b) {
        angles[0][b] = realize_angle(config.lcpr_local, basis_angle(static_cast<Basis>(b)), temp);
        angles[1][b] = realize_angle(config.lcpr_remote, basis_angle(static_cast<Basis>(b)), temp);
    }
    std::vector<OutcomeSampler> samplers;
    for (int bl = 0; bl < 2; ++bl)
        for (int br = 0; br < 2; ++br)
            samplers.emplace_back(outcome_distribution(state, angles[0][bl], angles[1][br]));

    PairDraws d;
    d.times = generate_pair_times(brightness, config.run.integration_seconds, rng);
    const std::size_t n = d.times.size();
    d.local_basis.resize(n);
    d.remote_basis.resize(n);
    d.local_port.resize(n);
    d.remote_port.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        d.local_basis[i] = choose_basis(rng);
        d.remote_basis[i] = choose_basis(rng);
        const auto& sampler =
            samplers[2 * static_cast<std::size_t>(d.local_basis[i]) +
                     static_cast<std::size_t>(d.remote_basis[i])];
        std::tie(d.local_port[i], d.remote_port[i]) = sampler(rng);
    }
    return d;
}

// Basis in force when each event was registered. Dark counts see whatever
// setting the analyser happened to have, modeled as a fresh uniform choice.
std::vector<Basis> event_bases(const std::vector<DetectionEvent>& events,
                               const std::vector<Basis>& pair_basis, Rng& dark_rng) {
    std::vector<Basis> out(events.size());
    for (std::size_t i = 0; i < events.size(); ++i)
        out[i] = events[i].origin == EventOrigin::Pair ? pair_basis[events[i].pair_index]
                                                       : choose_basis(dark_rng);
    return out;
}

} // namespace

std::string_view to_string(ScanAxis axis) {
    return axis == ScanAxis::Angle ? "angle" : "voltage";
}

void validate(const MissionConfig& c) {
    const auto& s = c.source;
    require(s.brightness_ref > 0.0 && finite(s.brightness_ref), "source.brightness_ref",
            "must be positive");
    require(finite(s.temp_ref), "source.temp_ref", "must be finite");
    require(finite(s.brightness_slope), "source.brightness_slope", "must be finite");
    require(s.visibility >= 0.0 && s.visibility <= 1.0, "source.visibility",
            "must lie in [0, 1]");
    require(s.wavelength_local > 0.0, "source.wavelength_local", "must be positive");
    require(s.wavelength_remote > 0.0, "source.wavelength_remote", "must be positive");

    validate_lcpr(c.lcpr_local, "lcpr_local");
    validate_lcpr(c.lcpr_remote, "lcpr_remote");
    validate_detector(c.detectors.local_t, "detectors.local_t");
    validate_detector(c.detectors.local_r, "detectors.local_r");
    validate_detector(c.detectors.remote_t, "detectors.remote_t");
    validate_detector(c.detectors.remote_r, "detectors.remote_r");

    const auto& o = c.optics;
    require(o.waist > 0.0 && finite(o.waist), "optics.waist", "must be positive");
    require(o.wavelength > 0.0 && finite(o.wavelength), "optics.wavelength", "must be positive");
    require(o.rx_aperture_radius > 0.0 && finite(o.rx_aperture_radius),
            "optics.rx_aperture_radius", "must be positive");
    require(o.pointing_sigma >= 0.0 && finite(o.pointing_sigma), "optics.pointing_sigma",
            "must be non-negative");
    require(o.excess_loss_db >= 0.0 && finite(o.excess_loss_db), "optics.excess_loss_db",
            "must be non-negative");

    require(c.geometry.initial_separation >= 0.0 && finite(c.geometry.initial_separation),
            "geometry.initial_separation", "must be non-negative");
    require(c.geometry.relative_velocity >= 0.0 && finite(c.geometry.relative_velocity),
            "geometry.relative_velocity", "must be non-negative");

    require(finite(c.thermal.temp_min), "thermal.temp_min", "must be finite");
    require(finite(c.thermal.temp_max) && c.thermal.temp_max >= c.thermal.temp_min,
            "thermal.temp_max", "must be finite and >= temp_min");
    require(c.thermal.period > 0.0 && finite(c.thermal.period), "thermal.period",
            "must be positive");
    require(finite(c.thermal.phase), "thermal.phase", "must be finite");

    const auto& p = c.protocol;
    require(p.sample_fraction > 0.0 && p.sample_fraction < 1.0, "protocol.sample_fraction",
            "must lie in (0, 1)");
    require(p.qber_abort_threshold > 0.0 && p.qber_abort_threshold <= 1.0,
            "protocol.qber_abort_threshold", "must lie in (0, 1]");
    require(p.ec_efficiency >= 1.0 && finite(p.ec_efficiency), "protocol.ec_efficiency",
            "must be >= 1");

    const auto& r = c.run;
    require(r.step_seconds > 0.0 && finite(r.step_seconds), "run.step_seconds",
            "must be positive");
    require(r.total_seconds >= r.step_seconds && finite(r.total_seconds), "run.total_seconds",
            "must be >= step_seconds");
    require(r.integration_seconds > 0.0 && r.integration_seconds <= r.step_seconds,
            "run.integration_seconds", "must lie in (0, step_seconds]");
    require(r.coincidence_window > 0.0 && finite(r.coincidence_window),
            "run.coincidence_window", "must be positive");

    const auto& sc = c.scan;
    require(finite(sc.fixed_setting), "scan.fixed_setting", "must be finite");
    require(sc.points >= 8, "scan.points", "must be at least 8 for the curve fit");
    require(finite(sc.temperature), "scan.temperature", "must be finite");
    require(sc.samples_per_point >= 1, "scan.samples_per_point", "must be at least 1");
    if (sc.start) require(finite(*sc.start), "scan.start", "must be finite");
    if (sc.stop) require(finite(*sc.stop), "scan.stop", "must be finite");
    const auto grid = scan_grid(c);
    require(grid.back() > grid.front(), "scan.stop", "must be greater than scan.start");
    if (sc.axis == ScanAxis::Voltage)
        require(grid.front() >= c.lcpr_remote.v_min && grid.back() <= c.lcpr_remote.v_max,
                "scan.start", "voltage scan must stay within the remote LCPR range");

    require(c.chsh.samples >= 1000, "chsh.samples", "must be at least 1000");
    require(finite(c.chsh.temperature), "chsh.temperature", "must be finite");
}

AnalyzerAngle realize_angle(const LcprModel& lcpr, AnalyzerAngle target, double temp) {
    const double rel = target.radians - kAnalyzerMountOffset;
    const double turns = std::floor(rel / kHalfPi);
    const double rotation = rel - turns * kHalfPi;
    double voltage = rotation <= 0.0 ? lcpr.v_min
                     : rotation >= kHalfPi ? lcpr.v_max
                                           : lcpr_voltage_for(lcpr, rotation, temp);
    voltage = std::clamp(voltage, lcpr.v_min, lcpr.v_max);
    const double realized = lcpr_rotation(lcpr, voltage, temp).radians;
    // Report the realized angle next to the target, not shifted by a period.
    return AnalyzerAngle(target.radians + (realized - rotation));
}

AnalyzerAngle realize_voltage(const LcprModel& lcpr, double voltage, double temp) {
    return AnalyzerAngle(kAnalyzerMountOffset + lcpr_rotation(lcpr, voltage, temp).radians);
}

std::vector<double> step_times(const RunParams& run) {
    const auto n =
        static_cast<std::size_t>(std::floor(run.total_seconds / run.step_seconds + 1e-9));
    std::vector<double> times(n);
    for (std::size_t k = 0; k < n; ++k) times[k] = static_cast<double>(k + 1) * run.step_seconds;
    return times;
}

StepRecord step(const MissionConfig& config, double t, Rng& rng) {
    if (!(t >= 0.0 && t <= config.run.total_seconds * (1.0 + 1e-12)))
        throw DomainError("step time outside the run span");

    // Separate streams so that, e.g., switching dark counts on leaves the
    // pair, basis and thinning draws unchanged.
    Rng pair_rng = split(rng);
    Rng local_rng = split(rng);
    Rng remote_rng = split(rng);
    Rng dark_rng = split(rng);
    Rng session_rng = split(rng);

    const double integration = config.run.integration_seconds;
    StepRecord rec;
    rec.t = t;
    rec.temp = temperature_at(config.thermal, t);
    rec.range = separation_at(config.geometry, t);
    rec.link_db = total_link_db(rec.range, config.optics);
    const double transmittance =
        std::isinf(rec.link_db) ? 0.0 : std::min(1.0, db_to_transmittance(rec.link_db));
    const double brightness = source_brightness(config.source, rec.temp);

    const PairDraws pairs = draw_pairs(config, brightness, rec.temp, pair_rng);
    rec.pairs_generated = pairs.times.size();

    const auto local_events =
        detect_stream(pairs.times, pairs.local_port, 1.0, config.detectors.local(), rec.temp,
                      integration, local_rng);
    const auto remote_events =
        detect_stream(pairs.times, pairs.remote_port, transmittance, config.detectors.remote(),
                      rec.temp, integration, remote_rng);
    const auto local_bases = event_bases(local_events, pairs.local_basis, dark_rng);
    const auto remote_bases = event_bases(remote_events, pairs.remote_basis, dark_rng);

    const auto matches =
        match_coincidences(local_events, remote_events, config.run.coincidence_window);
    rec.coincidences = matches.size();
    rec.accidentals_est =
        accidental_rate(static_cast<double>(local_events.size()) / integration,
                        static_cast<double>(remote_events.size()) / integration,
                        config.run.coincidence_window) *
        integration;

    std::vector<RecordPair> records;
    records.reserve(matches.size());
    for (std::size_t k = 0; k < matches.size(); ++k) {
        const auto& le = local_events[matches[k].a];
        const auto& re = remote_events[matches[k].b];
        records.push_back({RawRecord{k, local_bases[matches[k].a], port_bit(le.port), le.time},
                           RawRecord{k, remote_bases[matches[k].b], port_bit(re.port), re.time}});
        if (records.back().local.basis == records.back().remote.basis) ++rec.sifted_bits;
    }

    if (rec.sifted_bits >= kMinSiftedForQber) {
        const SessionResult session = run_session(records, config.protocol, session_rng);
        rec.qber = session.key.qber;
        rec.key_fraction =
            key_fraction(std::min(session.key.qber, 0.5), config.protocol.ec_efficiency);
        rec.secret_bits_per_s = static_cast<double>(session.key.secret_length) / integration;
    }
    return rec;
}

std::vector<StepRecord> run_mission(const MissionConfig& config) {
    validate(config);
    const auto times = step_times(config.run);
    std::vector<StepRecord> records(times.size());

    const std::size_t workers = std::clamp<std::size_t>(
        std::thread::hardware_concurrency(), 1, std::max<std::size_t>(times.size(), 1));
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t k = w; k < times.size(); k += workers) {
                        Rng rng = derive_stream(config.run.seed, k + 1);
                        records[k] = step(config, times[k], rng);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return records;
}

std::vector<double> scan_grid(const MissionConfig& config) {
    const auto& sc = config.scan;
    const bool angle = sc.axis == ScanAxis::Angle;
    const double start = sc.start.value_or(angle ? 0.0 : config.lcpr_remote.v_min);
    const double stop =
        sc.stop.value_or(angle ? 35.0 * std::numbers::pi / 36.0 : config.lcpr_remote.v_max);
    const int n = std::max(sc.points, 2);
    std::vector<double> grid(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        grid[static_cast<std::size_t>(i)] = start + (stop - start) * i / (n - 1);
    return grid;
}

std::vector<ScanPoint> run_correlation_scan(const MissionConfig& config,
                                            AnalyzerAngle fixed_setting,
                                            std::span<const double> grid, double temp,
                                            std::uint64_t samples_per_point, ScanAxis axis,
                                            Rng& rng) {
    if (grid.empty()) throw DomainError("scan grid is empty");
    const TwoQubitState state = werner_state(config.source.visibility);
    const AnalyzerAngle fixed = realize_angle(config.lcpr_local, fixed_setting, temp);
    const double eff_local = detector_efficiency(config.detectors.local_t, temp);
    const double eff_remote = detector_efficiency(config.detectors.remote_t, temp);
    const double mean_pairs = static_cast<double>(samples_per_point) *
                              source_brightness(config.source, temp) /
                              config.source.brightness_ref;

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<ScanPoint> points;
    points.reserve(grid.size());
    for (double x : grid) {
        const AnalyzerAngle scanned = axis == ScanAxis::Angle
                                          ? realize_angle(config.lcpr_remote, AnalyzerAngle(x), temp)
                                          : realize_voltage(config.lcpr_remote, x, temp);
        const OutcomeSampler sampler(outcome_distribution(state, fixed, scanned));
        std::uint64_t pairs = 0;
        if (mean_pairs > 0.0) pairs = std::poisson_distribution<std::uint64_t>(mean_pairs)(rng);
        std::uint64_t count = 0;
        for (std::uint64_t i = 0; i < pairs; ++i) {
            const auto [pa, pb] = sampler(rng);
            const bool seen_local = uniform(rng) < eff_local;
            const bool seen_remote = uniform(rng) < eff_remote;
            if (pa == Port::Transmitted && pb == Port::Transmitted && seen_local && seen_remote)
                ++count;
        }
        points.push_back({x, static_cast<double>(count)});
    }
    return points;
}

ScanFit fit_scan(std::span<const ScanPoint> points, ScanAxis axis, const LcprModel& scanned) {
    ScanFit out;
    if (axis == ScanAxis::Angle) {
        out.fit = fit_correlation_curve(points);
        out.peak_setting = out.fit.phase;
        return out;
    }
    std::vector<ScanPoint> calibrated(points.begin(), points.end());
    for (auto& p : calibrated) p.setting = realize_voltage(scanned, p.setting, scanned.temp_cal).radians;
    out.fit = fit_correlation_curve(calibrated);

    double rotation = std::fmod(out.fit.phase - kAnalyzerMountOffset, std::numbers::pi);
    if (rotation < 0.0) rotation += std::numbers::pi;
    if (rotation > 0.0 && rotation < kHalfPi)
        out.peak_setting = std::clamp(lcpr_voltage_for(scanned, rotation, scanned.temp_cal),
                                      scanned.v_min, scanned.v_max);
    else
        out.peak_setting = rotation < 0.75 * std::numbers::pi ? scanned.v_max : scanned.v_min;
    return out;
}

ChshEstimate run_chsh_experiment(const MissionConfig& config, std::uint64_t n_samples,
                                 double temp, Rng& rng) {
    if (n_samples < 1000) throw DomainError("CHSH experiment needs at least 1000 samples");
    const TwoQubitState state = werner_state(config.source.visibility);
    const ChshAngles canon = canonical_chsh_angles();
    const AnalyzerAngle a = realize_angle(config.lcpr_local, canon.a, temp);
    const AnalyzerAngle a_prime = realize_angle(config.lcpr_local, canon.a_prime, temp);
    const AnalyzerAngle b = realize_angle(config.lcpr_remote, canon.b, temp);
    const AnalyzerAngle b_prime = realize_angle(config.lcpr_remote, canon.b_prime, temp);

    const std::uint64_t per_setting = n_samples / 4;
    auto estimate = [&](AnalyzerAngle x, AnalyzerAngle y, double& variance) {
        const OutcomeSampler sampler(outcome_distribution(state, x, y));
        std::int64_t balance = 0;
        for (std::uint64_t i = 0; i < per_setting; ++i) {
            const auto [pa, pb] = sampler(rng);
            balance += pa == pb ? 1 : -1;
        }
        const double e = static_cast<double>(balance) / static_cast<double>(per_setting);
        variance += (1.0 - e * e) / static_cast<double>(per_setting);
        return e;
    };

    double variance = 0.0;
    ChshEstimate out;
    out.s = estimate(a, b, variance) - estimate(a, b_prime, variance) +
            estimate(a_prime, b, variance) + estimate(a_prime, b_prime, variance);
    out.standard_error = std::sqrt(variance);
    return out;
}

} // namespace qkdsim
