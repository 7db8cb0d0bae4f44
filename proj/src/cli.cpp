#include "qkdsim/cli.hpp"

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>

#include "qkdsim/config.hpp"

namespace qkdsim {

namespace {

// Stream ids for the single-shot experiments; mission steps use 1..N.
constexpr std::uint64_t kScanStream = 0xC0FFEE01;
constexpr std::uint64_t kChshStream = 0xC0FFEE02;

struct Invocation {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_path;
    std::optional<std::string> axis;
};

MissionConfig load(const Invocation& inv) {
    MissionConfig config = inv.config_path.empty() ? MissionConfig{} : parse_config(inv.config_path);
    if (inv.seed) config.run.seed = *inv.seed;
    if (inv.axis) config.scan.axis = *inv.axis == "voltage" ? ScanAxis::Voltage : ScanAxis::Angle;
    return config;
}

void deliver(const Invocation& inv, const std::string& content, std::ostream& out) {
    if (inv.out_path.empty())
        out << content;
    else
        write_output(inv.out_path, content);
}

std::string fit_line_value(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

int run_scan(const Invocation& inv, std::ostream& out) {
    const MissionConfig config = load(inv);
    const auto grid = scan_grid(config);
    Rng rng = derive_stream(config.run.seed, kScanStream);
    const auto points =
        run_correlation_scan(config, AnalyzerAngle(config.scan.fixed_setting), grid,
                             config.scan.temperature, config.scan.samples_per_point,
                             config.scan.axis, rng);
    ScanFit fitted;
    try {
        fitted = fit_scan(points, config.scan.axis, config.lcpr_remote);
    } catch (const FitError&) {
        fitted.fit = CurveFit{};
    }
    CurveFit footer = fitted.fit;
    footer.phase = fitted.peak_setting;
    deliver(inv, format_scan_csv(points, footer), out);
    return 0;
}

int run_chsh(const Invocation& inv, std::ostream& out) {
    const MissionConfig config = load(inv);
    Rng rng = derive_stream(config.run.seed, kChshStream);
    const auto est = run_chsh_experiment(config, config.chsh.samples, config.chsh.temperature, rng);
    const std::string line =
        "S=" + fit_line_value(est.s) + " stderr=" + fit_line_value(est.standard_error) + "\n";
    deliver(inv, line, out);
    if (!inv.out_path.empty()) out << line;
    return est.s - 4.0 * est.standard_error > 2.0 ? 0 : static_cast<int>(ExitCode::NotWitnessed);
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Entanglement-based QKD mission simulator", "qkdsim"};
    app.require_subcommand(1, 1);
    Invocation inv;

    auto add_common = [&inv](CLI::App* sub) {
        sub->add_option("--config", inv.config_path, "TOML configuration file");
        sub->add_option("--seed", inv.seed, "RNG seed, overrides run.seed");
    };
    auto* mission = app.add_subcommand("mission", "Run the mission time series, write CSV");
    add_common(mission);
    mission->add_option("--out", inv.out_path, "Output CSV path (default: stdout)");
    auto* scan = app.add_subcommand("scan", "Polarization correlation scan with fitted curve");
    add_common(scan);
    scan->add_option("--out", inv.out_path, "Output CSV path (default: stdout)");
    scan->add_option("--axis", inv.axis, "Scanned quantity")
        ->check(CLI::IsMember({"angle", "voltage"}));
    auto* chsh = app.add_subcommand("chsh", "Monte Carlo CHSH experiment");
    add_common(chsh);
    chsh->add_option("--out", inv.out_path, "Also write the result line to this file");
    auto* check = app.add_subcommand("validate", "Check a configuration file");
    add_common(check);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "qkdsim: " << e.what() << '\n';
        return static_cast<int>(ExitCode::Usage);
    }

    try {
        if (*mission) {
            const MissionConfig config = load(inv);
            deliver(inv, format_mission_csv(run_mission(config)), out);
            return 0;
        }
        if (*scan) return run_scan(inv, out);
        if (*chsh) return run_chsh(inv, out);
        load(inv);
        return 0;
    } catch (const CliError& e) {
        err << "qkdsim: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const InvalidConfig& e) {
        err << "qkdsim: " << e.what() << '\n';
        return static_cast<int>(ExitCode::InvalidValue);
    } catch (const std::exception& e) {
        err << "qkdsim: " << e.what() << '\n';
        return static_cast<int>(ExitCode::InvalidValue);
    }
}

} // namespace qkdsim
