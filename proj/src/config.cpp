#include "qkdsim/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

namespace qkdsim {

namespace {

using Setter = std::function<void(const toml::node&, const std::string&)>;

CliError invalid(const std::string& path, const std::string& message) {
    return CliError(ExitCode::InvalidValue, path + ": " + message);
}

double as_number(const toml::node& node, const std::string& path) {
    if (const auto* i = node.as_integer()) return static_cast<double>(i->get());
    if (const auto* f = node.as_floating_point()) return f->get();
    throw invalid(path, "expected a number");
}

std::int64_t as_integer(const toml::node& node, const std::string& path) {
    if (const auto* i = node.as_integer()) return i->get();
    throw invalid(path, "expected an integer");
}

Setter number(double& dst) {
    return [&dst](const toml::node& n, const std::string& p) { dst = as_number(n, p); };
}

Setter optional_number(std::optional<double>& dst) {
    return [&dst](const toml::node& n, const std::string& p) { dst = as_number(n, p); };
}

Setter unsigned_integer(std::uint64_t& dst) {
    return [&dst](const toml::node& n, const std::string& p) {
        const auto v = as_integer(n, p);
        if (v < 0) throw invalid(p, "must be non-negative");
        dst = static_cast<std::uint64_t>(v);
    };
}

Setter small_integer(int& dst) {
    return [&dst](const toml::node& n, const std::string& p) {
        const auto v = as_integer(n, p);
        if (v < 0 || v > 1'000'000) throw invalid(p, "must lie in [0, 1000000]");
        dst = static_cast<int>(v);
    };
}

Setter boolean(bool& dst) {
    return [&dst](const toml::node& n, const std::string& p) {
        const auto* b = n.as_boolean();
        if (!b) throw invalid(p, "expected true or false");
        dst = b->get();
    };
}

Setter scan_axis(ScanAxis& dst) {
    return [&dst](const toml::node& n, const std::string& p) {
        const auto* s = n.as_string();
        if (s && s->get() == "angle")
            dst = ScanAxis::Angle;
        else if (s && s->get() == "voltage")
            dst = ScanAxis::Voltage;
        else
            throw invalid(p, "expected \"angle\" or \"voltage\"");
    };
}

struct Schema {
    std::map<std::string, Setter> leaves;
    std::set<std::string> sections;
};

void add_lcpr(Schema& s, const std::string& prefix, LcprModel& m) {
    s.sections.insert(prefix);
    s.leaves[prefix + ".v_min"] = number(m.v_min);
    s.leaves[prefix + ".v_max"] = number(m.v_max);
    s.leaves[prefix + ".v_half"] = number(m.v_half);
    s.leaves[prefix + ".slope"] = number(m.slope);
    s.leaves[prefix + ".temp_coeff"] = number(m.temp_coeff);
    s.leaves[prefix + ".temp_cal"] = number(m.temp_cal);
}

void add_detector(Schema& s, const std::string& prefix, DetectorModel& d) {
    s.sections.insert(prefix);
    s.leaves[prefix + ".efficiency"] = number(d.efficiency_ref);
    s.leaves[prefix + ".temp_coeff"] = number(d.temp_coeff);
    s.leaves[prefix + ".temp_ref"] = number(d.temp_ref);
    s.leaves[prefix + ".dark_rate"] = number(d.dark_rate);
    s.leaves[prefix + ".dead_time"] = number(d.dead_time);
    s.leaves[prefix + ".compensated"] = boolean(d.compensated);
}

Schema make_schema(MissionConfig& c) {
    Schema s;
    s.sections = {"source", "detectors", "optics", "geometry", "thermal",
                  "protocol", "run", "scan", "chsh"};
    s.leaves["source.brightness_ref"] = number(c.source.brightness_ref);
    s.leaves["source.temp_ref"] = number(c.source.temp_ref);
    s.leaves["source.brightness_slope"] = number(c.source.brightness_slope);
    s.leaves["source.visibility"] = number(c.source.visibility);
    s.leaves["source.wavelength_local"] = number(c.source.wavelength_local);
    s.leaves["source.wavelength_remote"] = number(c.source.wavelength_remote);
    add_lcpr(s, "lcpr_local", c.lcpr_local);
    add_lcpr(s, "lcpr_remote", c.lcpr_remote);
    add_detector(s, "detectors.local_t", c.detectors.local_t);
    add_detector(s, "detectors.local_r", c.detectors.local_r);
    add_detector(s, "detectors.remote_t", c.detectors.remote_t);
    add_detector(s, "detectors.remote_r", c.detectors.remote_r);
    s.leaves["optics.waist"] = number(c.optics.waist);
    s.leaves["optics.wavelength"] = number(c.optics.wavelength);
    s.leaves["optics.rx_aperture_radius"] = number(c.optics.rx_aperture_radius);
    s.leaves["optics.pointing_sigma"] = number(c.optics.pointing_sigma);
    s.leaves["optics.excess_loss_db"] = number(c.optics.excess_loss_db);
    s.leaves["geometry.initial_separation"] = number(c.geometry.initial_separation);
    s.leaves["geometry.relative_velocity"] = number(c.geometry.relative_velocity);
    s.leaves["thermal.temp_min"] = number(c.thermal.temp_min);
    s.leaves["thermal.temp_max"] = number(c.thermal.temp_max);
    s.leaves["thermal.period"] = number(c.thermal.period);
    s.leaves["thermal.phase"] = number(c.thermal.phase);
    s.leaves["protocol.sample_fraction"] = number(c.protocol.sample_fraction);
    s.leaves["protocol.qber_abort_threshold"] = number(c.protocol.qber_abort_threshold);
    s.leaves["protocol.ec_efficiency"] = number(c.protocol.ec_efficiency);
    s.leaves["run.step_seconds"] = number(c.run.step_seconds);
    s.leaves["run.total_seconds"] = number(c.run.total_seconds);
    s.leaves["run.integration_seconds"] = number(c.run.integration_seconds);
    s.leaves["run.seed"] = unsigned_integer(c.run.seed);
    s.leaves["run.coincidence_window"] = number(c.run.coincidence_window);
    s.leaves["scan.axis"] = scan_axis(c.scan.axis);
    s.leaves["scan.fixed_setting"] = number(c.scan.fixed_setting);
    s.leaves["scan.start"] = optional_number(c.scan.start);
    s.leaves["scan.stop"] = optional_number(c.scan.stop);
    s.leaves["scan.points"] = small_integer(c.scan.points);
    s.leaves["scan.temperature"] = number(c.scan.temperature);
    s.leaves["scan.samples_per_point"] = unsigned_integer(c.scan.samples_per_point);
    s.leaves["chsh.samples"] = unsigned_integer(c.chsh.samples);
    s.leaves["chsh.temperature"] = number(c.chsh.temperature);
    return s;
}

void apply(const toml::table& table, const std::string& prefix, const Schema& schema) {
    for (auto&& [key, node] : table) {
        const std::string path =
            prefix.empty() ? std::string(key.str()) : prefix + "." + std::string(key.str());
        if (const auto* sub = node.as_table()) {
            if (!schema.sections.contains(path))
                throw CliError(ExitCode::UnknownKey, "unknown key '" + path + "'");
            apply(*sub, path, schema);
            continue;
        }
        const auto leaf = schema.leaves.find(path);
        if (leaf != schema.leaves.end()) {
            leaf->second(node, path);
        } else if (schema.sections.contains(path)) {
            throw invalid(path, "expected a table");
        } else {
            throw CliError(ExitCode::UnknownKey, "unknown key '" + path + "'");
        }
    }
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string sig6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

} // namespace

MissionConfig parse_config_text(std::string_view text, std::string_view origin) {
    toml::table table;
    try {
        table = toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
            << e.description();
        throw CliError(ExitCode::SyntaxError, msg.str());
    }
    MissionConfig config;
    const Schema schema = make_schema(config);
    apply(table, "", schema);
    try {
        validate(config);
    } catch (const InvalidConfig& e) {
        throw CliError(ExitCode::InvalidValue, e.what());
    }
    return config;
}

MissionConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in || std::filesystem::is_directory(path))
        throw CliError(ExitCode::MissingFile, "cannot read config file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path.string());
}

std::string serialize_config(const MissionConfig& c) {
    std::ostringstream out;
    auto kv = [&out](const char* key, double v) { out << key << " = " << format_double(v) << '\n'; };
    auto lcpr = [&](const char* name, const LcprModel& m) {
        out << "\n[" << name << "]\n";
        kv("v_min", m.v_min);
        kv("v_max", m.v_max);
        kv("v_half", m.v_half);
        kv("slope", m.slope);
        kv("temp_coeff", m.temp_coeff);
        kv("temp_cal", m.temp_cal);
    };
    auto detector = [&](const char* name, const DetectorModel& d) {
        out << "\n[detectors." << name << "]\n";
        kv("efficiency", d.efficiency_ref);
        kv("temp_coeff", d.temp_coeff);
        kv("temp_ref", d.temp_ref);
        kv("dark_rate", d.dark_rate);
        kv("dead_time", d.dead_time);
        out << "compensated = " << (d.compensated ? "true" : "false") << '\n';
    };

    out << "[source]\n";
    kv("brightness_ref", c.source.brightness_ref);
    kv("temp_ref", c.source.temp_ref);
    kv("brightness_slope", c.source.brightness_slope);
    kv("visibility", c.source.visibility);
    kv("wavelength_local", c.source.wavelength_local);
    kv("wavelength_remote", c.source.wavelength_remote);
    lcpr("lcpr_local", c.lcpr_local);
    lcpr("lcpr_remote", c.lcpr_remote);
    detector("local_t", c.detectors.local_t);
    detector("local_r", c.detectors.local_r);
    detector("remote_t", c.detectors.remote_t);
    detector("remote_r", c.detectors.remote_r);
    out << "\n[optics]\n";
    kv("waist", c.optics.waist);
    kv("wavelength", c.optics.wavelength);
    kv("rx_aperture_radius", c.optics.rx_aperture_radius);
    kv("pointing_sigma", c.optics.pointing_sigma);
    kv("excess_loss_db", c.optics.excess_loss_db);
    out << "\n[geometry]\n";
    kv("initial_separation", c.geometry.initial_separation);
    kv("relative_velocity", c.geometry.relative_velocity);
    out << "\n[thermal]\n";
    kv("temp_min", c.thermal.temp_min);
    kv("temp_max", c.thermal.temp_max);
    kv("period", c.thermal.period);
    kv("phase", c.thermal.phase);
    out << "\n[protocol]\n";
    kv("sample_fraction", c.protocol.sample_fraction);
    kv("qber_abort_threshold", c.protocol.qber_abort_threshold);
    kv("ec_efficiency", c.protocol.ec_efficiency);
    out << "\n[run]\n";
    kv("step_seconds", c.run.step_seconds);
    kv("total_seconds", c.run.total_seconds);
    kv("integration_seconds", c.run.integration_seconds);
    out << "seed = " << c.run.seed << '\n';
    kv("coincidence_window", c.run.coincidence_window);
    out << "\n[scan]\n";
    out << "axis = \"" << to_string(c.scan.axis) << "\"\n";
    kv("fixed_setting", c.scan.fixed_setting);
    if (c.scan.start) kv("start", *c.scan.start);
    if (c.scan.stop) kv("stop", *c.scan.stop);
    out << "points = " << c.scan.points << '\n';
    kv("temperature", c.scan.temperature);
    out << "samples_per_point = " << c.scan.samples_per_point << '\n';
    out << "\n[chsh]\n";
    out << "samples = " << c.chsh.samples << '\n';
    kv("temperature", c.chsh.temperature);
    return out.str();
}

std::string format_mission_csv(std::span<const StepRecord> records) {
    std::string out(kMissionCsvHeader);
    out += '\n';
    for (const auto& r : records) {
        out += sig6(r.t) + ',' + sig6(r.range) + ',' + sig6(r.link_db) + ',' + sig6(r.temp) + ',';
        out += std::to_string(r.pairs_generated) + ',' + std::to_string(r.coincidences) + ',';
        out += sig6(r.accidentals_est) + ',' + std::to_string(r.sifted_bits) + ',';
        out += (r.qber ? sig6(*r.qber) : std::string()) + ',';
        out += sig6(r.key_fraction) + ',' + sig6(r.secret_bits_per_s) + '\n';
    }
    return out;
}

std::string format_scan_csv(std::span<const ScanPoint> points, const CurveFit& fit) {
    std::string out = "setting,counts\n";
    for (const auto& p : points) out += sig6(p.setting) + ',' + sig6(p.counts) + '\n';
    out += "# fit A=" + sig6(fit.amplitude) + " V=" + sig6(fit.visibility) +
           " phi=" + sig6(fit.phase) + '\n';
    return out;
}

void write_output(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (out) out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw CliError(ExitCode::Unwritable, "cannot write output '" + path.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw CliError(ExitCode::Unwritable, "cannot write output '" + path.string() + "'");
    }
}

void emit_csv(std::span<const StepRecord> records, const std::filesystem::path& path) {
    if (records.empty()) throw DomainError("no records to emit");
    write_output(path, format_mission_csv(records));
}

} // namespace qkdsim
