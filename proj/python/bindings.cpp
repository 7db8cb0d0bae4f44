#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qkdsim/bbm92.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/devices.hpp"
#include "qkdsim/link.hpp"
#include "qkdsim/polarization.hpp"
#include "qkdsim/sim.hpp"

namespace py = pybind11;
using namespace qkdsim;

namespace {

py::dict record_dict(const StepRecord& r) {
    py::dict d;
    d["t_s"] = r.t;
    d["range_m"] = r.range;
    d["link_db"] = r.link_db;
    d["temp_c"] = r.temp;
    d["pairs_generated"] = r.pairs_generated;
    d["coincidences"] = r.coincidences;
    d["accidentals_est"] = r.accidentals_est;
    d["sifted_bits"] = r.sifted_bits;
    d["qber"] = r.qber ? py::cast(*r.qber) : py::none();
    d["key_fraction"] = r.key_fraction;
    d["secret_bits_per_s"] = r.secret_bits_per_s;
    return d;
}

MissionConfig load(const std::string& text) { return parse_config_text(text, "<python>"); }

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Entanglement-based QKD mission simulator";

    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);
    py::register_exception<SaturationError>(m, "SaturationError", PyExc_ValueError);
    py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
    py::register_exception<InsufficientDataError>(m, "InsufficientDataError", PyExc_RuntimeError);
    static py::exception<CliError> config_error(m, "ConfigError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const CliError& e) {
            PyErr_SetString(config_error.ptr(), e.what());
        }
    });

    m.attr("TSIRELSON_BOUND") = kTsirelsonBound;
    m.attr("MISSION_CSV_HEADER") = std::string(kMissionCsvHeader);

    m.def("outcome_distribution", [](double v, double a, double b) {
        const auto d = outcome_distribution(werner_state(v), AnalyzerAngle(a), AnalyzerAngle(b));
        return std::vector<double>(d.begin(), d.end());
    }, py::arg("visibility"), py::arg("a"), py::arg("b"),
       "P(TT), P(TR), P(RT), P(RR) for a Werner state.");
    m.def("correlation", [](double v, double a, double b) {
        return correlation(werner_state(v), AnalyzerAngle(a), AnalyzerAngle(b));
    }, py::arg("visibility"), py::arg("a"), py::arg("b"));
    m.def("chsh_value", [](double v) {
        const auto c = canonical_chsh_angles();
        return chsh_value(werner_state(v), c.a, c.a_prime, c.b, c.b_prime);
    }, py::arg("visibility"), "S at the canonical settings.");

    m.def("binary_entropy", &binary_entropy);
    m.def("key_fraction", &key_fraction, py::arg("qber"), py::arg("ec_efficiency"));
    m.def("secret_key_length", &secret_key_length, py::arg("sifted_after_test"), py::arg("qber"),
          py::arg("ec_efficiency"));
    m.def("measured_rate_paralyzable", &measured_rate_paralyzable);
    m.def("correct_measured_rate", &correct_measured_rate);
    m.def("accidental_rate", &accidental_rate);
    m.def("match_coincidences", [](const std::vector<double>& a, const std::vector<double>& b,
                                   double window) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& x : match_coincidences(a, b, window)) out.emplace_back(x.a, x.b);
        return out;
    }, py::arg("times_a"), py::arg("times_b"), py::arg("window"));

    m.def("total_link_db", [](double range) { return total_link_db(range, OpticsConfig{}); },
          py::arg("range"), "Loss with the default optics.");
    m.def("db_to_transmittance", &db_to_transmittance);

    m.def("default_config", [] { return serialize_config(MissionConfig{}); },
          "Full TOML rendering of the defaults.");
    m.def("validate_config", [](const std::string& text) { return serialize_config(load(text)); },
          py::arg("toml"), "Parses and validates; returns the normalized TOML.");
    m.def("run_mission", [](const std::string& text) {
        std::vector<StepRecord> recs;
        {
            py::gil_scoped_release release;
            recs = run_mission(load(text));
        }
        py::list out;
        for (const auto& r : recs) out.append(record_dict(r));
        return out;
    }, py::arg("toml") = "");
    m.def("mission_csv", [](const std::string& text) {
        py::gil_scoped_release release;
        return format_mission_csv(run_mission(load(text)));
    }, py::arg("toml") = "");
    m.def("run_chsh", [](const std::string& text, std::uint64_t seed) {
        const MissionConfig c = load(text);
        Rng rng = derive_stream(seed, 0);
        const auto est = run_chsh_experiment(c, c.chsh.samples, c.chsh.temperature, rng);
        return py::make_tuple(est.s, est.standard_error);
    }, py::arg("toml") = "", py::arg("seed") = 1);
}
