// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qkdsim/bbm92.hpp"
#include "qkdsim/config.hpp"
#include "qkdsim/devices.hpp"
#include "qkdsim/link.hpp"
#include "qkdsim/polarization.hpp"
#include "qkdsim/sim.hpp"

using namespace qkdsim;
using std::numbers::pi;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += "failed: " + what;
        }
    }
    void note(const std::string& s) {
        if (!pass) return;
        if (!detail.empty()) detail += "; ";
        detail += s;
    }
};

std::string fmt(double x, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return buf;
}

void no_darks(MissionConfig& c) {
    for (DetectorModel* d : {&c.detectors.local_t, &c.detectors.local_r, &c.detectors.remote_t,
                             &c.detectors.remote_r})
        d->dark_rate = 0.0;
}

CurveFit angle_scan_fit(MissionConfig c, double visibility, std::uint64_t seed,
                        std::vector<ScanPoint>* points = nullptr) {
    c.source.visibility = visibility;
    c.scan.axis = ScanAxis::Angle;
    const auto grid = scan_grid(c);
    Rng rng = derive_stream(seed, 0);
    const auto pts = run_correlation_scan(c, AnalyzerAngle(0.0), grid, c.scan.temperature, 10000,
                                          ScanAxis::Angle, rng);
    if (points) *points = pts;
    return fit_scan(pts, ScanAxis::Angle, c.lcpr_remote).fit;
}

// 1. Correlation-scan fidelity.
Outcome scan_fidelity() {
    Outcome o;
    MissionConfig c;
    std::vector<ScanPoint> pts;
    const auto ideal = angle_scan_fit(c, 1.0, 1, &pts);
    o.require(pts.size() == 36, "36 scan points");
    o.require(ideal.visibility >= 0.99, "V=1 fitted visibility " + fmt(ideal.visibility) + " >= 0.99");
    const auto hi = std::max_element(pts.begin(), pts.end(),
                                     [](auto& a, auto& b) { return a.counts < b.counts; });
    const auto lo = std::min_element(pts.begin(), pts.end(),
                                     [](auto& a, auto& b) { return a.counts < b.counts; });
    const double step = pi / 36;
    o.require(oracle::angle_distance(hi->setting, 0.0) <= step + 1e-12,
              "peak at similar settings (got " + fmt(hi->setting) + " rad)");
    o.require(oracle::angle_distance(lo->setting, pi / 2) <= step + 1e-12,
              "trough at orthogonal settings (got " + fmt(lo->setting) + " rad)");
    o.require(oracle::angle_distance(ideal.phase, 0.0) < 0.02, "fitted peak phase near 0");
    const auto noisy = angle_scan_fit(c, 0.9, 2);
    o.require(std::abs(noisy.visibility - 0.9) <= 0.03,
              "V=0.9 fitted visibility " + fmt(noisy.visibility) + " within 0.03");
    o.note("V(1)=" + fmt(ideal.visibility, 4) + " V(0.9)=" + fmt(noisy.visibility, 4));
    return o;
}

// 2. LCPR shift direction.
Outcome lcpr_shift() {
    Outcome o;
    MissionConfig c;
    c.scan.axis = ScanAxis::Voltage;
    const auto grid = scan_grid(c);
    const double tc = c.lcpr_remote.temp_cal;
    double min_shift = 1e9;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto peak = [&](double temp, std::uint64_t stream) {
            Rng rng = derive_stream(seed, stream);
            const auto pts = run_correlation_scan(c, AnalyzerAngle(c.scan.fixed_setting), grid,
                                                  temp, c.scan.samples_per_point,
                                                  ScanAxis::Voltage, rng);
            return fit_scan(pts, ScanAxis::Voltage, c.lcpr_remote).peak_setting;
        };
        const double warm = peak(tc, 1);
        const double cold = peak(tc - 10.0, 2);
        o.require(cold > warm, "seed " + std::to_string(seed) + ": cold peak " + fmt(cold) +
                                   " V not above " + fmt(warm) + " V");
        min_shift = std::min(min_shift, cold - warm);
    }
    o.note("10 seeds, smallest shift " + fmt(min_shift, 3) + " V");
    return o;
}

// 3. Brightness versus temperature.
Outcome brightness_temperature() {
    Outcome o;
    MissionConfig c;
    o.require(c.source.brightness_slope > 0.0, "positive brightness slope");
    const auto grid = scan_grid(c);
    auto peak = [&](double temp, std::uint64_t seed) {
        Rng rng = derive_stream(seed, 3);
        const auto pts = run_correlation_scan(c, AnalyzerAngle(0.0), grid, temp, 100000,
                                              ScanAxis::Angle, rng);
        double best = 0.0;
        for (const auto& p : pts) best = std::max(best, p.counts);
        return best;
    };
    const double cold = peak(15.0, 1);
    const double ref = peak(24.7, 2);
    const double ref_again = peak(24.7, 3);
    o.require(cold > ref, "peak at 15 C (" + fmt(cold) + ") above 24.7 C (" + fmt(ref) + ")");
    o.require(std::abs(ref - ref_again) <= 4.0 * std::sqrt(ref + ref_again),
              "equal temperatures within 4 sigma");
    o.note("peak 15C=" + fmt(cold) + " 24.7C=" + fmt(ref) + "/" + fmt(ref_again));
    return o;
}

// 4. Link budget.
Outcome link_budget() {
    Outcome o;
    const double db = total_link_db(1e5, OpticsConfig{});
    o.require(std::abs(db - 30.0) <= 3.0, "100 km loss " + fmt(db) + " dB within 30 +- 3");
    o.require(db_to_transmittance(30.0) == 1e-3, "30 dB is exactly 1e-3");
    o.note("100 km loss " + fmt(db, 4) + " dB");
    return o;
}

// 5. CHSH.
Outcome chsh() {
    Outcome o;
    MissionConfig c;
    for (auto [v, expect] : {std::pair{1.0, 2.828427}, std::pair{0.9, 2.545584}}) {
        c.source.visibility = v;
        Rng rng = derive_stream(5, static_cast<std::uint64_t>(v * 100));
        const auto est = run_chsh_experiment(c, 1000000, 24.7, rng);
        o.require(std::abs(est.s - expect) <= 4.0 * est.standard_error,
                  "V=" + fmt(v) + " S=" + fmt(est.s) + " vs " + fmt(expect));
        o.note("S(" + fmt(v) + ")=" + fmt(est.s, 5) + "+-" + fmt(est.standard_error, 2));
    }
    std::mt19937_64 g(55);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int over = 0;
    for (int k = 0; k < 100; ++k) {
        MissionConfig r;
        r.source.visibility = u(g);
        r.lcpr_local.temp_coeff = 0.2 * u(g);
        r.lcpr_remote.temp_coeff = 0.2 * u(g);
        r.lcpr_remote.slope = 1.0 + 4.0 * u(g);
        const double temp = 10.0 + 20.0 * u(g);
        Rng rng = derive_stream(1000 + k, 0);
        const auto est = run_chsh_experiment(r, 100000, temp, rng);
        if (est.s > kTsirelsonBound + 4.0 * est.standard_error) ++over;
    }
    o.require(over == 0, std::to_string(over) + " of 100 random configs above the bound");
    o.note("0/100 random configs above 2sqrt2");
    return o;
}

// Pooled session QBER over seeds; returns {qber, tested bits}.
std::pair<double, double> pooled_qber(const MissionConfig& c, int seeds, double t) {
    double errors = 0.0, tested = 0.0;
    for (int s = 1; s <= seeds; ++s) {
        Rng rng = derive_stream(static_cast<std::uint64_t>(s), 1);
        const auto rec = step(c, t, rng);
        if (!rec.qber) continue;
        const double n = std::ceil(c.protocol.sample_fraction * rec.sifted_bits);
        errors += *rec.qber * n;
        tested += n;
    }
    return {tested > 0 ? errors / tested : 0.0, tested};
}

// 6. QBER relation.
Outcome qber_relation() {
    Outcome o;
    MissionConfig c;
    c.geometry.initial_separation = 1e4;
    c.geometry.relative_velocity = 0.0;
    // Low brightness keeps multi-pair accidentals well below the error rates
    // being resolved.
    c.source.brightness_ref = 1e5;
    c.run.step_seconds = 5.0;
    c.run.total_seconds = 5.0;
    c.run.integration_seconds = 5.0;
    no_darks(c);
    for (double v : {1.0, 0.96, 0.8}) {
        c.source.visibility = v;
        const auto [q, n] = pooled_qber(c, 4, 5.0);
        const double expect = (1.0 - v) / 2.0;
        const double sigma = std::sqrt(std::max(expect * (1.0 - expect), 1.0 / n) / n);
        o.require(n > 1000, "enough tested bits");
        o.require(std::abs(q - expect) <= 4.0 * sigma,
                  "V=" + fmt(v) + " QBER " + fmt(q) + " vs " + fmt(expect));
        o.note("Q(" + fmt(v) + ")=" + fmt(q, 4) + " n=" + fmt(n));
    }

    // Dark counts: same seeds with and without darks, long acquisition at
    // 100 km, nearly every sifted bit tested.
    MissionConfig far;
    far.geometry.initial_separation = 1e5;
    far.geometry.relative_velocity = 0.0;
    far.source.brightness_ref = 1e5;
    far.run.step_seconds = 20.0;
    far.run.total_seconds = 20.0;
    far.run.integration_seconds = 20.0;
    far.protocol.sample_fraction = 0.999;
    MissionConfig dark_free = far;
    no_darks(dark_free);
    const auto [q_off, n_off] = pooled_qber(dark_free, 10, 20.0);
    const auto [q_on, n_on] = pooled_qber(far, 10, 20.0);
    o.require(q_on > q_off, "500 cps darks raise QBER (" + fmt(q_off) + " -> " + fmt(q_on) + ")");
    o.note("darks " + fmt(q_off, 4) + " -> " + fmt(q_on, 4));
    return o;
}

std::vector<RecordPair> synthetic_records(std::size_t n, double error, Rng& rng) {
    std::bernoulli_distribution coin(0.5), flip(error);
    std::vector<RecordPair> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = out[i];
        r.local.index = r.remote.index = i;
        r.local.basis = r.remote.basis = coin(rng) ? Basis::Diagonal : Basis::Rectilinear;
        r.local.bit = coin(rng);
        r.remote.bit = static_cast<std::uint8_t>(r.local.bit ^ flip(rng));
    }
    return out;
}

// 7. Key-rate threshold.
Outcome key_threshold() {
    Outcome o;
    ProtocolParams p;
    p.ec_efficiency = 1.0;
    Rng g(77);
    std::uniform_real_distribution<double> rate(0.06, 0.14);
    int high = 0, low = 0;
    for (int k = 0; k < 200; ++k) {
        Rng data = derive_stream(7, static_cast<std::uint64_t>(k));
        const auto recs = synthetic_records(10000, rate(g), data);
        Rng rng = derive_stream(8, static_cast<std::uint64_t>(k));
        const auto res = run_session(recs, p, rng);
        if (res.key.qber >= 0.11) {
            ++high;
            o.require(res.key.secret_length == 0, "QBER " + fmt(res.key.qber) + " produced a key");
        } else if (res.key.qber <= 0.09) {
            ++low;
            o.require(res.key.secret_length > 0, "QBER " + fmt(res.key.qber) + " produced no key");
        }
    }
    o.require(high > 20 && low > 20, "both regimes exercised");

    // Zero-rate point of the library's key fraction versus the oracle.
    double lo = 0.0, hi = 0.5;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (key_fraction(mid, 1.0) > 0.0 ? lo : hi) = mid;
    }
    const double q_star = oracle::zero_rate_qber(1.0);
    o.require(std::abs(hi - q_star) <= 1e-9, "zero-rate point matches oracle");
    o.require(std::abs(hi - 0.110) <= 0.0005, "zero-rate point " + fmt(hi) + " = 0.110 +- 0.0005");
    o.note(std::to_string(high) + " sessions >= 0.11, " + std::to_string(low) +
           " <= 0.09, Q*=" + fmt(hi, 6));
    return o;
}

// 8. Dead-time round trip.
Outcome dead_time() {
    Outcome o;
    double worst = 0.0;
    for (double tau : {1e-8, 0.5e-6, 1e-6, 5e-5}) {
        for (int i = 0; i <= 600; ++i) {
            const double x = std::pow(10.0, -6.0 + 6.0 * i / 600.0);
            const double n = x / tau;
            const double back = correct_measured_rate(measured_rate_paralyzable(n, tau), tau);
            worst = std::max(worst, std::abs(back - n) / n);
        }
    }
    o.require(worst <= 1e-9, "max relative error " + fmt(worst));
    o.note("max relative error " + fmt(worst, 3));
    return o;
}

// 9. Coincidence matcher.
Outcome matcher() {
    Outcome o;
    std::mt19937_64 g(9);
    std::uniform_int_distribution<int> total(0, 12);
    std::uniform_real_distribution<double> t(0.0, 30e-9), w(0.5e-9, 8e-9);
    int disagreements = 0;
    for (int k = 0; k < 500; ++k) {
        const int n = total(g);
        const int na = std::uniform_int_distribution<int>(0, n)(g);
        std::vector<double> a(na), b(n - na);
        for (auto& x : a) x = t(g);
        for (auto& x : b) x = t(g);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        const double window = w(g);
        const auto m = match_coincidences(a, b, window);
        if (m.size() != oracle::brute_force_matching(a, b, window / 2 + kTimestampResolution))
            ++disagreements;
    }
    o.require(disagreements == 0, std::to_string(disagreements) + " of 500 instances differ");
    o.note("500/500 instances optimal");
    return o;
}

// 10. Mission sweep.
Outcome mission_sweep() {
    Outcome o;
    MissionConfig c;
    c.thermal.temp_min = c.thermal.temp_max = 24.7;
    c.geometry.relative_velocity = 0.0;
    c.run.step_seconds = 1.0;
    c.run.total_seconds = 1.0;
    c.run.integration_seconds = 0.2;
    double prev = std::numeric_limits<double>::infinity();
    std::string means;
    for (double km : {1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
        c.geometry.initial_separation = km * 1e3;
        double sum = 0.0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            c.run.seed = seed;
            sum += run_mission(c).front().secret_bits_per_s;
        }
        const double mean = sum / 10.0;
        o.require(mean <= prev, fmt(km) + " km mean " + fmt(mean) + " above previous " + fmt(prev));
        prev = mean;
        means += (means.empty() ? "" : " ") + fmt(km) + "km:" + fmt(mean, 4);
    }
    o.require(prev > 0.0, "positive key rate at 100 km");

    MissionConfig d;
    d.run.total_seconds = 5.0;
    d.run.integration_seconds = 0.05;
    d.run.seed = 31;
    const std::string a = format_mission_csv(run_mission(d));
    const std::string b = format_mission_csv(run_mission(d));
    o.require(a == b, "same seed gives identical CSV bytes");
    o.note(means + "; CSV deterministic");
    return o;
}

// 11. Protocol hygiene.
Outcome protocol_hygiene() {
    Outcome o;
    int leaks = 0, keyed = 0;
    std::uniform_real_distribution<double> rate(0.0, 0.15);
    Rng g(11);
    for (std::uint64_t k = 0; k < 100; ++k) {
        Rng data = derive_stream(11, k);
        auto recs = synthetic_records(2000, rate(g), data);
        for (std::size_t i = 0; i < recs.size(); i += 2) recs[i].remote.basis =
            recs[i].remote.basis == Basis::Diagonal ? Basis::Rectilinear : Basis::Diagonal;
        Rng rng = derive_stream(12, k);
        const auto res = run_session(recs, ProtocolParams{}, rng);
        validate_transcript(parse_transcript(serialize_transcript(res.transcript)));

        // Positions in the sifted list that were revealed for testing.
        const auto& sample = std::get<QberSamplePayload>(res.transcript[2].payload).positions;
        std::vector<bool> tested;
        for (std::size_t i = 0, pos = 0; i < recs.size(); ++i) {
            if (recs[i].local.basis != recs[i].remote.basis) continue;
            tested.push_back(std::binary_search(sample.begin(), sample.end(), pos));
            ++pos;
        }
        // Flip every key bit (sifted, not tested) on both sides. A transcript
        // that carries no key bits cannot change.
        auto flipped = recs;
        for (std::size_t i = 0, pos = 0; i < flipped.size(); ++i) {
            if (flipped[i].local.basis != flipped[i].remote.basis) continue;
            if (!tested[pos]) {
                flipped[i].local.bit ^= 1;
                flipped[i].remote.bit ^= 1;
            }
            ++pos;
        }
        Rng rng2 = derive_stream(12, k);
        const auto res2 = run_session(flipped, ProtocolParams{}, rng2);
        if (serialize_transcript(res2.transcript) != serialize_transcript(res.transcript)) ++leaks;
        if (!res.key.aborted) {
            ++keyed;
            o.require(res2.key.key_bits != res.key.key_bits, "key depends on key bits");
        }
    }
    o.require(leaks == 0, std::to_string(leaks) + " transcripts depend on key bits");
    o.require(keyed > 10, "sessions producing keys");

    // Grammar: every reordering of a valid transcript is rejected.
    Rng data = derive_stream(13, 0);
    const auto recs = synthetic_records(500, 0.01, data);
    Rng rng = derive_stream(14, 0);
    const auto res = run_session(recs, ProtocolParams{}, rng);
    std::vector<std::size_t> order = {0, 1, 2, 3, 4};
    int rejected = 0, permutations = 0;
    while (std::next_permutation(order.begin(), order.end())) {
        Transcript t;
        for (auto i : order) t.push_back(res.transcript[i]);
        ++permutations;
        try {
            validate_transcript(t);
        } catch (const ProtocolError&) {
            ++rejected;
        }
    }
    o.require(rejected == permutations, "all reordered transcripts rejected");

    // A live party receiving out of order raises a session error.
    std::vector<RawRecord> local, remote;
    for (const auto& r : recs) {
        local.push_back(r.local);
        remote.push_back(r.remote);
    }
    Rng prng = derive_stream(15, 0);
    LocalParty alice(local, ProtocolParams{}, prng);
    bool raised = false;
    try {
        alice.receive(res.transcript[3]);
    } catch (const ProtocolError&) {
        raised = true;
    }
    o.require(raised, "early QberReport rejected");
    o.note("100 sessions audited, " + std::to_string(keyed) + " keyed; " +
           std::to_string(permutations) + " reorderings rejected");
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"correlation-scan fidelity", scan_fidelity},
        {"LCPR shift direction", lcpr_shift},
        {"brightness-temperature", brightness_temperature},
        {"link-budget consistency", link_budget},
        {"CHSH", chsh},
        {"QBER relation", qber_relation},
        {"key-rate threshold", key_threshold},
        {"dead-time round trip", dead_time},
        {"coincidence matcher", matcher},
        {"mission sweep", mission_sweep},
        {"protocol hygiene", protocol_hygiene},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%2zu] %-26s %s  (%s; %.1fs)\n", i + 1, criteria[i].first,
                    o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
