#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "oracles.hpp"
#include "qkdsim/bbm92.hpp"
#include "qkdsim/errors.hpp"

using namespace qkdsim;

namespace {

// n coincidences with independent random bases; on matching bases the remote
// bit flips with probability `error`, otherwise it is random.
std::vector<RecordPair> make_records(std::size_t n, double error, Rng& rng) {
    std::bernoulli_distribution coin(0.5), flip(error);
    std::vector<RecordPair> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = out[i];
        r.local.index = r.remote.index = i;
        r.local.basis = coin(rng) ? Basis::Diagonal : Basis::Rectilinear;
        r.remote.basis = coin(rng) ? Basis::Diagonal : Basis::Rectilinear;
        r.local.bit = coin(rng);
        if (r.local.basis == r.remote.basis)
            r.remote.bit = static_cast<std::uint8_t>(r.local.bit ^ flip(rng));
        else
            r.remote.bit = coin(rng);
    }
    return out;
}

std::vector<RawRecord> with_bases(const std::vector<Basis>& b) {
    std::vector<RawRecord> r(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        r[i].index = i;
        r[i].basis = b[i];
        r[i].bit = static_cast<std::uint8_t>(i & 1);
    }
    return r;
}

} // namespace

TEST_CASE("basis choice") {
    Rng rng(1);
    const int n = 100000;
    int rect = 0;
    for (int i = 0; i < n; ++i) rect += choose_basis(rng) == Basis::Rectilinear;
    CHECK(std::abs(rect / double(n) - 0.5) <= 0.0063);

    Rng a(5), b(5), c(6);
    int disagree = 0;
    for (int i = 0; i < 10000; ++i) {
        const Basis x = choose_basis(a);
        CHECK(x == choose_basis(b));
        disagree += x != choose_basis(c);
    }
    CHECK(std::abs(disagree / 10000.0 - 0.5) <= 4.0 * 0.005);
}

TEST_CASE("sifting") {
    using B = Basis;
    const auto local = with_bases({B::Rectilinear, B::Diagonal, B::Rectilinear, B::Diagonal});
    const std::vector<B> same = {B::Rectilinear, B::Diagonal, B::Rectilinear, B::Diagonal};
    CHECK(sift(local, same).sifted_count == 4);
    const std::vector<B> opposite = {B::Diagonal, B::Rectilinear, B::Diagonal, B::Rectilinear};
    CHECK(sift(local, opposite).sifted_count == 0);
    const std::vector<B> mixed = {B::Rectilinear, B::Rectilinear, B::Diagonal, B::Diagonal};
    const auto s = sift(local, mixed);
    CHECK(s.kept_indices == std::vector<std::uint64_t>{0, 3});
    CHECK(s.bits_local == BitString{0, 1});
    CHECK_THROWS_AS(sift(local, std::vector<B>{B::Rectilinear}), ProtocolError);
}

TEST_CASE("test sample positions") {
    Rng rng(3);
    const auto p = sample_test_positions(1000, 0.2, rng);
    CHECK(p.size() == 200);
    CHECK(std::is_sorted(p.begin(), p.end()));
    CHECK(std::adjacent_find(p.begin(), p.end()) == p.end());
    CHECK(p.back() < 1000);
    CHECK(sample_test_positions(11, 0.2, rng).size() == 3);
    CHECK_THROWS_AS(sample_test_positions(9, 0.2, rng), InsufficientDataError);
    CHECK_THROWS_AS(sample_test_positions(100, 0.0, rng), DomainError);
    CHECK_THROWS_AS(sample_test_positions(100, 1.0, rng), DomainError);
}

TEST_CASE("qber estimation") {
    const BitString bits = {0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0};
    BitString flipped = bits;
    for (auto& b : flipped) b ^= 1;
    std::vector<std::size_t> all(bits.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    CHECK(qber_from_sample(bits, all, bits) == 0.0);
    CHECK(qber_from_sample(bits, all, flipped) == 1.0);

    Rng rng(8);
    SiftResult s;
    s.sifted_count = 10000;
    std::bernoulli_distribution coin(0.5), err(0.05);
    BitString remote(s.sifted_count);
    for (std::size_t i = 0; i < s.sifted_count; ++i) {
        s.bits_local.push_back(coin(rng));
        remote[i] = static_cast<std::uint8_t>(s.bits_local[i] ^ err(rng));
    }
    const auto est = estimate_qber(s, remote, 0.2, rng);
    CHECK(std::abs(est.qber - 0.05) <= 0.02);
}

TEST_CASE("remove positions") {
    const BitString b = {1, 0, 1, 1, 0};
    const std::vector<std::size_t> p = {0, 3};
    CHECK(remove_positions(b, p) == BitString{0, 1, 0});
}

TEST_CASE("binary entropy and key fraction") {
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK(binary_entropy(0.5) == doctest::Approx(1.0));
    CHECK(binary_entropy(0.11) == doctest::Approx(0.499916).epsilon(1e-6));
    CHECK(key_fraction(0.0, 1.1) == 1.0);
    CHECK(key_fraction(0.5, 1.1) == 0.0);

    const double q_star = oracle::zero_rate_qber(1.0);
    CHECK(q_star == doctest::Approx(0.110).epsilon(0.0005 / 0.11));
    CHECK(key_fraction(q_star * 0.999, 1.0) > 0.0);
    CHECK(key_fraction(q_star * 1.001, 1.0) == 0.0);

    CHECK(secret_key_length(1000, 0.0, 1.1) == 1000);
    CHECK(secret_key_length(1000, 0.2, 1.1) == 0);
    CHECK(secret_key_length(10000, 0.02, 1.1) ==
          static_cast<std::size_t>(std::floor(1e4 * (1 - 2.1 * oracle::entropy2(0.02)))));
    CHECK(secret_key_length(10000, 0.02, 1.1) == 7029);
}

TEST_CASE("property: key fraction is monotone in qber and in f") {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> q(0.0, 0.5), f(1.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
        double a = q(g), b = q(g);
        if (a > b) std::swap(a, b);
        const double fe = f(g);
        CHECK(key_fraction(a, fe) >= key_fraction(b, fe));
        CHECK(key_fraction(a, fe) >= key_fraction(a, fe + 0.1));
        CHECK(key_fraction(a, fe) >= 0.0);
        CHECK(key_fraction(a, fe) <= 1.0);
    }
}

TEST_CASE("toeplitz hashing") {
    const BitString zero(50, 0);
    Rng rng(2);
    BitString seed(50 + 20 - 1);
    for (auto& s : seed) s = rng() & 1;
    CHECK(toeplitz_hash(zero, seed, 20) == BitString(20, 0));
    CHECK(toeplitz_hash(zero, seed, 0).empty());

    const BitString x = {1, 0, 1};
    const BitString s5 = {1, 0, 1, 1, 0};
    CHECK(toeplitz_hash(x, s5, 3) == oracle::toeplitz_dense(x, s5, 3));
}

TEST_CASE("property: toeplitz hash equals dense GF(2) product") {
    Rng rng(21);
    std::uniform_int_distribution<std::size_t> len(1, 300);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = len(rng), m = len(rng) % n + 1;
        BitString x(n), seed(n + m - 1);
        for (auto& b : x) b = rng() & 1;
        for (auto& b : seed) b = rng() & 1;
        CHECK(toeplitz_hash(x, seed, m) == oracle::toeplitz_dense(x, seed, m));
    }
}

TEST_CASE("message round trip") {
    Rng rng(6);
    const std::vector<MessagePayload> payloads = {
        BasisAnnouncePayload{{Basis::Diagonal, Basis::Rectilinear, Basis::Diagonal}},
        SiftIndicesPayload{{0, 5, 300, 1ull << 40}},
        QberSamplePayload{{}},
        QberReportPayload{{1, 0, 1, 1, 0, 0, 0, 1, 1}},
        AbortPayload{AbortReason::NoSecretBits, 0.1234},
        KeyParamsPayload{0.031, 777, {1, 1, 0}},
    };
    for (std::size_t i = 0; i < payloads.size(); ++i) {
        const ClassicalMessage m{i * 3 + 1, payloads[i]};
        const std::string line = serialize_message(m);
        CHECK(line.rfind("MSG ", 0) == 0);
        const auto back = parse_message(line);
        CHECK(back.sequence == m.sequence);
        CHECK(back.kind() == m.kind());
        CHECK(serialize_message(back) == line);
    }
    CHECK_THROWS_AS(parse_message("MSG Bogus 1 00"), ProtocolError);
    CHECK_THROWS_AS(parse_message("MSG QberReport 1 zz"), ProtocolError);
    CHECK_THROWS_AS(parse_message("HELLO"), ProtocolError);
}

TEST_CASE("end to end session") {
    Rng data(10);
    const auto noiseless = make_records(10000, 0.0, data);
    Rng rng(1);
    const auto res = run_session(noiseless, ProtocolParams{}, rng);
    CHECK(res.key.qber == 0.0);
    CHECK_FALSE(res.key.aborted);
    const double sifted = static_cast<double>(res.key.sifted_bits);
    CHECK(std::abs(sifted - 5000.0) <= 4.0 * 50.0);
    CHECK(res.key.secret_length == res.key.sifted_bits - res.key.revealed_bits);
    CHECK(res.key.key_bits.size() == res.key.secret_length);
    CHECK(std::abs(static_cast<double>(res.key.secret_length) - 4000.0) <= 4.0 * 50.0);
    CHECK_NOTHROW(validate_transcript(res.transcript));
    CHECK(res.transcript.size() == 5);

    Rng rng2(1);
    const auto again = run_session(noiseless, ProtocolParams{}, rng2);
    CHECK(serialize_transcript(again.transcript) == serialize_transcript(res.transcript));
    CHECK(again.key.key_bits == res.key.key_bits);

    const auto random = make_records(10000, 0.5, data);
    const auto bad = run_session(random, ProtocolParams{}, rng);
    CHECK(std::abs(bad.key.qber - 0.5) <= 0.05);
    CHECK(bad.key.aborted);
    CHECK(bad.key.key_bits.empty());
    CHECK(bad.transcript.back().kind() == MessageKind::Abort);
}

TEST_CASE("session needs enough sifted bits") {
    Rng data(2);
    auto few = make_records(8, 0.0, data);
    Rng rng(1);
    CHECK_THROWS_AS(run_session(few, ProtocolParams{}, rng), InsufficientDataError);
}

TEST_CASE("out-of-order messages are rejected") {
    Rng data(3);
    const auto recs = make_records(200, 0.0, data);
    std::vector<RawRecord> local, remote;
    for (const auto& r : recs) {
        local.push_back(r.local);
        remote.push_back(r.remote);
    }
    Rng rng(4);
    LocalParty alice(local, ProtocolParams{}, rng);
    RemoteParty bob(remote);
    // A report before the bases were announced.
    CHECK_THROWS_AS(alice.receive(ClassicalMessage{0, QberReportPayload{{0, 1}}}), ProtocolError);

    RemoteParty bob2(remote);
    CHECK_THROWS_AS(bob2.receive(ClassicalMessage{0, QberSamplePayload{{1}}}), ProtocolError);

    // Replayed sequence number.
    Rng rng3(4);
    LocalParty carol(local, ProtocolParams{}, rng3);
    const auto announce = bob.announce_bases();
    const auto replies = carol.receive(announce);
    REQUIRE(replies.size() == 2);
    CHECK_THROWS_AS(carol.receive(announce), ProtocolError);
}

TEST_CASE("transcript grammar validation") {
    Rng data(5);
    const auto recs = make_records(1000, 0.0, data);
    Rng rng(7);
    const auto res = run_session(recs, ProtocolParams{}, rng);
    const auto parsed = parse_transcript(serialize_transcript(res.transcript));
    CHECK_NOTHROW(validate_transcript(parsed));

    auto swapped = parsed;
    std::swap(swapped[1], swapped[2]);
    CHECK_THROWS_AS(validate_transcript(swapped), ProtocolError);
    auto truncated = parsed;
    truncated.pop_back();
    CHECK_THROWS_AS(validate_transcript(truncated), ProtocolError);
    auto reseq = parsed;
    reseq[2].sequence = reseq[1].sequence;
    CHECK_THROWS_AS(validate_transcript(reseq), ProtocolError);
}
