#include "qkdsim/bbm92.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace {

constexpr std::array<std::string_view, 6> kKindNames = {
    "BasisAnnounce", "SiftIndices", "QberSample", "QberReport", "Abort", "KeyParams"};

bool sent_by_remote(MessageKind kind) {
    return kind == MessageKind::BasisAnnounce || kind == MessageKind::QberReport;
}

// ---- byte encoding ------------------------------------------------------

class ByteWriter {
public:
    void varint(std::uint64_t v) {
        while (v >= 0x80) {
            bytes_.push_back(static_cast<std::uint8_t>(v | 0x80));
            v >>= 7;
        }
        bytes_.push_back(static_cast<std::uint8_t>(v));
    }

    void bits(std::span<const std::uint8_t> b) {
        varint(b.size());
        std::vector<std::uint8_t> packed((b.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        bytes_.insert(bytes_.end(), packed.begin(), packed.end());
    }

    void indices(std::span<const std::uint64_t> values) {
        varint(values.size());
        for (auto v : values) varint(v);
    }

    void f64(double x) {
        const auto u = std::bit_cast<std::uint64_t>(x);
        for (int shift = 56; shift >= 0; shift -= 8)
            bytes_.push_back(static_cast<std::uint8_t>(u >> shift));
    }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            const std::uint8_t b = next();
            v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
            if (!(b & 0x80)) return v;
        }
        throw ProtocolError("varint too long");
    }

    BitString bits() {
        const std::uint64_t n = varint();
        if (n > 8 * remaining()) throw ProtocolError("bit count exceeds payload");
        BitString out(n);
        std::uint8_t byte = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            if (i % 8 == 0) byte = next();
            out[i] = (byte >> (i % 8)) & 1u;
        }
        return out;
    }

    std::vector<std::uint64_t> indices() {
        const std::uint64_t n = varint();
        if (n > remaining()) throw ProtocolError("index count exceeds payload");
        std::vector<std::uint64_t> out(n);
        for (auto& v : out) v = varint();
        if (!std::is_sorted(out.begin(), out.end()) ||
            std::adjacent_find(out.begin(), out.end()) != out.end())
            throw ProtocolError("index list is not strictly ascending");
        return out;
    }

    double f64() {
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u = (u << 8) | next();
        return std::bit_cast<double>(u);
    }

    void finish() const {
        if (pos_ != bytes_.size()) throw ProtocolError("trailing bytes in payload");
    }

private:
    std::uint8_t next() {
        if (pos_ >= bytes_.size()) throw ProtocolError("truncated payload");
        return bytes_[pos_++];
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * bytes.size());
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw ProtocolError("odd-length hex payload");
    auto nibble = [](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
        throw ProtocolError("invalid hex digit in payload");
    };
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
    return out;
}

std::vector<std::uint8_t> encode_payload(const MessagePayload& payload) {
    ByteWriter w;
    std::visit(
        [&w](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BasisAnnouncePayload>) {
                BitString b(p.bases.size());
                std::transform(p.bases.begin(), p.bases.end(), b.begin(),
                               [](Basis x) { return static_cast<std::uint8_t>(x); });
                w.bits(b);
            } else if constexpr (std::is_same_v<T, SiftIndicesPayload>) {
                w.indices(p.indices);
            } else if constexpr (std::is_same_v<T, QberSamplePayload>) {
                w.indices(p.positions);
            } else if constexpr (std::is_same_v<T, QberReportPayload>) {
                w.bits(p.bits);
            } else if constexpr (std::is_same_v<T, AbortPayload>) {
                w.varint(static_cast<std::uint64_t>(p.reason));
                w.f64(p.qber);
            } else {
                w.f64(p.qber);
                w.varint(p.secret_length);
                w.bits(p.toeplitz_seed);
            }
        },
        payload);
    return w.bytes();
}

MessagePayload decode_payload(MessageKind kind, std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    MessagePayload out;
    switch (kind) {
    case MessageKind::BasisAnnounce: {
        BasisAnnouncePayload p;
        for (auto b : r.bits()) p.bases.push_back(static_cast<Basis>(b));
        out = std::move(p);
        break;
    }
    case MessageKind::SiftIndices:
        out = SiftIndicesPayload{r.indices()};
        break;
    case MessageKind::QberSample:
        out = QberSamplePayload{r.indices()};
        break;
    case MessageKind::QberReport:
        out = QberReportPayload{r.bits()};
        break;
    case MessageKind::Abort: {
        const auto reason = r.varint();
        if (reason != 1 && reason != 2) throw ProtocolError("unknown abort reason");
        AbortPayload p;
        p.reason = static_cast<AbortReason>(reason);
        p.qber = r.f64();
        out = p;
        break;
    }
    case MessageKind::KeyParams: {
        KeyParamsPayload p;
        p.qber = r.f64();
        p.secret_length = r.varint();
        p.toeplitz_seed = r.bits();
        out = std::move(p);
        break;
    }
    }
    r.finish();
    return out;
}

void check_fraction(double sample_fraction) {
    if (!(sample_fraction > 0.0 && sample_fraction < 1.0))
        throw DomainError("sample_fraction must lie in (0, 1)");
}

BitString random_bits(std::size_t n, Rng& rng) {
    BitString out(n);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % 64 == 0) word = rng();
        out[i] = static_cast<std::uint8_t>((word >> (i % 64)) & 1u);
    }
    return out;
}

std::vector<std::uint64_t> pack_words(std::span<const std::uint8_t> bits, bool reversed) {
    std::vector<std::uint64_t> words((bits.size() + 63) / 64 + 1, 0);
    const std::size_t n = bits.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint8_t b = reversed ? bits[n - 1 - k] : bits[k];
        if (b) words[k / 64] |= std::uint64_t{1} << (k % 64);
    }
    return words;
}

} // namespace

AnalyzerAngle basis_angle(Basis basis) {
    return AnalyzerAngle(basis == Basis::Rectilinear ? 0.0 : std::numbers::pi / 4.0);
}

std::string_view to_string(MessageKind kind) {
    return kKindNames[static_cast<std::size_t>(kind)];
}

MessageKind message_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == name) return static_cast<MessageKind>(i);
    throw ProtocolError("unknown message kind '" + std::string(name) + "'");
}

std::string serialize_message(const ClassicalMessage& message) {
    std::string out = "MSG ";
    out += to_string(message.kind());
    out += ' ';
    out += std::to_string(message.sequence);
    out += ' ';
    out += to_hex(encode_payload(message.payload));
    return out;
}

ClassicalMessage parse_message(std::string_view line) {
    auto take = [&line]() {
        const auto sp = line.find(' ');
        const std::string_view field = line.substr(0, sp);
        line = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
        return field;
    };
    if (take() != "MSG") throw ProtocolError("message line must start with MSG");
    const MessageKind kind = message_kind_from_string(take());
    const std::string_view seq = take();
    if (seq.empty() || !std::all_of(seq.begin(), seq.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw ProtocolError("invalid sequence number");
    ClassicalMessage msg;
    msg.sequence = std::stoull(std::string(seq));
    const std::string_view hex = take();
    if (!line.empty()) throw ProtocolError("unexpected fields after payload");
    msg.payload = decode_payload(kind, from_hex(hex));
    return msg;
}

std::string serialize_transcript(const Transcript& transcript) {
    std::string out;
    for (const auto& m : transcript) {
        out += serialize_message(m);
        out += '\n';
    }
    return out;
}

Transcript parse_transcript(std::string_view text) {
    Transcript out;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = text.substr(0, nl);
        if (!line.empty()) out.push_back(parse_message(line));
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    return out;
}

void validate_transcript(const Transcript& transcript) {
    static constexpr std::array<MessageKind, 4> prefix = {
        MessageKind::BasisAnnounce, MessageKind::SiftIndices, MessageKind::QberSample,
        MessageKind::QberReport};
    if (transcript.size() != prefix.size() + 1)
        throw ProtocolError("session transcript must contain exactly five messages");
    std::optional<std::uint64_t> last_local;
    std::optional<std::uint64_t> last_remote;
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        const MessageKind kind = transcript[i].kind();
        const bool ok = i < prefix.size()
                            ? kind == prefix[i]
                            : (kind == MessageKind::Abort || kind == MessageKind::KeyParams);
        if (!ok)
            throw ProtocolError("message " + std::to_string(i) + " (" +
                                std::string(to_string(kind)) + ") is out of order");
        auto& last = sent_by_remote(kind) ? last_remote : last_local;
        if (last && transcript[i].sequence <= *last)
            throw ProtocolError("sequence numbers must increase per sender");
        last = transcript[i].sequence;
    }
}

Basis choose_basis(Rng& rng) {
    return (rng() >> 63) ? Basis::Diagonal : Basis::Rectilinear;
}

SiftResult sift(std::span<const RawRecord> local_records, std::span<const Basis> remote_bases) {
    if (local_records.size() != remote_bases.size())
        throw ProtocolError("basis announcement length does not match local records");
    SiftResult out;
    for (std::size_t i = 0; i < local_records.size(); ++i) {
        if (local_records[i].basis != remote_bases[i]) continue;
        out.kept_indices.push_back(local_records[i].index);
        out.bits_local.push_back(local_records[i].bit);
        out.bases.push_back(remote_bases[i]);
    }
    out.sifted_count = out.kept_indices.size();
    return out;
}

std::vector<std::size_t> sample_test_positions(std::size_t sifted_count, double sample_fraction,
                                               Rng& rng) {
    check_fraction(sample_fraction);
    if (sifted_count < kMinSiftedForQber)
        throw InsufficientDataError("need at least " + std::to_string(kMinSiftedForQber) +
                                    " sifted bits, have " + std::to_string(sifted_count));
    const double target = sample_fraction * static_cast<double>(sifted_count);
    auto k = static_cast<std::size_t>(std::ceil(target - 1e-9 * target));
    k = std::clamp<std::size_t>(k, 1, sifted_count);

    std::vector<std::size_t> pool(sifted_count);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, sifted_count - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

double qber_from_sample(std::span<const std::uint8_t> local_bits,
                        std::span<const std::size_t> positions,
                        std::span<const std::uint8_t> remote_sample_bits) {
    if (positions.size() != remote_sample_bits.size())
        throw ProtocolError("sample bit count does not match sample positions");
    if (positions.empty()) throw InsufficientDataError("empty QBER sample");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] >= local_bits.size()) throw ProtocolError("sample position out of range");
        errors += local_bits[positions[i]] != remote_sample_bits[i];
    }
    return static_cast<double>(errors) / static_cast<double>(positions.size());
}

QberEstimate estimate_qber(const SiftResult& sifted,
                           std::span<const std::uint8_t> remote_sifted_bits,
                           double sample_fraction, Rng& rng) {
    if (remote_sifted_bits.size() != sifted.sifted_count)
        throw ProtocolError("remote sifted bits do not match the sifted count");
    QberEstimate est;
    est.test_positions = sample_test_positions(sifted.sifted_count, sample_fraction, rng);
    BitString sample(est.test_positions.size());
    for (std::size_t i = 0; i < sample.size(); ++i)
        sample[i] = remote_sifted_bits[est.test_positions[i]];
    est.qber = qber_from_sample(sifted.bits_local, est.test_positions, sample);
    return est;
}

BitString remove_positions(std::span<const std::uint8_t> bits,
                           std::span<const std::size_t> positions) {
    BitString out;
    out.reserve(bits.size() - std::min(bits.size(), positions.size()));
    std::size_t p = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (p < positions.size() && positions[p] == i) {
            ++p;
            continue;
        }
        out.push_back(bits[i]);
    }
    return out;
}

double binary_entropy(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("binary entropy argument outside [0, 1]");
    if (x == 0.0 || x == 1.0) return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

double key_fraction(double qber, double ec_efficiency) {
    if (!(qber >= 0.0 && qber <= 0.5)) throw DomainError("qber must lie in [0, 0.5]");
    if (!(ec_efficiency >= 1.0)) throw DomainError("error-correction efficiency must be >= 1");
    return std::max(0.0, 1.0 - (1.0 + ec_efficiency) * binary_entropy(qber));
}

std::size_t secret_key_length(std::size_t sifted_after_test, double qber, double ec_efficiency) {
    const double bits =
        static_cast<double>(sifted_after_test) * key_fraction(qber, ec_efficiency);
    return static_cast<std::size_t>(std::floor(bits));
}

BitString toeplitz_hash(std::span<const std::uint8_t> input, std::span<const std::uint8_t> seed,
                        std::size_t out_len) {
    const std::size_t n = input.size();
    if (out_len == 0) return {};
    if (out_len > n) throw DomainError("Toeplitz output longer than input");
    if (seed.size() != n + out_len - 1)
        throw DomainError("Toeplitz seed must have input + output - 1 bits");

    // With x'_k = x_{n-1-k}, row i is the seed window [i, i + n).
    const auto x = pack_words(input, true);
    const auto s = pack_words(seed, false);
    const std::size_t words = (n + 63) / 64;
    BitString out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        std::uint64_t acc = 0;
        for (std::size_t m = 0; m < words; ++m) {
            const std::size_t bit = i + 64 * m;
            const std::size_t w = bit / 64;
            const unsigned shift = bit % 64;
            std::uint64_t window = s[w] >> shift;
            if (shift != 0 && w + 1 < s.size()) window |= s[w + 1] << (64 - shift);
            acc ^= window & x[m];
        }
        out[i] = static_cast<std::uint8_t>(std::popcount(acc) & 1);
    }
    return out;
}

// ---- parties --------------------------------------------------------------

LocalParty::LocalParty(std::vector<RawRecord> records, ProtocolParams params, Rng& rng)
    : records_(std::move(records)), params_(params), rng_(rng) {}

ClassicalMessage LocalParty::make(MessagePayload payload) {
    return ClassicalMessage{next_sequence_++, std::move(payload)};
}

std::vector<ClassicalMessage> LocalParty::receive(const ClassicalMessage& message) {
    if (!sent_by_remote(message.kind()))
        throw ProtocolError("local party received its own message kind " +
                            std::string(to_string(message.kind())));
    if (last_remote_sequence_ && message.sequence <= *last_remote_sequence_)
        throw ProtocolError("remote sequence number did not increase");
    last_remote_sequence_ = message.sequence;

    std::vector<ClassicalMessage> replies;
    if (stage_ == Stage::AwaitBases && message.kind() == MessageKind::BasisAnnounce) {
        const auto& bases = std::get<BasisAnnouncePayload>(message.payload).bases;
        sifted_ = sift(records_, bases);
        test_positions_ =
            sample_test_positions(sifted_.sifted_count, params_.sample_fraction, rng_);
        replies.push_back(make(SiftIndicesPayload{sifted_.kept_indices}));
        replies.push_back(make(QberSamplePayload{
            std::vector<std::uint64_t>(test_positions_.begin(), test_positions_.end())}));
        stage_ = Stage::AwaitReport;
        return replies;
    }
    if (stage_ == Stage::AwaitReport && message.kind() == MessageKind::QberReport) {
        const auto& sample = std::get<QberReportPayload>(message.payload).bits;
        const double qber = qber_from_sample(sifted_.bits_local, test_positions_, sample);
        const BitString remaining = remove_positions(sifted_.bits_local, test_positions_);
        key_.qber = qber;
        key_.sifted_bits = sifted_.sifted_count;
        key_.revealed_bits = test_positions_.size();
        stage_ = Stage::Done;

        if (qber >= params_.qber_abort_threshold) {
            key_.aborted = true;
            replies.push_back(make(AbortPayload{AbortReason::QberThreshold, qber}));
            return replies;
        }
        const std::size_t length =
            secret_key_length(remaining.size(), std::min(qber, 0.5), params_.ec_efficiency);
        if (length == 0) {
            key_.aborted = true;
            replies.push_back(make(AbortPayload{AbortReason::NoSecretBits, qber}));
            return replies;
        }
        BitString seed = random_bits(remaining.size() + length - 1, rng_);
        key_.secret_length = length;
        key_.key_bits = toeplitz_hash(remaining, seed, length);
        replies.push_back(make(KeyParamsPayload{qber, length, std::move(seed)}));
        return replies;
    }
    throw ProtocolError("local party cannot accept " + std::string(to_string(message.kind())) +
                        " at this point of the session");
}

RemoteParty::RemoteParty(std::vector<RawRecord> records) : records_(std::move(records)) {}

ClassicalMessage RemoteParty::make(MessagePayload payload) {
    return ClassicalMessage{next_sequence_++, std::move(payload)};
}

ClassicalMessage RemoteParty::announce_bases() {
    if (stage_ != Stage::Announce) throw ProtocolError("bases were already announced");
    BasisAnnouncePayload p;
    p.bases.reserve(records_.size());
    for (const auto& r : records_) p.bases.push_back(r.basis);
    stage_ = Stage::AwaitSift;
    return make(std::move(p));
}

std::vector<ClassicalMessage> RemoteParty::receive(const ClassicalMessage& message) {
    if (sent_by_remote(message.kind()))
        throw ProtocolError("remote party received its own message kind " +
                            std::string(to_string(message.kind())));
    if (last_local_sequence_ && message.sequence <= *last_local_sequence_)
        throw ProtocolError("local sequence number did not increase");
    last_local_sequence_ = message.sequence;

    const MessageKind kind = message.kind();
    if (stage_ == Stage::AwaitSift && kind == MessageKind::SiftIndices) {
        const auto& kept = std::get<SiftIndicesPayload>(message.payload).indices;
        sifted_bits_.clear();
        auto it = records_.begin();
        for (auto index : kept) {
            it = std::lower_bound(it, records_.end(), index,
                                  [](const RawRecord& r, std::uint64_t v) { return r.index < v; });
            if (it == records_.end() || it->index != index)
                throw ProtocolError("sift index " + std::to_string(index) + " is unknown");
            sifted_bits_.push_back(it->bit);
        }
        stage_ = Stage::AwaitSample;
        return {};
    }
    if (stage_ == Stage::AwaitSample && kind == MessageKind::QberSample) {
        const auto& positions = std::get<QberSamplePayload>(message.payload).positions;
        QberReportPayload report;
        report.bits.reserve(positions.size());
        for (auto p : positions) {
            if (p >= sifted_bits_.size()) throw ProtocolError("sample position out of range");
            report.bits.push_back(sifted_bits_[p]);
        }
        stage_ = Stage::AwaitDecision;
        return {make(std::move(report))};
    }
    if (stage_ == Stage::AwaitDecision && kind == MessageKind::Abort) {
        aborted_ = true;
        stage_ = Stage::Done;
        return {};
    }
    if (stage_ == Stage::AwaitDecision && kind == MessageKind::KeyParams) {
        secret_length_ = std::get<KeyParamsPayload>(message.payload).secret_length;
        stage_ = Stage::Done;
        return {};
    }
    throw ProtocolError("remote party cannot accept " + std::string(to_string(kind)) +
                        " at this point of the session");
}

SessionResult run_session(std::span<const RecordPair> coincidences, const ProtocolParams& params,
                          Rng& rng) {
    check_fraction(params.sample_fraction);
    if (!(params.ec_efficiency >= 1.0))
        throw DomainError("error-correction efficiency must be >= 1");

    std::vector<RawRecord> local;
    std::vector<RawRecord> remote;
    local.reserve(coincidences.size());
    remote.reserve(coincidences.size());
    for (std::size_t i = 0; i < coincidences.size(); ++i) {
        const auto& c = coincidences[i];
        if (c.local.index != c.remote.index)
            throw ProtocolError("coincidence records are not aligned");
        if (i > 0 && c.local.index <= coincidences[i - 1].local.index)
            throw ProtocolError("record indices must be unique and ascending");
        local.push_back(c.local);
        remote.push_back(c.remote);
    }

    LocalParty alice(std::move(local), params, rng);
    RemoteParty bob(std::move(remote));

    SessionResult result;
    enum class To { Local, Remote };
    std::deque<std::pair<ClassicalMessage, To>> channel;
    auto send = [&](ClassicalMessage m, To to) {
        result.transcript.push_back(m);
        channel.emplace_back(std::move(m), to);
    };

    send(bob.announce_bases(), To::Local);
    while (!channel.empty()) {
        auto [msg, to] = std::move(channel.front());
        channel.pop_front();
        if (to == To::Local) {
            for (auto& r : alice.receive(msg)) send(std::move(r), To::Remote);
        } else {
            for (auto& r : bob.receive(msg)) send(std::move(r), To::Local);
        }
    }
    if (!alice.finished() || !bob.finished()) throw ProtocolError("session ended prematurely");
    result.key = alice.key();
    return result;
}

} // namespace qkdsim
