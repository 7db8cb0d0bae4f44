#pragma once

// BBM92 post-processing between two parties that each hold one photon of every
// coincident pair. The parties are separate state machines that only see each
// other's ClassicalMessages; run_session wires them through an in-order,
// lossless channel and records the transcript.
//
// Session grammar (one message of each kind, in this order):
//   remote -> local  BasisAnnounce   remote bases, packed bits
//   local  -> remote SiftIndices     record indices with matching bases
//   local  -> remote QberSample      positions (in the sifted list) to reveal
//   remote -> local  QberReport      remote bits at those positions only
//   local  -> remote Abort | KeyParams
//
// Payload encodings (bytes rendered as lowercase hex on the wire):
//   varint    unsigned LEB128
//   bits      varint count, then ceil(count/8) bytes, bit i at byte i/8, LSB first
//   indices   varint count, then one varint per value, ascending
//   f64       IEEE-754 binary64, big-endian
//   BasisAnnounce  bits (1 = Diagonal)
//   SiftIndices    indices
//   QberSample     indices
//   QberReport     bits
//   Abort          varint reason (1 = QBER at/over threshold, 2 = no secret bits), f64 qber
//   KeyParams      f64 qber, varint secret_length, bits toeplitz_seed

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qkdsim/polarization.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim {

/// One bit per element, values 0 or 1.
using BitString = std::vector<std::uint8_t>;

enum class Basis : std::uint8_t { Rectilinear = 0, Diagonal = 1 };

AnalyzerAngle basis_angle(Basis basis);

/// Transmitted -> 0, Reflected -> 1.
inline std::uint8_t port_bit(Port port) { return static_cast<std::uint8_t>(port); }

struct RawRecord {
    std::uint64_t index = 0;
    Basis basis = Basis::Rectilinear;
    std::uint8_t bit = 0;
    double time = 0.0;
};

/// The two parties' records for one coincidence, same index on both sides.
struct RecordPair {
    RawRecord local;
    RawRecord remote;
};

enum class MessageKind : std::uint8_t {
    BasisAnnounce,
    SiftIndices,
    QberSample,
    QberReport,
    Abort,
    KeyParams
};

std::string_view to_string(MessageKind kind);
MessageKind message_kind_from_string(std::string_view name);

enum class AbortReason : std::uint8_t { QberThreshold = 1, NoSecretBits = 2 };

struct BasisAnnouncePayload {
    std::vector<Basis> bases;
};
struct SiftIndicesPayload {
    std::vector<std::uint64_t> indices;
};
struct QberSamplePayload {
    std::vector<std::uint64_t> positions;
};
struct QberReportPayload {
    BitString bits;
};
struct AbortPayload {
    AbortReason reason = AbortReason::QberThreshold;
    double qber = 0.0;
};
struct KeyParamsPayload {
    double qber = 0.0;
    std::uint64_t secret_length = 0;
    BitString toeplitz_seed;
};

using MessagePayload = std::variant<BasisAnnouncePayload, SiftIndicesPayload, QberSamplePayload,
                                    QberReportPayload, AbortPayload, KeyParamsPayload>;

struct ClassicalMessage {
    std::uint64_t sequence = 0;
    MessagePayload payload;

    MessageKind kind() const { return static_cast<MessageKind>(payload.index()); }
};

/// `MSG <kind> <sequence> <hex payload>` without a trailing newline.
std::string serialize_message(const ClassicalMessage& message);
ClassicalMessage parse_message(std::string_view line);

using Transcript = std::vector<ClassicalMessage>;

/// One serialized message per line, LF terminated.
std::string serialize_transcript(const Transcript& transcript);
Transcript parse_transcript(std::string_view text);

/// Throws ProtocolError unless the transcript follows the session grammar and
/// sequence numbers increase strictly per sender.
void validate_transcript(const Transcript& transcript);

struct SiftResult {
    std::vector<std::uint64_t> kept_indices;
    BitString bits_local;
    std::vector<Basis> bases; ///< common basis of each kept record
    std::size_t sifted_count = 0;
};

struct QberEstimate {
    double qber = 0.0;
    std::vector<std::size_t> test_positions; ///< ascending positions in the sifted list
};

struct ProtocolParams {
    double sample_fraction = 0.2;
    double qber_abort_threshold = 0.11;
    double ec_efficiency = 1.1;

    bool operator==(const ProtocolParams&) const = default;
};

struct KeyMaterial {
    double qber = 0.0;
    std::size_t sifted_bits = 0;
    std::size_t revealed_bits = 0;
    std::size_t secret_length = 0;
    BitString key_bits;
    bool aborted = false;
};

struct SessionResult {
    KeyMaterial key;
    Transcript transcript;
};

inline constexpr std::size_t kMinSiftedForQber = 10;

Basis choose_basis(Rng& rng);

/// Keeps records whose local basis equals the announced remote basis.
SiftResult sift(std::span<const RawRecord> local_records, std::span<const Basis> remote_bases);

/// ceil(fraction * n) distinct positions out of [0, n), by partial
/// Fisher-Yates, returned ascending.
std::vector<std::size_t> sample_test_positions(std::size_t sifted_count, double sample_fraction,
                                               Rng& rng);

/// Fraction of disagreements between `local_bits` at `positions` and
/// `remote_sample_bits` (aligned with `positions`).
double qber_from_sample(std::span<const std::uint8_t> local_bits,
                        std::span<const std::size_t> positions,
                        std::span<const std::uint8_t> remote_sample_bits);

/// Samples test positions and compares. Only the sampled entries of
/// `remote_sifted_bits` are read.
QberEstimate estimate_qber(const SiftResult& sifted,
                           std::span<const std::uint8_t> remote_sifted_bits,
                           double sample_fraction, Rng& rng);

/// Copy of `bits` without the (ascending) `positions`.
BitString remove_positions(std::span<const std::uint8_t> bits,
                           std::span<const std::size_t> positions);

double binary_entropy(double x);

/// Asymptotic secret fraction max(0, 1 - (1 + f) H2(Q)).
double key_fraction(double qber, double ec_efficiency);

std::size_t secret_key_length(std::size_t sifted_after_test, double qber, double ec_efficiency);

/// out_i = XOR_j T[i][j] x_j with T[i][j] = seed[i - j + n - 1].
BitString toeplitz_hash(std::span<const std::uint8_t> input, std::span<const std::uint8_t> seed,
                        std::size_t out_len);

/// Party holding the source: sifts, chooses the test sample, decides, hashes.
class LocalParty {
public:
    LocalParty(std::vector<RawRecord> records, ProtocolParams params, Rng& rng);

    /// Handles one incoming message and returns the replies to send.
    std::vector<ClassicalMessage> receive(const ClassicalMessage& message);

    bool finished() const { return stage_ == Stage::Done; }
    const KeyMaterial& key() const { return key_; }

private:
    enum class Stage { AwaitBases, AwaitReport, Done };

    ClassicalMessage make(MessagePayload payload);

    std::vector<RawRecord> records_;
    ProtocolParams params_;
    Rng& rng_;
    Stage stage_ = Stage::AwaitBases;
    std::uint64_t next_sequence_ = 0;
    std::optional<std::uint64_t> last_remote_sequence_;
    SiftResult sifted_;
    std::vector<std::size_t> test_positions_;
    KeyMaterial key_;
};

/// Party at the far end of the link: announces bases, reveals test bits.
class RemoteParty {
public:
    explicit RemoteParty(std::vector<RawRecord> records);

    ClassicalMessage announce_bases();
    std::vector<ClassicalMessage> receive(const ClassicalMessage& message);

    bool finished() const { return stage_ == Stage::Done; }
    bool aborted() const { return aborted_; }
    std::size_t secret_length() const { return secret_length_; }

private:
    enum class Stage { Announce, AwaitSift, AwaitSample, AwaitDecision, Done };

    ClassicalMessage make(MessagePayload payload);

    std::vector<RawRecord> records_;
    Stage stage_ = Stage::Announce;
    std::uint64_t next_sequence_ = 0;
    std::optional<std::uint64_t> last_local_sequence_;
    BitString sifted_bits_;
    bool aborted_ = false;
    std::size_t secret_length_ = 0;
};

/// Runs both parties to completion over an ordered, lossless channel.
/// Throws InsufficientDataError with fewer than kMinSiftedForQber sifted bits.
SessionResult run_session(std::span<const RecordPair> coincidences, const ProtocolParams& params,
                          Rng& rng);

} // namespace qkdsim
