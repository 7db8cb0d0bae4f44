#pragma once

#include <cstdint>
#include <random>

namespace qkdsim {

/// Every stochastic operation draws from a caller-owned engine of this type.
using Rng = std::mt19937_64;

/// Independent engine for (seed, stream). Counter-based, so the stream for
/// step k never depends on how many draws other streams made.
Rng derive_stream(std::uint64_t seed, std::uint64_t stream);

/// Splits a child engine off `parent` by drawing one seed word.
Rng split(Rng& parent);

} // namespace qkdsim
