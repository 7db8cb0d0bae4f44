#include "qkdsim/rng.hpp"

#include <array>

namespace qkdsim {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng from_words(std::uint64_t a, std::uint64_t b) {
    std::uint64_t state = a ^ splitmix64(b);
    std::array<std::uint32_t, 8> words{};
    for (std::size_t i = 0; i < words.size(); i += 2) {
        const std::uint64_t w = splitmix64(state);
        words[i] = static_cast<std::uint32_t>(w);
        words[i + 1] = static_cast<std::uint32_t>(w >> 32);
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

} // namespace

Rng derive_stream(std::uint64_t seed, std::uint64_t stream) {
    return from_words(seed, stream);
}

Rng split(Rng& parent) {
    const std::uint64_t a = parent();
    const std::uint64_t b = parent();
    return from_words(a, b);
}

} // namespace qkdsim
