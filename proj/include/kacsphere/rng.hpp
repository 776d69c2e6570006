/*
 * rng.hpp — counter-keyed random streams.
 *
 * Every Monte Carlo sample draws from an engine seeded by a hash of
 * (master seed, stream tag, cell parameter, sample index).  Because the
 * stream depends only on those four integers — never on which worker thread
 * happens to process the sample — estimates are bit-identical for any worker
 * count, and ensembles can be regenerated sample-by-sample at will.
 */

#pragma once

#include <cstdint>
#include <random>

namespace kacsphere {

/* SplitMix64: tiny, well-mixed 64-bit finalizer (Steele, Lea & Flood). */
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/* Collapse the key tuple into one 64-bit seed; chained mixing keeps distinct
 * tuples from colliding in practice (each stage is a bijection).           */
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_tag,
                                 std::uint64_t cell, std::uint64_t index) {
    std::uint64_t s = splitmix64(master);
    s = splitmix64(s ^ stream_tag);
    s = splitmix64(s ^ cell);
    s = splitmix64(s ^ index);
    return s;
}

/* Fresh engine for one sample.  mt19937_64 construction costs ~1 µs, which
 * is negligible next to the per-sample work everywhere in this library.    */
inline std::mt19937_64 sample_engine(std::uint64_t master, std::uint64_t stream_tag,
                                     std::uint64_t cell, std::uint64_t index) {
    return std::mt19937_64(derive_seed(master, stream_tag, cell, index));
}

/* Stream tags: one per estimator family so that different metrics sharing a
 * (seed, N) cell still see independent randomness.                         */
namespace stream {
inline constexpr std::uint64_t kUniformSphere = 0x5348455245ULL;   // "SPHERE"
inline constexpr std::uint64_t kRescaled      = 0x52455343ULL;     // "RESC"
inline constexpr std::uint64_t kW2            = 0x5732ULL;
inline constexpr std::uint64_t kWr            = 0x5752ULL;
inline constexpr std::uint64_t kL1Marginal    = 0x4c31ULL;
inline constexpr std::uint64_t kEntropy       = 0x454e54ULL;
inline constexpr std::uint64_t kFisher        = 0x464953ULL;
inline constexpr std::uint64_t kConditioned   = 0x434f4eULL;
inline constexpr std::uint64_t kTailProb      = 0x5441494cULL;
inline constexpr std::uint64_t kIdentity      = 0x4944ULL;
inline constexpr std::uint64_t kBootstrap     = 0x424f4f54ULL;
inline constexpr std::uint64_t kMoment        = 0x4d4fULL;
inline constexpr std::uint64_t kMollify       = 0x4d4f4c4cULL;  // "MOLL"
}  // namespace stream

}  // namespace kacsphere
