#pragma once

#include <cstdint>
#include <string_view>

namespace vrta {

// Splittable counter-based generator. One 64-bit seed feeds every random
// decision in the project; independent streams are carved out with fork(),
// so adding a draw in one place never shifts the draws of another stream.
//
// Contract (pinned by tests/data/rng_vectors.csv):
//   mix64(z)   = the splitmix64 finalizer
//   root key   = mix64(seed + GAMMA)
//   fork(l)    = new stream with key' = mix64(key ^ mix64(l + GAMMA))
//   fork(name) = fork(fnv1a64(name))
//   draw i     = mix64(key + i * GAMMA), counter i starting at 1
//   unit       = (draw >> 11) * 2^-53, in [0, 1)
//   gaussian   = Box-Muller: sqrt(-2 ln u1) * cos(2 pi u2), u1 in (0, 1]
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Derives an independent stream. Deterministic in (key, label).
    Rng fork(std::uint64_t label) const;
    Rng fork(std::string_view label) const;

    std::uint64_t next_u64();
    double next_unit();       // uniform in [0, 1)
    double next_gaussian();   // standard normal
    // uniform integer in [0, n), n >= 1
    std::uint64_t next_below(std::uint64_t n);

    std::uint64_t key() const { return key_; }

    static std::uint64_t mix64(std::uint64_t z);
    static std::uint64_t fnv1a64(std::string_view s);

private:
    struct FromKey {};
    Rng(FromKey, std::uint64_t key) : key_(key) {}

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace vrta
