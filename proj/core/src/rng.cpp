#include "vrta/rng.hpp"

#include <cmath>

#include "vrta/error.hpp"

namespace vrta {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t Rng::mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

std::uint64_t Rng::fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGamma)) {}

Rng Rng::fork(std::uint64_t label) const {
    return Rng(FromKey{}, mix64(key_ ^ mix64(label + kGamma)));
}

Rng Rng::fork(std::string_view label) const {
    return fork(fnv1a64(label));
}

std::uint64_t Rng::next_u64() {
    return mix64(key_ + (++counter_) * kGamma);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    // u1 shifted into (0, 1] so the log is always finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) {
        throw ContractError("Rng::next_below: n must be >= 1");
    }
    return next_u64() % n;
}

}  // namespace vrta
