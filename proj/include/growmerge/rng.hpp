// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace growmerge {

// 64-bit FNV-1a. Used to derive per-tensor RNG streams from tensor names.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic RNG with explicit bit-to-double mapping, so identical seeds
// produce identical streams on every platform and scheduling order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Independent stream keyed by (seed, extra words). Streams with distinct
    // keys are decorrelated by the splitmix finalizer.
    template <class... Keys>
    static Rng stream(std::uint64_t seed, Keys... keys) {
        std::uint64_t s = seed;
        ((s = mix(s, static_cast<std::uint64_t>(keys))), ...);
        return Rng(s);
    }

    static Rng stream_named(std::uint64_t seed, std::string_view name) {
        return Rng(mix(seed, fnv1a64(name)));
    }

    static Rng stream_named(std::uint64_t seed, std::uint64_t index, std::string_view name) {
        return Rng(mix(mix(seed, index), fnv1a64(name)));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform double in [0, 1), 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * 3.14159265358979323846 * uniform01();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        return splitmix64(s);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace growmerge
