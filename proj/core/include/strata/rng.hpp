#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "strata/common.hpp"

namespace strata {

constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless uniform in [0,1) keyed by (seed, a, b); used where a decision must
// depend only on stable identifiers (e.g. per-row subsampling) and not on any
// draw order.
inline double keyed_uniform01(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = fnv1a64(b, fnv1a64(a, fnv1a64(seed)));
    std::uint64_t bits = splitmix64_next(s);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Deterministic random stream. Streams are derived from a master seed plus a
// string tag and index, so independent parts of the pipeline draw from
// independent sequences regardless of execution order.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(fnv1a64(seed)) {}

    static RngStream keyed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
        return RngStream(fnv1a64(index, fnv1a64(tag, fnv1a64(seed))));
    }

    RngStream substream(std::string_view tag, std::uint64_t index = 0) const {
        return RngStream(fnv1a64(index, fnv1a64(tag, state_)));
    }

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; always consumes two draws.
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Number of failures before the first success, success probability p.
    std::int64_t geometric(double p) {
        double u = 1.0 - uniform();
        if (p >= 1.0) return 0;
        return static_cast<std::int64_t>(std::floor(std::log(u) / std::log1p(-p)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace strata
