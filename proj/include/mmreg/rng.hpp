#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <numbers>
#include <utility>

namespace mmreg {

/// Counter-based generator: draw i is splitmix64(key + i * gamma).
///
/// The whole state is (key, counter), so it serializes trivially and is
/// identical on every platform. Distribution helpers are written out here
/// because the std:: distributions are implementation-defined.
class Rng {
public:
    struct State {
        std::uint64_t key = 0;
        std::uint64_t counter = 0;
        bool operator==(const State&) const = default;
    };

    explicit Rng(std::uint64_t seed = 0) : state_{mix(seed ^ kSeedSalt), 0} {}

    static Rng from_state(State s) {
        Rng r;
        r.state_ = s;
        return r;
    }

    State state() const noexcept { return state_; }

    std::uint64_t next_u64() noexcept { return mix(state_.key + (state_.counter++) * kGamma); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no cached second variate).
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n), rejection sampled. n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Independent child stream; advances this stream by one draw.
    Rng split() noexcept {
        Rng child;
        child.state_ = {mix(next_u64() ^ kSplitSalt), 0};
        return child;
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    static constexpr std::uint64_t kSeedSalt = 0x6a09e667f3bcc909ULL;
    static constexpr std::uint64_t kSplitSalt = 0xbb67ae8584caa73bULL;

    State state_;
};

/// Fisher-Yates with Rng::below, so permutations are reproducible across standard libraries.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(std::distance(first, last));
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
    }
}

}  // namespace mmreg
