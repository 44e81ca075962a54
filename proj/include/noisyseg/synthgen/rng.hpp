#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace noisyseg::synthgen {

/// splitmix64. The integer stream is identical on every platform for a given seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased (rejection).
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1)
            return 0;
        const std::uint64_t limit = (0 - n) % n;
        std::uint64_t r = next();
        while (r < limit)
            r = next();
        return r % n;
    }

    /// Uniform integer in [lo, hi].
    long uniform_int(long lo, long hi) noexcept {
        return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    [[nodiscard]] std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Independent child seed for item `index` of a family seeded by `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    Rng r(seed + index * 0x9e3779b97f4a7c15ULL);
    return r.next();
}

} // namespace noisyseg::synthgen
