#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace unremix {

/// Counter-based generator: the i-th output of a stream is
/// splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15), where key is derived from the
/// seed and stream id. Every platform produces the same bits for the same seed.
/// Normals use Box-Muller on pairs of uniforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
    /// Unbiased integer in [0, n).
    std::size_t below(std::size_t n) noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const noexcept;

    std::vector<std::size_t> permutation(std::size_t n) noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

} // namespace unremix
