#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mimir {

/// Seeded 64-bit Mersenne Twister with distribution code kept in-house so
/// streams are identical across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    /// Normal(0, std) resampled until |x| <= 2 std.
    double truncated_normal(double std);

    /// Derives an independent child stream; advances this one by one draw.
    Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace mimir
