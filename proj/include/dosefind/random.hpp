#pragma once

#include <cstdint>
#include <limits>

namespace dosefind {

/// Counter-based stream: the k-th draw is a SplitMix64 finalizer applied to
/// key + k * gamma. Substreams are derived by hashing (key, index), so any
/// replication or particle batch can be addressed directly without replaying
/// the parent. Satisfies UniformRandomBitGenerator.
class RngStream {
   public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0) noexcept : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return mix(key_ + (counter_++) * kGamma); }

    /// Independent child stream addressed by index.
    RngStream substream(std::uint64_t index) const noexcept {
        RngStream s;
        s.key_ = mix(key_ ^ mix(index + 0x3c6ef372fe94f82bULL));
        return s;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double prob) noexcept { return uniform() < prob; }

    std::uint64_t counter() const noexcept { return counter_; }

   private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace dosefind
