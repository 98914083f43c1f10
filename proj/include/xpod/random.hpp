#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace xpod {

/// Identifies one reproducible random stream: the experiment-wide master seed
/// plus an index (typically the image or resample number within a dataset).
struct SeedSpec {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_index = 0;

    friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

/// Sub-stream of `seed` for a numbered purpose. Mixes (stream_index, tag)
/// through SplitMix64 so nested derivations never collide in practice.
SeedSpec derive_seed(SeedSpec seed, std::uint64_t tag);

/// Philox4x32-10 block function (Salmon et al. 2011). Exposed for
/// known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Counter-based random stream keyed by (master_seed, stream_index, draw
/// counter). Draw k of a stream depends only on those three values, so
/// images generated in any order or on any thread are identical.
///
/// Fixed sampling algorithms (part of the reproducibility contract):
///   uniform  53-bit mantissa, open interval (0, 1)
///   normal   Box-Muller, both variates used (cos first, then sin)
///   poisson  Knuth multiplication for lambda < 10, Hormann PTRS for
///            10 <= lambda <= threshold, rounded Gaussian N(lambda, lambda)
///            above threshold (default 1e4)
class RandomStream {
public:
    using result_type = std::uint64_t;

    explicit RandomStream(SeedSpec seed);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u64(); }

    std::uint64_t next_u64();
    double uniform();
    double normal();
    double poisson(double lambda, double gauss_threshold = kDefaultPoissonGaussThreshold);
    /// Uniform integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n);

    static constexpr double kDefaultPoissonGaussThreshold = 1e4;

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

inline RandomStream derive_stream(SeedSpec seed) { return RandomStream(seed); }

}  // namespace xpod
