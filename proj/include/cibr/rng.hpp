#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace cibr {

/// Counter-based generator: draw k of stream (seed, label, index) is a pure
/// function of those four values, so results never depend on call order
/// across streams. Labels in use: "init", "data", "train", "eval", "perm",
/// "gradcheck".
class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (spare value cached).
    double normal() noexcept;
    /// Uniform integer in [0, n); n must be positive.
    std::size_t below(std::size_t n) noexcept;

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Child seed for a named sub-purpose, e.g. derive_seed(seed, "enc_v").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept;

}  // namespace cibr
