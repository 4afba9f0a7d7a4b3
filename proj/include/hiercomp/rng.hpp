#pragma once

// Counter-based random numbers.
//
// Every draw is a pure function of (seed, counter). The block function is
// Philox4x32-10 (Salmon et al., SC'11); uniforms take the top 53 bits of the
// first two output words, and gaussians use the inverse-CDF transform below.
// Reimplementations in other languages reproduce the streams bit-for-bit as
// long as they follow the same three steps.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace hiercomp {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr, Philox4x32Key key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

/// Maps two 32-bit words to a double in the open interval (0, 1).
inline double words_to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (std::uint64_t{hi} << 32) | lo;
    return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse of the standard normal CDF: Acklam's rational approximation
/// followed by one Halley step against erfc. Accurate to ~1e-15 on (0, 1).
inline double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double kLow = 0.02425;

    double x;
    if (p < kLow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - kLow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Upper tail measured through 1 - p, which is exact there.
    const double e = p > 0.5 ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2) : normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

/// Addressable uniform/gaussian draws: value = f(seed, row, slot, draw).
/// Rows index samples, slots index variables, draws index the scalar within a slot.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    double uniform(std::uint64_t row, std::uint32_t slot, std::uint32_t draw) const {
        const auto out = philox4x32_10(
            {static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(row >> 32), slot, draw},
            key_);
        return words_to_unit(out[0], out[1]);
    }

    double gaussian(std::uint64_t row, std::uint32_t slot, std::uint32_t draw) const {
        return normal_quantile(uniform(row, slot, draw));
    }

    std::uint64_t seed() const {
        return (std::uint64_t{key_[1]} << 32) | key_[0];
    }

private:
    Philox4x32Key key_;
};

/// Sequential view over one (seed, stream) pair, for code that just wants "the next number".
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint32_t stream) : rng_(seed), stream_(stream) {}

    double uniform() { return rng_.uniform(next_++, stream_, 0x5EEDu); }
    double gaussian() { return normal_quantile(uniform()); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

private:
    CounterRng rng_;
    std::uint32_t stream_;
    std::uint64_t next_ = 0;
};

}  // namespace hiercomp
