#include <gtest/gtest.h>

#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "hiercomp/rng.hpp"

using namespace hiercomp;

// Known-answer vectors of the Philox4x32-10 reference implementation.
TEST(Philox, ZeroCounterZeroKey) {
    const auto out = philox4x32_10({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Philox4x32Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, AllOnes) {
    const auto out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out, (Philox4x32Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, PiDigits) {
    const auto out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out, (Philox4x32Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Uniform, OpenUnitInterval) {
    EXPECT_GT(words_to_unit(0, 0), 0.0);
    EXPECT_LT(words_to_unit(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(NormalQuantile, MatchesBoostAcrossRange) {
    const boost::math::normal_distribution<double> n01;
    for (double p : {1e-300, 1e-12, 1e-6, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-9}) {
        const double want = boost::math::quantile(n01, p);
        EXPECT_NEAR(normal_quantile(p), want, 1e-12 * std::max(1.0, std::abs(want))) << "p = " << p;
    }
}

TEST(CounterRng, AddressableAndDeterministic) {
    const CounterRng a(42);
    const CounterRng b(42);
    EXPECT_EQ(a.uniform(7, 3, 1), b.uniform(7, 3, 1));
    EXPECT_NE(a.uniform(7, 3, 1), a.uniform(8, 3, 1));
    EXPECT_NE(a.uniform(7, 3, 1), CounterRng(43).uniform(7, 3, 1));
    EXPECT_EQ(a.seed(), 42u);
}

TEST(CounterRng, UniformMoments) {
    const CounterRng rng(1);
    double sum = 0.0;
    double sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform(static_cast<std::uint64_t>(i), 0, 0);
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 2e-3);
}

TEST(RngStream, BelowStaysInRange) {
    RngStream s(5, 1);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(s.below(7), 7u);
}
