#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hiercomp/hierdiff.hpp"
#include "hiercomp/rng.hpp"

using namespace hiercomp;

namespace {

AttentionMap positive(Eigen::Index r, Eigen::Index c, RngStream& rng) {
    AttentionMap m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.05 + rng.uniform();
    return m;
}

AttentionMap mat(std::initializer_list<std::initializer_list<double>> rows) {
    AttentionMap m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

// Central differences of L_n, relative error against the analytic gradient.
double max_relative_error(std::vector<AttentionMap> locals, OverlapMode mode) {
    const auto analytic = grad_sparsity_loss(locals, mode);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t m = 0; m < locals.size(); ++m) {
        for (Eigen::Index k = 0; k < locals[m].size(); ++k) {
            const double keep = locals[m].data()[k];
            locals[m].data()[k] = keep + h;
            const double up = sparsity_loss(locals, mode);
            locals[m].data()[k] = keep - h;
            const double down = sparsity_loss(locals, mode);
            locals[m].data()[k] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double a = analytic[m].data()[k];
            worst = std::max(worst, std::abs(fd - a) / std::max(std::abs(a), 1e-3));
        }
    }
    return worst;
}

}  // namespace

TEST(Schedule, Examples) {
    EXPECT_EQ(schedule(0, 5), 1.0);
    EXPECT_EQ(schedule(4, 5), 0.0);
    EXPECT_DOUBLE_EQ(schedule(2, 5), 0.7071067811865476);
    EXPECT_THROW(schedule(0, 1), InvalidArgument);
    EXPECT_THROW(schedule(5, 5), InvalidArgument);
    EXPECT_THROW(schedule(-1, 5), InvalidArgument);
}

TEST(Schedule, StrictlyDecreasing) {
    for (int total : {2, 3, 8, 50, 1000}) {
        for (int t = 0; t + 1 < total; ++t) EXPECT_GT(schedule(t, total), schedule(t + 1, total)) << total << " " << t;
    }
}

TEST(Interpolate, Endpoints) {
    RngStream rng(1, 0);
    AttentionStack s{positive(3, 4, rng), {positive(3, 4, rng), positive(3, 4, rng)}, 4, 5};
    EXPECT_EQ(interpolate_attention(s), s.global);
    s.t = 0;
    EXPECT_TRUE(interpolate_attention(s).isApprox((s.locals[0] + s.locals[1]) / 2.0, 1e-15));
}

TEST(Interpolate, MidpointExample) {
    AttentionStack s{AttentionMap::Ones(2, 2), {AttentionMap::Zero(2, 2)}, 2, 5};
    const auto out = interpolate_attention(s);
    for (Eigen::Index k = 0; k < out.size(); ++k) EXPECT_NEAR(out.data()[k], 0.29289321881, 1e-11);
}

TEST(Interpolate, ShapeMismatch) {
    AttentionStack s{AttentionMap::Ones(2, 2), {AttentionMap::Zero(2, 3)}, 1, 5};
    EXPECT_THROW(interpolate_attention(s), InvalidArgument);
    s.locals.clear();
    EXPECT_THROW(interpolate_attention(s), InvalidArgument);
}

TEST(Interpolate, AffineAndConvex) {
    RngStream rng(2, 0);
    for (int k = 0; k < 20; ++k) {
        const int total = 2 + static_cast<int>(rng.below(10));
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(total)));
        AttentionStack a{positive(3, 3, rng), {positive(3, 3, rng), positive(3, 3, rng), positive(3, 3, rng)}, t, total};
        AttentionStack b{positive(3, 3, rng), {positive(3, 3, rng), positive(3, 3, rng), positive(3, 3, rng)}, t, total};
        AttentionStack mix = a;
        mix.global = 0.3 * a.global + 0.7 * b.global;
        for (std::size_t m = 0; m < 3; ++m) mix.locals[m] = 0.3 * a.locals[m] + 0.7 * b.locals[m];
        const auto lhs = interpolate_attention(mix);
        const AttentionMap rhs = 0.3 * interpolate_attention(a) + 0.7 * interpolate_attention(b);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_TRUE(is_attention_map(lhs));
        // Entries lie inside the hull of the inputs at each position.
        AttentionMap lo = a.global;
        AttentionMap hi = a.global;
        for (const auto& l : a.locals) {
            lo = lo.cwiseMin(l);
            hi = hi.cwiseMax(l);
        }
        const auto out = interpolate_attention(a);
        EXPECT_TRUE(((out - lo).array() >= -1e-12).all());
        EXPECT_TRUE(((hi - out).array() >= -1e-12).all());
    }
}

TEST(Dice, Examples) {
    EXPECT_DOUBLE_EQ(dice_overlap(AttentionMap::Identity(2, 2), AttentionMap::Identity(2, 2)), 1.0);
    EXPECT_EQ(dice_overlap(mat({{1, 0}, {0, 0}}), mat({{0, 0}, {0, 1}})), 0.0);
    const auto h1 = mat({{1, 0}, {0, 0}});
    const auto h2 = mat({{1, 1}, {0, 0}});
    EXPECT_DOUBLE_EQ(dice_overlap(h1, h2), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(dice_overlap(h1, h2, OverlapMode::kStrictTrace), 2.0 / 3.0);
    EXPECT_THROW(dice_overlap(AttentionMap::Zero(2, 2), AttentionMap::Zero(2, 2)), DegenerateTest);
    EXPECT_THROW(dice_overlap(AttentionMap::Zero(2, 2), AttentionMap::Zero(3, 2)), InvalidArgument);
    EXPECT_THROW(dice_overlap(AttentionMap::Ones(2, 3), AttentionMap::Ones(2, 3), OverlapMode::kStrictTrace),
                 InvalidArgument);
}

TEST(Dice, ReadingsDifferOnAsymmetricMaps) {
    const auto a = mat({{0, 1}, {0, 0}});
    EXPECT_EQ(dice_overlap(a, a), 1.0);
    EXPECT_EQ(dice_overlap(a, a, OverlapMode::kStrictTrace), 0.0);
}

TEST(Dice, Properties) {
    RngStream rng(3, 0);
    for (int k = 0; k < 50; ++k) {
        const auto a = positive(4, 5, rng);
        const auto b = positive(4, 5, rng);
        const double d = dice_overlap(a, b);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_DOUBLE_EQ(d, dice_overlap(b, a));
        // Homogeneous of degree one under joint scaling.
        const double c = 0.1 + 5.0 * rng.uniform();
        EXPECT_NEAR(dice_overlap(c * a, c * b), c * d, 1e-12 * c);
        AttentionMap bin = (a.array() > 0.5).cast<double>();
        if (bin.sum() > 0.0) {
            EXPECT_DOUBLE_EQ(dice_overlap(bin, bin), 1.0);
        }
    }
}

TEST(Sparsity, Examples) {
    const auto h1 = mat({{1, 0}, {0, 0}});
    const auto h2 = mat({{1, 1}, {0, 0}});
    EXPECT_EQ(sparsity_loss({h1}), 0.0);
    EXPECT_EQ(sparsity_loss({h1, mat({{0, 0}, {0, 1}})}), 0.0);
    EXPECT_DOUBLE_EQ(sparsity_loss({h1, h2}), 4.0 / 3.0);
    EXPECT_THROW(sparsity_loss({}), InvalidArgument);
    EXPECT_THROW(sparsity_loss({h1, AttentionMap::Ones(3, 2)}), InvalidArgument);
    EXPECT_DOUBLE_EQ(mean_pairwise_dice({h1, h2}), 2.0 / 3.0);
    EXPECT_EQ(mean_pairwise_dice({h1}), 0.0);
}

TEST(Sparsity, PermutationInvariant) {
    RngStream rng(4, 0);
    std::vector<AttentionMap> locals;
    for (int m = 0; m < 4; ++m) locals.push_back(positive(3, 3, rng));
    const double base = sparsity_loss(locals);
    std::vector<int> order{0, 1, 2, 3};
    while (std::next_permutation(order.begin(), order.end())) {
        std::vector<AttentionMap> p;
        for (int i : order) p.push_back(locals[static_cast<std::size_t>(i)]);
        EXPECT_NEAR(sparsity_loss(p), base, 1e-13);
    }
}

TEST(Combined, Examples) {
    const auto h1 = mat({{1, 0}, {0, 0}});
    EXPECT_EQ(combined_loss(1.5, {h1, mat({{0, 0}, {0, 1}})}, 1e-4), 1.5);
    EXPECT_DOUBLE_EQ(combined_loss(0.0, {h1, mat({{1, 1}, {0, 0}})}, 3.0), 4.0);
    EXPECT_EQ(combined_loss(2.25, {h1, h1}, 0.0), 2.25);
    EXPECT_THROW(combined_loss(1.0, {h1}, -1.0), InvalidArgument);
    EXPECT_THROW(combined_loss(NAN, {h1}, 1.0), InvalidArgument);
    EXPECT_EQ(kDefaultSparsityWeight, 1e-4);
}

TEST(Gradient, Examples) {
    const auto h1 = mat({{1, 0}, {0, 0}});
    const auto single = grad_sparsity_loss({h1});
    EXPECT_EQ(single[0], AttentionMap::Zero(2, 2));
    const auto g = grad_sparsity_loss({h1, mat({{0, 0}, {0, 1}})});
    EXPECT_EQ(g[0](1, 0), 0.0);
    EXPECT_EQ(g[0](0, 1), 0.0);
}

TEST(Gradient, MatchesCentralDifferences) {
    RngStream rng(5, 0);
    std::vector<AttentionMap> locals{positive(3, 3, rng), positive(3, 3, rng), positive(3, 3, rng)};
    EXPECT_LE(max_relative_error(locals, OverlapMode::kElementwise), 1e-6);
    EXPECT_LE(max_relative_error(locals, OverlapMode::kStrictTrace), 1e-6);
}

TEST(Gradient, RandomInstances) {
    RngStream rng(6, 0);
    for (int k = 0; k < 25; ++k) {
        const auto m = 2 + rng.below(3);
        const auto r = static_cast<Eigen::Index>(1 + rng.below(4));
        const auto c = static_cast<Eigen::Index>(1 + rng.below(4));
        std::vector<AttentionMap> locals;
        for (std::uint64_t i = 0; i < m; ++i) locals.push_back(positive(r, c, rng));
        EXPECT_LE(max_relative_error(locals, OverlapMode::kElementwise), 1e-6) << k;
    }
}
