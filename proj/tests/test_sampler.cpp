#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "hiercomp/composability.hpp"
#include "hiercomp/model_io.hpp"
#include "hiercomp/sampler.hpp"
#include "hiercomp/stats.hpp"
#include "support/corpus.hpp"

using namespace hiercomp;

namespace {

HierModel fixture(const std::string& name) {
    return load_model_file(std::string(HIERCOMP_DATA_DIR) + "/models/" + name + ".json").model;
}

// d.1 -> z1.1 ~ U[0, 1] when present, z1.1 -> z2.1 linear, z2.1 -> x.
HierModel unit_root_model() {
    std::map<VariableId, MechanismSpec> mech;
    mech[{2, 1}] = {MechanismFamily::kLinearGaussian, {0.0, 1.0}, {}, NoiseFamily::kGaussian, 0.3};
    mech[{3, 1}] = {MechanismFamily::kLinearGaussian, {0.0, 1.0}, {}, NoiseFamily::kGaussian, 0.5};
    std::map<int, RootConditionalSpec> roots;
    roots[1] = {{RootValueSpec::degenerate(-1.0), RootValueSpec::interval(0.0, 1.0)}};
    return HierModel({1, 1, 1, 2}, {{{0, 1}, {1, 1}}, {{1, 1}, {2, 1}}, {{2, 1}, {3, 1}}}, mech, roots);
}

}  // namespace

TEST(Sample, BitIdenticalForSameInputs) {
    const auto m = fixture("fourlevel");
    const auto a = sample(m, {1, 1}, 500, 17);
    const auto b = sample(m, {1, 1}, 500, 17);
    EXPECT_EQ(a.data(), b.data());
    EXPECT_NE(a.data(), sample(m, {1, 1}, 500, 18).data());
}

TEST(Sample, SeedPrefixContract) {
    const auto m = fixture("fourlevel");
    const auto small = sample(m, {1, 0}, 300, 5);
    const auto large = sample(m, {1, 0}, 600, 5);
    EXPECT_EQ(large.data().topRows(300), small.data());
}

TEST(Sample, AbsentRootIsConstant) {
    const auto m = fixture("fourlevel");
    const auto b = sample(m, {0, 1}, 1000, 3);
    const auto z11 = b.column({1, 1});
    EXPECT_EQ(z11.minCoeff(), 0.0);
    EXPECT_EQ(z11.maxCoeff(), 0.0);
    EXPECT_GT(b.column({1, 2}).maxCoeff() - b.column({1, 2}).minCoeff(), 1.0);
}

TEST(Sample, NoiseFreeTableIsDeterministic) {
    const auto m = fixture("chain_table");
    const auto b = sample(m, {1}, 2000, 9);
    for (Eigen::Index r = 0; r < b.rows(); ++r) {
        const double z1 = b.column({1, 1})(r);
        EXPECT_EQ(b.column({2, 1})(r), z1 >= 0.0 ? 1.0 : -1.0);
    }
}

TEST(Sample, RejectsBadCombination) {
    const auto m = fixture("fourlevel");
    EXPECT_THROW(sample(m, {1, 2}, 10, 0), InvalidArgument);
    EXPECT_THROW(sample(m, {1}, 10, 0), InvalidArgument);
    EXPECT_THROW(sample(m, {1, 1}, 0, 0), InvalidArgument);
    EXPECT_THROW(sample(fixture("cross_level"), {1, 1}, 10, 0), InvalidArgument);
}

TEST(Sample, DisjointParentsUncorrelated) {
    // z2.1 depends on z1.1 only and z2.4 on z1.2 only, so they are independent given d.
    const auto m = fixture("fourlevel");
    const auto b = sample(m, {1, 1}, 10000, 2024);
    const auto r = partial_correlation_test(b.column({2, 1}), b.column({2, 4}), Eigen::MatrixXd(b.rows(), 0));
    EXPECT_GT(r.p_value, 0.01) << "r = " << r.statistic;
}

TEST(Sample, SameLevelDisjointParentsAcrossCorpus) {
    // Every same-level pair with disjoint parent sets passes the null at n = 1e4.
    int tested = 0;
    int rejected = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = testkit::random_piecewise_model(seed);
        const auto b = sample(m, DiscreteCombination(std::vector<int>(static_cast<std::size_t>(m.num_concepts()), 1)),
                              10000, seed);
        for (int l = 2; l <= m.num_levels(); ++l) {
            for (int i = 1; i <= m.width(l); ++i) {
                for (int j = i + 1; j <= m.width(l); ++j) {
                    std::set<VariableId> pi;
                    for (const auto& p : m.parents({l, i})) pi.insert(p);
                    bool disjoint = true;
                    for (const auto& p : m.parents({l, j})) disjoint = disjoint && !pi.contains(p);
                    if (!disjoint || l > 2) continue;  // deeper levels share ancestors
                    const auto u = b.column({l, i});
                    const auto v = b.column({l, j});
                    if (u.minCoeff() == u.maxCoeff() || v.minCoeff() == v.maxCoeff()) continue;
                    ++tested;
                    if (partial_correlation_test(u, v, Eigen::MatrixXd(b.rows(), 0)).p_value < 0.01) ++rejected;
                }
            }
        }
    }
    EXPECT_GT(tested, 0);
    EXPECT_LE(rejected, 1) << "of " << tested;
}

TEST(Support, DegenerateVariableHasOneCell) {
    const auto m = fixture("fourlevel");
    QuantizationGrid grid;
    EXPECT_EQ(sample_marginal_support(m, {0, 1}, {{1, 1}}, 2000, 1, grid).size(), 1u);
}

TEST(Support, UniformRootFillsFourCells) {
    const auto m = unit_root_model();
    QuantizationGrid grid;
    grid.cells = 4;
    grid.ranges[{1, 1}] = {0.0, 1.0};
    const auto cells = sample_marginal_support(m, {1}, {{1, 1}}, 10000, 4, grid);
    EXPECT_EQ(cells, (std::set<Cell>{{0}, {1}, {2}, {3}}));
}

TEST(Support, MonotoneUnderSeedPrefix) {
    const auto m = fixture("fourlevel");
    const auto grid = fit_grid(m, {{1, 1}}, 2000, 0, 16);
    const std::vector<VariableId> vars{{2, 2}, {2, 3}};
    for (std::size_t n : {100u, 400u, 1600u}) {
        const auto small = sample_marginal_support(m, {1, 1}, vars, n, 8, grid);
        const auto large = sample_marginal_support(m, {1, 1}, vars, 2 * n, 8, grid);
        EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end())) << n;
    }
}

TEST(Support, PiecewiseCellsEqualExactImage) {
    for (const char* name : {"fourlevel_table", "two_root_joint"}) {
        const auto m = fixture(name);
        for (const DiscreteCombination& d : {DiscreteCombination{1, 1}, DiscreteCombination{0, 1}}) {
            SupportOptions opt;
            opt.mode = SupportMode::kExact;
            const auto table = build_support_table(m, {d}, opt);
            const auto batch = sample(m, d, 10000, 31);
            for (const auto& [z, pa] : parent_sets(m)) {
                if (z.level == 1) continue;
                EXPECT_EQ(occupied_cells(batch, pa, table.grid()), table.at(pa, d).cells)
                    << name << " " << to_string(d) << " " << m.name(z);
            }
        }
    }
}

TEST(Export, RoundTripWithSidecar) {
    const auto m = fixture("fourlevel");
    const auto b = sample_pooled(m, {{1, 0}, {1, 1}}, 50, 12);
    const auto path = (std::filesystem::temp_directory_path() / "hiercomp_batch_test.csv").string();
    write_batch(b, m, path);
    const auto back = read_batch(m, path);
    EXPECT_EQ(back.data(), b.data());
    EXPECT_EQ(back.conditioning(), b.conditioning());
    EXPECT_EQ(back.seed(), 12u);
    std::ifstream side(path + ".meta.json");
    const auto meta = nlohmann::json::parse(side);
    EXPECT_EQ(meta["model_hash"], model_hash(m));
    EXPECT_EQ(meta["d"].size(), 2u);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".meta.json");
}

TEST(Combinations, LoadFixturesAndErrors) {
    const auto ds = load_combinations_file(std::string(HIERCOMP_DATA_DIR) + "/ds/separate.json");
    EXPECT_EQ(ds, (std::set<DiscreteCombination>{{0, 0}, {0, 1}, {1, 0}}));
    EXPECT_TRUE(load_combinations("[]").empty());
    EXPECT_THROW(load_combinations("[[0, 1], [1]]"), ParseError);
    EXPECT_THROW(load_combinations("[[0, -1]]"), ParseError);
    EXPECT_THROW(load_combinations("{"), ParseError);
}
