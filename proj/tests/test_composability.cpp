#include <gtest/gtest.h>

#include <algorithm>
#include <string>

#include "hiercomp/composability.hpp"
#include "hiercomp/model_io.hpp"
#include "support/corpus.hpp"
#include "support/swap_oracle.hpp"

using namespace hiercomp;

namespace {

HierModel fixture(const std::string& name) {
    return load_model_file(std::string(HIERCOMP_DATA_DIR) + "/models/" + name + ".json").model;
}

std::set<DiscreteCombination> ds(const std::string& name) {
    return load_combinations_file(std::string(HIERCOMP_DATA_DIR) + "/ds/" + name + ".json");
}

std::vector<DiscreteCombination> binary_cube(int n) {
    std::vector<DiscreteCombination> out;
    for (int mask = 0; mask < (1 << n); ++mask) {
        std::vector<int> v;
        for (int i = n - 1; i >= 0; --i) v.push_back((mask >> i) & 1);
        out.emplace_back(std::move(v));
    }
    return out;
}

std::set<DiscreteCombination> random_train(const std::vector<DiscreteCombination>& cube, RngStream& rng) {
    std::set<DiscreteCombination> out;
    for (const auto& d : cube) {
        if (rng.uniform() < 0.4) out.insert(d);
    }
    if (out.empty()) out.insert(cube[rng.below(cube.size())]);
    return out;
}

}  // namespace

TEST(Composability, TrainingCombinationIsItsOwnWitness) {
    const auto m = fixture("fourlevel_table");
    const auto train = ds("separate");
    const auto a = analyze_composability(m, train);
    for (const auto& v : a.verdicts) {
        if (!train.contains(v.d)) continue;
        EXPECT_TRUE(v.composable);
        for (const auto& [z, w] : v.witness) {
            // The smallest d~ may precede d itself when it covers d's parent support.
            EXPECT_LE(w, v.d) << m.name(z);
        }
    }
    const auto self = check_composability(m, {{1, 0}}, {1, 0}, a.table);
    for (const auto& [z, w] : self.witness) EXPECT_EQ(w, (DiscreteCombination{1, 0}));
}

TEST(Composability, SingletonParentsComposeUnseenPair) {
    const auto m = fixture("two_root_singleton");
    const auto a = analyze_composability(m, ds("disjoint"), std::vector<DiscreteCombination>{{1, 1}});
    ASSERT_EQ(a.verdicts.size(), 1u);
    const auto& v = a.verdicts.front();
    EXPECT_TRUE(v.composable);
    EXPECT_EQ(v.witness.at({2, 1}), (DiscreteCombination{1, 0}));
    EXPECT_EQ(v.witness.at({2, 2}), (DiscreteCombination{0, 1}));
    EXPECT_TRUE(v.blockers.empty());
}

TEST(Composability, JointParentBlocksUnseenPair) {
    const auto m = fixture("fourlevel_table");
    const auto a = analyze_composability(m, ds("disjoint"), std::vector<DiscreteCombination>{{1, 1}});
    const auto& v = a.verdicts.front();
    EXPECT_FALSE(v.composable);
    ASSERT_FALSE(v.blockers.empty());
    bool z22 = false;
    for (const auto& b : v.blockers) {
        if (b.latent != VariableId{2, 2}) continue;
        z22 = true;
        ASSERT_TRUE(b.atoms.has_value());
        // Both parents take values from the presence interval [1, 3].
        for (const auto& atom : *b.atoms) {
            EXPECT_GE(atom.lo, 1.0);
            EXPECT_LE(atom.hi, 3.0);
        }
    }
    EXPECT_TRUE(z22);
    EXPECT_NE(verdict_report(m, a).find("blocker z2.2"), std::string::npos);
}

TEST(Composability, SeparateConceptSpaces) {
    const auto train = ds("separate");
    const auto cube = std::set<DiscreteCombination>{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    EXPECT_EQ(analyze_composability(fixture("two_root_singleton"), train).composable_set(), cube);
    EXPECT_EQ(analyze_composability(fixture("two_root_joint"), train).composable_set(), train);
    EXPECT_EQ(analyze_composability(fixture("two_root_joint"), ds("full")).composable_set(), cube);
}

TEST(Composability, CartesianProduct) {
    EXPECT_EQ(cartesian_product(ds("disjoint")).size(), 4u);
    EXPECT_EQ(cartesian_product({{0, 2}, {1, 0}}),
              (std::vector<DiscreteCombination>{{0, 0}, {0, 2}, {1, 0}, {1, 2}}));
    EXPECT_THROW(cartesian_product({}), InvalidArgument);
}

TEST(Composability, Errors) {
    const auto m = fixture("two_root_singleton");
    const auto a = analyze_composability(m, ds("separate"));
    EXPECT_THROW(check_composability(m, {}, {1, 1}, a.table), InvalidArgument);
    const SupportTable empty;
    EXPECT_THROW(check_composability(m, ds("separate"), {1, 1}, empty), MissingSupportEntry);
    SupportOptions exact;
    exact.mode = SupportMode::kExact;
    EXPECT_THROW(build_support_table(fixture("fourlevel"), {{1, 1}}, exact), UnsupportedFamily);
}

TEST(Composability, EmpiricalSupportsOnContinuousModel) {
    const auto m = fixture("fourlevel");
    SupportOptions opt;
    opt.seed = 3;
    const auto a = analyze_composability(m, ds("disjoint"), std::vector<DiscreteCombination>{{1, 1}, {1, 0}}, opt);
    EXPECT_FALSE(a.verdicts[0].composable);
    EXPECT_TRUE(a.verdicts[1].composable);
    EXPECT_TRUE(std::any_of(a.verdicts[0].blockers.begin(), a.verdicts[0].blockers.end(),
                            [](const Blocker& b) { return b.latent == VariableId{2, 2}; }));
    const auto& entry = a.table.at(m.parents({2, 2}), {1, 0});
    EXPECT_EQ(entry.provenance, SupportProvenance::kEmpirical);
    EXPECT_EQ(entry.n, 4000u);
}

TEST(Composability, ExactEntriesDominate) {
    SupportTable t;
    SupportEntry exact;
    exact.provenance = SupportProvenance::kExact;
    exact.cells = {{1}};
    SupportEntry emp;
    emp.cells = {{2}};
    t.insert({{1, 1}}, {1}, exact);
    t.insert({{1, 1}}, {1}, emp);
    EXPECT_EQ(t.at({{1, 1}}, {1}).cells, (std::set<Cell>{{1}}));
}

TEST(Composability, RetryResamplesBeforeBlocking) {
    // 20-row references leave cells of [1, 3] empty; the 80-row retry fills all 16.
    const auto m = fixture("two_root_singleton");
    QuantizationGrid grid;
    grid.cells = 16;
    grid.ranges[{1, 1}] = {1.0, 3.0};
    grid.ranges[{1, 2}] = {1.0, 3.0};
    SupportTable table(grid);
    auto add = [&](const DiscreteCombination& d, std::size_t n) {
        const auto batch = sample(m, d, n, 6);
        for (const auto& [z, pa] : parent_sets(m)) {
            table.insert(pa, d, z.level == 1 ? exact_entry_for_concepts(pa, d, grid) : empirical_entry(batch, pa, grid));
        }
    };
    add({1, 0}, 20);
    add({0, 1}, 20);
    add({1, 1}, 4000);
    const auto without = check_composability(m, ds("disjoint"), {1, 1}, table, false);
    EXPECT_FALSE(without.composable);
    const auto with = check_composability(m, ds("disjoint"), {1, 1}, table, true);
    EXPECT_TRUE(with.composable);
}

TEST(Composability, SparsitySweepCounts) {
    const std::vector<std::pair<std::string, HierModel>> family{{"k1", fixture("two_root_singleton")},
                                                                {"k2", fixture("two_root_joint")}};
    const auto report = sparsity_sweep(family, ds("separate"));
    EXPECT_EQ(report.rows[0].composable.size(), 4u);
    EXPECT_EQ(report.rows[1].composable.size(), 3u);
    EXPECT_EQ(report.rows[0].max_parents, 1u);
    EXPECT_EQ(report.rows[1].max_parents, 2u);
    EXPECT_TRUE(report.violations.empty()) << report.to_text();

    const auto same = sparsity_sweep({{"a", fixture("two_root_joint")}, {"b", fixture("two_root_joint")}}, ds("separate"));
    EXPECT_EQ(same.rows[0].composable, same.rows[1].composable);

    EXPECT_THROW(sparsity_sweep({{"a", fixture("two_root_joint")}, {"b", fixture("fourlevel_table")}}, ds("separate")),
                 InvalidArgument);
}

// Property tests over generated enumerable models.

TEST(ComposabilityProperty, CertifiedImpliesSwapOracleMatch) {
    int certified_unseen = 0;
    int oracle_caught = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto m = testkit::random_piecewise_model(seed);
        RngStream rng(seed, 77);
        const auto cube = binary_cube(m.num_concepts());
        const auto train = random_train(cube, rng);
        const auto a = analyze_composability(m, train, cube);
        const testkit::SwapOracle oracle(m, train);
        for (const auto& v : a.verdicts) {
            const double diff =
                testkit::SwapOracle::max_difference(oracle.distribution(v.d, false), oracle.distribution(v.d, true));
            if (v.composable) {
                EXPECT_LT(diff, 1e-12) << "seed " << seed << " d " << to_string(v.d);
                if (!train.contains(v.d)) ++certified_unseen;
            } else if (diff > 1e-12) {
                ++oracle_caught;
            }
        }
    }
    // Both branches are exercised.
    EXPECT_GT(certified_unseen, 0);
    EXPECT_GT(oracle_caught, 0);
}

TEST(ComposabilityProperty, WitnessesRecheckAndAreSmallest) {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto m = testkit::random_piecewise_model(seed);
        RngStream rng(seed, 78);
        const auto cube = binary_cube(m.num_concepts());
        const auto train = random_train(cube, rng);
        const auto a = analyze_composability(m, train, cube);
        for (const auto& v : a.verdicts) {
            EXPECT_EQ(v.composable, v.blockers.empty());
            if (v.composable) {
                EXPECT_EQ(v.witness.size(), m.latents().size());
            }
            for (const auto& [z, w] : v.witness) {
                const auto pa = m.parents(z);
                EXPECT_TRUE(uncovered(a.table.at(pa, v.d), a.table.at(pa, w), pa, a.table.grid()).empty());
                for (const auto& dt : train) {
                    if (dt >= w) break;
                    EXPECT_FALSE(uncovered(a.table.at(pa, v.d), a.table.at(pa, dt), pa, a.table.grid()).empty());
                }
            }
        }
    }
}

TEST(ComposabilityProperty, MonotoneInTrainingSupport) {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto m = testkit::random_piecewise_model(seed);
        RngStream rng(seed, 79);
        const auto cube = binary_cube(m.num_concepts());
        auto train = random_train(cube, rng);
        auto larger = train;
        larger.insert(cube[rng.below(cube.size())]);
        const auto small_set = analyze_composability(m, train, cube).composable_set();
        const auto large_set = analyze_composability(m, larger, cube).composable_set();
        EXPECT_TRUE(std::includes(large_set.begin(), large_set.end(), small_set.begin(), small_set.end()))
            << "seed " << seed;
    }
}

TEST(ComposabilityProperty, MonotoneInEdges) {
    int compared = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto m = testkit::random_piecewise_model(seed);
        RngStream rng(seed, 80);
        VariableId u;
        VariableId z;
        if (!testkit::random_missing_edge(m, rng, u, z)) continue;
        const double split = u.level == 1 ? 1.0 + 2.0 * rng.uniform() : 0.5 + static_cast<double>(rng.below(3));
        const auto denser = testkit::add_refining_edge(m, u, z, split);
        ASSERT_TRUE(validate(denser).ok()) << validate(denser).to_text();
        const auto cube = binary_cube(m.num_concepts());
        const auto train = random_train(cube, rng);
        const auto report = sparsity_sweep({{"sparse", m}, {"dense", denser}}, train);
        EXPECT_TRUE(report.violations.empty()) << "seed " << seed << "\n" << report.to_text();
        ++compared;
    }
    EXPECT_GT(compared, 5);
}
