#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <string>

#include "hiercomp/model_io.hpp"
#include "hiercomp/structure.hpp"

using namespace hiercomp;

namespace {

HierModel fixture(const std::string& name) {
    return load_model_file(std::string(HIERCOMP_DATA_DIR) + "/models/" + name + ".json").model;
}

std::vector<DiscreteCombination> all_binary(int n) {
    std::vector<DiscreteCombination> out;
    for (int mask = 0; mask < (1 << n); ++mask) {
        std::vector<int> v;
        for (int i = n - 1; i >= 0; --i) v.push_back((mask >> i) & 1);
        out.emplace_back(std::move(v));
    }
    return out;
}

std::set<Edge> relabel(const std::set<Edge>& edges, const std::vector<std::vector<int>>& perm) {
    std::set<Edge> out;
    for (const auto& e : edges) {
        out.insert(Edge{{e.parent.level, perm[static_cast<std::size_t>(e.parent.level - 1)][static_cast<std::size_t>(e.parent.index - 1)] + 1},
                    {e.child.level, perm[static_cast<std::size_t>(e.child.level - 1)][static_cast<std::size_t>(e.child.index - 1)] + 1}});
    }
    return out;
}

std::vector<int> shuffled(int n, RngStream& rng) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t k = p.size(); k > 1; --k) std::swap(p[k - 1], p[rng.below(k)]);
    return p;
}

std::set<Edge> random_graph(const std::vector<int>& widths, double density, RngStream& rng) {
    std::set<Edge> out;
    for (std::size_t l = 1; l < widths.size(); ++l) {
        for (int i = 1; i <= widths[l - 1]; ++i) {
            for (int j = 1; j <= widths[l]; ++j) {
                if (rng.uniform() < density) out.insert(Edge{{static_cast<int>(l), i}, {static_cast<int>(l) + 1, j}});
            }
        }
    }
    return out;
}

// Population covariance of the latents of a linear-gaussian model, pooled over
// equally weighted concept combinations. Written independently of the sampler.
Eigen::MatrixXd population_covariance(const HierModel& m, const std::vector<DiscreteCombination>& combos) {
    const auto latents = m.latents();
    const auto n = static_cast<Eigen::Index>(latents.size());
    std::map<VariableId, Eigen::Index> pos;
    for (Eigen::Index k = 0; k < n; ++k) pos[latents[static_cast<std::size_t>(k)]] = k;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd noise = Eigen::VectorXd::Zero(n);
    for (const auto& z : latents) {
        if (z.level == 1) {
            double mean = 0.0;
            double second = 0.0;
            for (const auto& d : combos) {
                const auto& s = m.root(z.index)->by_value[static_cast<std::size_t>(d[static_cast<std::size_t>(z.index - 1)])];
                if (s.is_degenerate()) {
                    mean += s.constant;
                    second += s.constant * s.constant;
                } else {
                    mean += 0.5 * (s.lo + s.hi);
                    second += (s.lo * s.lo + s.lo * s.hi + s.hi * s.hi) / 3.0;
                }
            }
            mean /= static_cast<double>(combos.size());
            second /= static_cast<double>(combos.size());
            noise[pos[z]] = second - mean * mean;
            continue;
        }
        const auto& spec = m.mechanism_or_throw(z);
        const auto pa = m.parents(z);
        for (std::size_t k = 0; k < pa.size(); ++k) a(pos[z], pos[pa[k]]) = spec.coefficients[k + 1];
        noise[pos[z]] = spec.noise_scale * spec.noise_scale;
    }
    const Eigen::MatrixXd b = (Eigen::MatrixXd::Identity(n, n) - a).inverse();
    return b * noise.asDiagonal() * b.transpose();
}

double partial_corr(const Eigen::MatrixXd& cov, const std::vector<Eigen::Index>& ids) {
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < ids.size(); ++j) sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov(ids[i], ids[j]);
    }
    const Eigen::MatrixXd p = sub.inverse();
    return -p(0, 1) / std::sqrt(p(0, 0) * p(1, 1));
}

}  // namespace

TEST(Subsets, LexicographicOrder) {
    const std::vector<VariableId> pool{{1, 1}, {1, 2}, {1, 3}};
    EXPECT_EQ(detail::subsets_of_size(pool, 0).size(), 1u);
    const auto two = detail::subsets_of_size(pool, 2);
    ASSERT_EQ(two.size(), 3u);
    EXPECT_EQ(two[0], (std::vector<VariableId>{{1, 1}, {1, 2}}));
    EXPECT_EQ(two[2], (std::vector<VariableId>{{1, 2}, {1, 3}}));
    EXPECT_TRUE(detail::subsets_of_size(pool, 4).empty());
}

TEST(Recover, ChainExact) {
    const auto m = fixture("chain");
    const auto batch = sample_pooled(m, {{0}, {1}}, 5000, 1);
    const auto g = recover_structure(batch, latent_widths(m));
    EXPECT_EQ(g.edges, (std::set<Edge>{{{1, 1}, {2, 1}}}));
    EXPECT_TRUE(score_graph(g, m).exact_match);
    EXPECT_EQ(g.log.size(), 1u);
}

TEST(Recover, IndependentRootsHaveNoCrossEdges) {
    std::map<VariableId, MechanismSpec> mech;
    mech[{2, 1}] = {MechanismFamily::kLinearGaussian, {0.0, 1.0}, {}, NoiseFamily::kGaussian, 0.5};
    mech[{2, 2}] = {MechanismFamily::kLinearGaussian, {0.0, -1.0}, {}, NoiseFamily::kGaussian, 0.5};
    mech[{3, 1}] = {MechanismFamily::kLinearGaussian, {0.0, 1.0, 0.0, 1.0}, {}, NoiseFamily::kGaussian, 0.5};
    std::map<int, RootConditionalSpec> roots;
    roots[1] = {{RootValueSpec::degenerate(0.0), RootValueSpec::interval(-1.0, 1.0)}};
    roots[2] = roots[1];
    const HierModel m({2, 2, 2, 2},
                      {{{0, 1}, {1, 1}}, {{0, 2}, {1, 2}}, {{1, 1}, {2, 1}}, {{1, 2}, {2, 2}}, {{2, 1}, {3, 1}}, {{2, 2}, {3, 1}}},
                      mech, roots);
    ASSERT_TRUE(validate(m).ok()) << validate(m).to_text();
    RecoveryOptions opt;
    opt.bonferroni = true;
    const auto g = recover_structure(sample_pooled(m, all_binary(2), 5000, 2), latent_widths(m), opt);
    EXPECT_FALSE(g.edges.contains({{1, 1}, {2, 2}}));
    EXPECT_FALSE(g.edges.contains({{1, 2}, {2, 1}}));
    EXPECT_TRUE(score_graph(g, m).exact_match);
}

TEST(Recover, FourLevelSingleSeed) {
    const auto m = fixture("fourlevel");
    RecoveryOptions opt;
    opt.bonferroni = true;
    const auto g = recover_structure(sample_pooled(m, all_binary(2), 12500, 7), latent_widths(m), opt);
    const auto s = score_graph(g, m);
    EXPECT_TRUE(s.exact_match) << to_text(s);
    EXPECT_TRUE(s.exhaustive);
    for (const auto& e : g.edges) EXPECT_EQ(e.child.level, e.parent.level + 1);
}

TEST(Recover, FixtureIsFaithfulWithMargin) {
    // Every true edge keeps |partial correlation| >= 0.1 under every conditioning set the
    // search may try, and every non-edge vanishes given the child's other parents.
    const auto m = fixture("fourlevel");
    const auto combos = all_binary(2);
    const auto cov = population_covariance(m, combos);
    const auto latents = m.latents();
    auto pos = [&](VariableId v) {
        return static_cast<Eigen::Index>(std::find(latents.begin(), latents.end(), v) - latents.begin());
    };
    double weakest = 1.0;
    for (int l = 1; l < m.num_levels(); ++l) {
        const auto level = m.level(l);
        const std::size_t cap = std::min<std::size_t>(level.size() - 1, 3);
        for (const auto& u : level) {
            std::vector<VariableId> others;
            for (const auto& w : level) {
                if (w != u) others.push_back(w);
            }
            for (const auto& v : m.level(l + 1)) {
                const auto pa = m.parents(v);
                const bool edge = std::find(pa.begin(), pa.end(), u) != pa.end();
                for (std::size_t k = 0; k <= cap; ++k) {
                    for (const auto& c : detail::subsets_of_size(others, k)) {
                        std::vector<Eigen::Index> ids{pos(u), pos(v)};
                        for (const auto& w : c) ids.push_back(pos(w));
                        const double r = partial_corr(cov, ids);
                        if (edge) weakest = std::min(weakest, std::abs(r));
                        const bool covers = std::all_of(pa.begin(), pa.end(), [&](VariableId p) {
                            return p == u || std::find(c.begin(), c.end(), p) != c.end();
                        });
                        if (!edge && covers) {
                            EXPECT_NEAR(r, 0.0, 1e-12);
                        }
                    }
                }
            }
        }
    }
    EXPECT_GE(weakest, 0.1);
}

TEST(Recover, Errors) {
    const auto m = fixture("chain");
    EXPECT_THROW(recover_structure(sample(m, {1}, 999, 0), latent_widths(m)), InsufficientSamples);
    RecoveredGraph g;
    g.widths = {1, 2};
    EXPECT_THROW(score_graph(g, m), InvalidArgument);
}

TEST(Score, IdentityAndSwap) {
    const auto m = fixture("fourlevel");
    const auto truth = latent_edges(m);
    EXPECT_EQ(truth.size(), 16u);
    const auto widths = latent_widths(m);
    const auto same = score_edges(widths, truth, truth);
    EXPECT_TRUE(same.exact_match);
    EXPECT_EQ(same.precision, 1.0);
    EXPECT_EQ(same.recall, 1.0);

    std::vector<std::vector<int>> swap{{0, 1}, {1, 0, 2, 3}, {0, 1, 2, 3, 4, 5}};
    const auto swapped = score_edges(widths, relabel(truth, swap), truth);
    EXPECT_TRUE(swapped.exact_match);
    EXPECT_EQ(swapped.permutations[1], (std::vector<int>{1, 0, 2, 3}));
}

TEST(Score, MissingOneEdge) {
    const auto m = fixture("fourlevel");
    auto rec = latent_edges(m);
    rec.erase(rec.begin());
    const auto s = score_edges(latent_widths(m), rec, latent_edges(m));
    EXPECT_FALSE(s.exact_match);
    EXPECT_DOUBLE_EQ(s.recall, 15.0 / 16.0);
    EXPECT_DOUBLE_EQ(s.precision, 1.0);
}

TEST(Score, SymmetricExactMatch) {
    RngStream rng(11, 3);
    for (int k = 0; k < 60; ++k) {
        const std::vector<int> widths{2, 3, 4};
        const auto a = random_graph(widths, 0.5, rng);
        std::set<Edge> b;
        if (k % 2 == 0) {
            b = relabel(a, {shuffled(2, rng), shuffled(3, rng), shuffled(4, rng)});
        } else {
            b = random_graph(widths, 0.5, rng);
        }
        EXPECT_EQ(score_edges(widths, a, b).exact_match, score_edges(widths, b, a).exact_match) << k;
        if (k % 2 == 0) {
            EXPECT_TRUE(score_edges(widths, a, b).exact_match);
        }
    }
}

TEST(Score, AssignmentHeuristicOnWideLevels) {
    RngStream rng(12, 4);
    int exact = 0;
    for (int k = 0; k < 10; ++k) {
        const std::vector<int> widths{10, 10};
        const auto truth = random_graph(widths, 0.3, rng);
        const auto rec = relabel(truth, {shuffled(10, rng), shuffled(10, rng)});
        const auto s = score_edges(widths, rec, truth);
        EXPECT_FALSE(s.exhaustive);
        exact += s.exact_match ? 1 : 0;
        // The search never scores below the identity labelling.
        std::vector<std::vector<int>> id(2, std::vector<int>(10));
        std::iota(id[0].begin(), id[0].end(), 0);
        std::iota(id[1].begin(), id[1].end(), 0);
        EXPECT_GE(s.true_positives, detail::matched_edges(rec, truth, id));
    }
    EXPECT_GE(exact, 8);
}

TEST(Export, EdgeSyntax) {
    RecoveredGraph g;
    g.widths = {1, 1};
    g.edges = {{{1, 1}, {2, 1}}};
    const auto doc = nlohmann::json::parse(graph_to_json(g));
    EXPECT_EQ(doc["edges"][0][0], "z1.1");
    EXPECT_EQ(doc["edges"][0][1], "z2.1");
}
