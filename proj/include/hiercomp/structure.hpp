#pragma once

// Level-stratified skeleton search and permutation-invariant graph scoring.
//
// Orientation follows the level order, so only the adjacency phase of PC is needed:
// u (level l) and v (level l+1) are disconnected iff u _|_ v | C for some C drawn
// from the other level-l variables.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hiercomp/assignment.hpp"
#include "hiercomp/errors.hpp"
#include "hiercomp/identifiability.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/sampler.hpp"
#include "hiercomp/stats.hpp"

namespace hiercomp {

struct TestRecord {
    VariableId u;
    VariableId v;
    std::vector<VariableId> conditioning;
    double statistic = 0.0;
    double p_value = 0.0;
    bool independent = false;
};

struct RecoveredGraph {
    std::vector<int> widths;  // latent levels 1..L
    std::set<Edge> edges;
    std::vector<TestRecord> log;
};

struct RecoveryOptions {
    CiTest test = CiTest::kPartialCorrelation;
    double alpha = 0.01;
    int max_conditioning = -1;  // negative: min(width - 1, 3)
    bool bonferroni = false;
    std::size_t min_rows = 1000;
    BinnedMiOptions mi;
};

namespace detail {

/// Subsets of `pool` of the given size, in lexicographic index order.
inline std::vector<std::vector<VariableId>> subsets_of_size(const std::vector<VariableId>& pool, std::size_t k) {
    std::vector<std::vector<VariableId>> out;
    if (k > pool.size()) return out;
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    while (true) {
        std::vector<VariableId> s;
        for (auto i : idx) s.push_back(pool[i]);
        out.push_back(std::move(s));
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == pool.size() - k + (i - 1)) --i;
        if (i == 0) break;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

}  // namespace detail

/// Skeleton search over adjacent latent levels of a pooled batch.
/// `widths` lists n(z_1)..n(z_L).
inline RecoveredGraph recover_structure(const SampleBatch& batch, const std::vector<int>& widths,
                                        const RecoveryOptions& options = {}) {
    if (static_cast<std::size_t>(batch.rows()) < options.min_rows) {
        throw InsufficientSamples("structure recovery needs at least " + std::to_string(options.min_rows) +
                                  " rows, got " + std::to_string(batch.rows()));
    }
    RecoveredGraph g;
    g.widths = widths;
    const int num_levels = static_cast<int>(widths.size());
    std::size_t pairs = 0;
    for (int l = 1; l < num_levels; ++l) {
        pairs += static_cast<std::size_t>(widths[static_cast<std::size_t>(l - 1)] * widths[static_cast<std::size_t>(l)]);
    }
    const double alpha = options.bonferroni && pairs > 0 ? options.alpha / static_cast<double>(pairs) : options.alpha;

    for (int l = 1; l < num_levels; ++l) {
        const int wl = widths[static_cast<std::size_t>(l - 1)];
        const int cap = options.max_conditioning >= 0 ? std::min(options.max_conditioning, wl - 1) : std::min(wl - 1, 3);
        for (int i = 1; i <= wl; ++i) {
            const VariableId u{l, i};
            std::vector<VariableId> others;
            for (int k = 1; k <= wl; ++k) {
                if (k != i) others.push_back({l, k});
            }
            const Eigen::VectorXd x = batch.column(u);
            for (int j = 1; j <= widths[static_cast<std::size_t>(l)]; ++j) {
                const VariableId v{l + 1, j};
                const Eigen::VectorXd y = batch.column(v);
                bool separated = false;
                for (int size = 0; size <= cap && !separated; ++size) {
                    for (const auto& cond : detail::subsets_of_size(others, static_cast<std::size_t>(size))) {
                        const Eigen::MatrixXd z = batch.columns(cond);
                        const auto r = options.test == CiTest::kPartialCorrelation ? partial_correlation_test(x, y, z)
                                                                                   : binned_mi_test(x, y, z, options.mi);
                        const bool indep = r.p_value > alpha;
                        g.log.push_back({u, v, cond, r.statistic, r.p_value, indep});
                        if (indep) {
                            separated = true;
                            break;
                        }
                    }
                }
                if (!separated) g.edges.insert({u, v});
            }
        }
    }
    return g;
}

/// Latent-latent edges of a model.
inline std::set<Edge> latent_edges(const HierModel& model) {
    std::set<Edge> out;
    for (const auto& e : model.edges()) {
        if (e.parent.level >= 1 && e.child.level <= model.num_levels()) out.insert(e);
    }
    return out;
}

inline std::vector<int> latent_widths(const HierModel& model) {
    std::vector<int> out;
    for (int l = 1; l <= model.num_levels(); ++l) out.push_back(model.width(l));
    return out;
}

struct GraphScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool exact_match = false;
    std::size_t true_positives = 0;
    std::size_t recovered_edges = 0;
    std::size_t truth_edges = 0;
    std::vector<std::vector<int>> permutations;  // per latent level: recovered index -> truth index (0-based)
    bool exhaustive = false;
};

namespace detail {

inline std::size_t matched_edges(const std::set<Edge>& recovered, const std::set<Edge>& truth,
                                 const std::vector<std::vector<int>>& perm) {
    std::size_t tp = 0;
    for (const auto& e : recovered) {
        const Edge mapped{{e.parent.level, perm[static_cast<std::size_t>(e.parent.level - 1)][static_cast<std::size_t>(e.parent.index - 1)] + 1},
                          {e.child.level, perm[static_cast<std::size_t>(e.child.level - 1)][static_cast<std::size_t>(e.child.index - 1)] + 1}};
        if (truth.contains(mapped)) ++tp;
    }
    return tp;
}

// Colour refinement run on both graphs with a shared palette, so equal colours mean
// equal neighbourhood structure up to `rounds` hops.
inline std::vector<std::vector<std::vector<int>>> refine_colours(const std::vector<int>& widths,
                                                                 const std::set<Edge>& a, const std::set<Edge>& b,
                                                                 int rounds = 6) {
    const std::array<const std::set<Edge>*, 2> graphs{&a, &b};
    std::vector<std::vector<std::vector<int>>> colour(2);
    for (auto& c : colour) {
        c.resize(widths.size());
        for (std::size_t l = 0; l < widths.size(); ++l) c[l].assign(static_cast<std::size_t>(widths[l]), static_cast<int>(l));
    }
    for (int r = 0; r < rounds; ++r) {
        std::map<std::vector<int>, int> palette;
        std::vector<std::vector<std::vector<int>>> next = colour;
        for (std::size_t g = 0; g < 2; ++g) {
            std::vector<std::vector<std::vector<int>>> up(widths.size()), down(widths.size());
            for (std::size_t l = 0; l < widths.size(); ++l) {
                up[l].resize(static_cast<std::size_t>(widths[l]));
                down[l].resize(static_cast<std::size_t>(widths[l]));
            }
            for (const auto& e : *graphs[g]) {
                const auto pl = static_cast<std::size_t>(e.parent.level - 1);
                const auto cl = static_cast<std::size_t>(e.child.level - 1);
                const auto pi = static_cast<std::size_t>(e.parent.index - 1);
                const auto ci = static_cast<std::size_t>(e.child.index - 1);
                down[pl][pi].push_back(colour[g][cl][ci]);
                up[cl][ci].push_back(colour[g][pl][pi]);
            }
            for (std::size_t l = 0; l < widths.size(); ++l) {
                for (std::size_t i = 0; i < up[l].size(); ++i) {
                    std::sort(up[l][i].begin(), up[l][i].end());
                    std::sort(down[l][i].begin(), down[l][i].end());
                    std::vector<int> key{colour[g][l][i], -1};
                    key.insert(key.end(), up[l][i].begin(), up[l][i].end());
                    key.push_back(-2);
                    key.insert(key.end(), down[l][i].begin(), down[l][i].end());
                    next[g][l][i] = palette.try_emplace(key, static_cast<int>(palette.size())).first->second;
                }
            }
        }
        colour = std::move(next);
    }
    return colour;
}

}  // namespace detail

/// Best per-level relabelling of `recovered` against `truth` (edges among latent levels 1..L).
inline GraphScore score_edges(const std::vector<int>& widths, const std::set<Edge>& recovered,
                              const std::set<Edge>& truth) {
    const std::size_t num_levels = widths.size();
    for (const auto* set : {&recovered, &truth}) {
        for (const auto& e : *set) {
            if (e.parent.level < 1 || e.child.level > static_cast<int>(num_levels) || e.child.level != e.parent.level + 1 ||
                e.parent.index > widths[static_cast<std::size_t>(e.parent.level - 1)] ||
                e.child.index > widths[static_cast<std::size_t>(e.child.level - 1)]) {
                throw InvalidArgument("edge outside the declared latent widths");
            }
        }
    }
    std::vector<std::vector<int>> perm(num_levels);
    double space = 1.0;
    for (std::size_t l = 0; l < num_levels; ++l) {
        perm[l].resize(static_cast<std::size_t>(widths[l]));
        std::iota(perm[l].begin(), perm[l].end(), 0);
        for (int k = 2; k <= widths[l]; ++k) space *= k;
    }
    GraphScore s;
    std::vector<std::vector<int>> best = perm;
    std::size_t best_tp = detail::matched_edges(recovered, truth, perm);

    if (space <= 2e6) {
        s.exhaustive = true;
        // Odometer over the per-level permutations.
        while (true) {
            const std::size_t tp = detail::matched_edges(recovered, truth, perm);
            if (tp > best_tp) {
                best_tp = tp;
                best = perm;
            }
            std::size_t l = 0;
            while (l < num_levels && !std::next_permutation(perm[l].begin(), perm[l].end())) ++l;
            if (l == num_levels) break;
        }
    } else {
        // Seed from colour-refined signatures, then coordinate ascent: each level's
        // relabelling is a linear assignment given its neighbours.
        const auto colour = detail::refine_colours(widths, recovered, truth);
        for (std::size_t l = 0; l < num_levels; ++l) {
            const int w = widths[l];
            Eigen::MatrixXd same(w, w);
            for (int a = 0; a < w; ++a) {
                for (int t = 0; t < w; ++t) same(a, t) = colour[0][l][static_cast<std::size_t>(a)] == colour[1][l][static_cast<std::size_t>(t)] ? 1.0 : 0.0;
            }
            perm[l] = max_score_assignment(same);
        }
        if (const std::size_t tp = detail::matched_edges(recovered, truth, perm); tp >= best_tp) {
            best_tp = tp;
        } else {
            perm = best;
        }
        bool improved = true;
        while (improved) {
            improved = false;
            for (std::size_t l = 0; l < num_levels; ++l) {
                const int w = widths[l];
                Eigen::MatrixXd gain = Eigen::MatrixXd::Zero(w, w);
                for (int a = 0; a < w; ++a) {
                    for (int t = 0; t < w; ++t) {
                        auto trial = perm;
                        trial[l][static_cast<std::size_t>(a)] = t;
                        for (const auto& e : recovered) {
                            const bool touches = (static_cast<std::size_t>(e.parent.level - 1) == l && e.parent.index - 1 == a) ||
                                                 (static_cast<std::size_t>(e.child.level - 1) == l && e.child.index - 1 == a);
                            if (!touches) continue;
                            const Edge mapped{{e.parent.level, trial[static_cast<std::size_t>(e.parent.level - 1)][static_cast<std::size_t>(e.parent.index - 1)] + 1},
                                              {e.child.level, trial[static_cast<std::size_t>(e.child.level - 1)][static_cast<std::size_t>(e.child.index - 1)] + 1}};
                            if (truth.contains(mapped)) gain(a, t) += 1.0;
                        }
                    }
                }
                const auto assign = max_score_assignment(gain);
                auto trial = perm;
                trial[l] = assign;
                const std::size_t tp = detail::matched_edges(recovered, truth, trial);
                if (tp > best_tp) {
                    best_tp = tp;
                    perm = trial;
                    improved = true;
                }
            }
        }
        best = perm;
    }
    s.permutations = best;
    s.true_positives = best_tp;
    s.recovered_edges = recovered.size();
    s.truth_edges = truth.size();
    s.precision = recovered.empty() ? (truth.empty() ? 1.0 : 0.0) : static_cast<double>(best_tp) / recovered.size();
    s.recall = truth.empty() ? 1.0 : static_cast<double>(best_tp) / truth.size();
    s.f1 = recovered.size() + truth.size() == 0 ? 1.0 : 2.0 * best_tp / static_cast<double>(recovered.size() + truth.size());
    s.exact_match = best_tp == recovered.size() && best_tp == truth.size();
    return s;
}

inline GraphScore score_graph(const RecoveredGraph& recovered, const HierModel& truth) {
    if (recovered.widths != latent_widths(truth)) throw InvalidArgument("width mismatch between recovered graph and truth");
    return score_edges(recovered.widths, recovered.edges, latent_edges(truth));
}

/// Edge list in the model-spec syntax.
inline std::string graph_to_json(const RecoveredGraph& g) {
    const int num_levels = static_cast<int>(g.widths.size());
    nlohmann::ordered_json doc;
    doc["widths"] = g.widths;
    nlohmann::ordered_json edges = nlohmann::ordered_json::array();
    for (const auto& e : g.edges) {
        edges.push_back({variable_name(e.parent, num_levels), variable_name(e.child, num_levels)});
    }
    doc["edges"] = edges;
    return doc.dump(2) + "\n";
}

inline std::string to_text(const RecoveredGraph& g) {
    const int num_levels = static_cast<int>(g.widths.size());
    std::ostringstream out;
    out.precision(10);
    out << "recovered edges: " << g.edges.size() << "\n";
    for (const auto& e : g.edges) {
        out << "  " << variable_name(e.parent, num_levels) << " -> " << variable_name(e.child, num_levels) << "\n";
    }
    out << "tests: " << g.log.size() << "\n";
    for (const auto& t : g.log) {
        out << "  " << variable_name(t.u, num_levels) << " _|_ " << variable_name(t.v, num_levels) << " | {";
        for (std::size_t k = 0; k < t.conditioning.size(); ++k) {
            out << (k ? "," : "") << variable_name(t.conditioning[k], num_levels);
        }
        out << "} stat " << t.statistic << " p " << t.p_value << (t.independent ? " independent" : " dependent") << "\n";
    }
    return out.str();
}

inline std::string to_text(const GraphScore& s) {
    std::ostringstream out;
    out.precision(10);
    out << "precision " << s.precision << " recall " << s.recall << " f1 " << s.f1 << " exact_match "
        << (s.exact_match ? "true" : "false") << " (" << s.true_positives << " matched of " << s.recovered_edges
        << " recovered, " << s.truth_edges << " true)\n";
    for (std::size_t l = 0; l < s.permutations.size(); ++l) {
        out << "  level " << l + 1 << " permutation";
        for (std::size_t i = 0; i < s.permutations[l].size(); ++i) out << " " << i + 1 << "->" << s.permutations[l][i] + 1;
        out << "\n";
    }
    return out.str();
}

}  // namespace hiercomp
