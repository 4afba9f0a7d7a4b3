#pragma once

// Random model generators for property tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "hiercomp/model.hpp"
#include "hiercomp/rng.hpp"

namespace hiercomp::testkit {

inline std::vector<VariableId> random_parent_subset(RngStream& rng, int level, int width, std::size_t max_size) {
    std::vector<VariableId> pool;
    for (int i = 1; i <= width; ++i) pool.push_back({level, i});
    for (std::size_t k = pool.size(); k > 1; --k) std::swap(pool[k - 1], pool[rng.below(k)]);
    const std::size_t size = 1 + rng.below(std::min(max_size, pool.size()));
    pool.resize(size);
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline MechanismSpec observation_block(RngStream& rng, std::size_t parents, double noise_scale) {
    MechanismSpec x;
    x.family = MechanismFamily::kLinearGaussian;
    for (std::size_t k = 0; k < parents; ++k) {
        x.coefficients.push_back(std::round(4.0 * rng.uniform() - 2.0));
        x.coefficients.push_back(rng.uniform() < 0.5 ? -1.0 - rng.uniform() : 1.0 + rng.uniform());
    }
    x.noise_scale = noise_scale;
    return x;
}

/// Any family, any noise: for load/save and validation round trips.
inline HierModel random_model(std::uint64_t seed) {
    RngStream rng(seed, 11);
    const int levels = 1 + static_cast<int>(rng.below(3));
    std::vector<int> widths{1 + static_cast<int>(rng.below(3))};
    widths.push_back(widths[0]);
    for (int l = 2; l <= levels; ++l) widths.push_back(1 + static_cast<int>(rng.below(4)));
    std::vector<Edge> edges;
    std::map<VariableId, MechanismSpec> mech;
    std::map<int, RootConditionalSpec> roots;
    for (int i = 1; i <= widths[0]; ++i) {
        edges.push_back({{0, i}, {1, i}});
        RootConditionalSpec r;
        r.by_value.push_back(RootValueSpec::degenerate(std::round(10.0 * rng.uniform()) / 4.0 - 1.0));
        const double lo = rng.uniform() * 2.0 - 1.0;
        const double hi = lo + 0.5 + rng.uniform();
        const int card = 2 + static_cast<int>(rng.below(2));
        for (int c = 1; c < card; ++c) r.by_value.push_back(RootValueSpec::interval(lo, hi));
        roots[i] = r;
    }
    for (int l = 2; l <= levels; ++l) {
        for (int i = 1; i <= widths[static_cast<std::size_t>(l)]; ++i) {
            const auto pa = random_parent_subset(rng, l - 1, widths[static_cast<std::size_t>(l - 1)], 3);
            for (const auto& p : pa) edges.push_back({p, {l, i}});
            MechanismSpec m;
            const auto k = pa.size();
            switch (rng.below(4)) {
                case 0: m.family = MechanismFamily::kLinearGaussian; break;
                case 1: m.family = MechanismFamily::kAffineTanh; break;
                case 2: m.family = MechanismFamily::kLocationScaleGaussian; break;
                default: m.family = MechanismFamily::kPiecewiseTable; break;
            }
            if (m.family == MechanismFamily::kPiecewiseTable) {
                std::size_t cells = 1;
                for (std::size_t j = 0; j < k; ++j) {
                    m.breaks.push_back({rng.uniform() - 0.5});
                    cells *= 2;
                }
                for (std::size_t c = 0; c < cells; ++c) m.coefficients.push_back(rng.gaussian());
                m.noise_scale = rng.uniform() < 0.5 ? 0.0 : 0.3;
            } else {
                const long arity = expected_arity(m.family, k, false);
                for (long c = 0; c < arity; ++c) m.coefficients.push_back(0.5 * rng.gaussian());
                m.noise_scale = 0.2 + rng.uniform();
            }
            m.noise = m.family == MechanismFamily::kLocationScaleGaussian || rng.uniform() < 0.5 ? NoiseFamily::kGaussian
                                                                                                 : NoiseFamily::kUniform;
            mech[{l, i}] = m;
        }
    }
    const VariableId x{levels + 1, 1};
    const int top = widths[static_cast<std::size_t>(levels)];
    for (int i = 1; i <= top; ++i) edges.push_back({{levels, i}, x});
    mech[x] = observation_block(rng, static_cast<std::size_t>(top), 0.5);
    widths.push_back(top + static_cast<int>(rng.below(3)));
    return HierModel(widths, edges, mech, roots);
}

/// Enumerable model: binary roots, noise-free piecewise tables, L in {2, 3}, widths <= 4.
inline HierModel random_piecewise_model(std::uint64_t seed) {
    RngStream rng(seed, 12);
    const int levels = 2 + static_cast<int>(rng.below(2));
    std::vector<int> widths{2 + static_cast<int>(rng.below(2))};
    widths.push_back(widths[0]);
    for (int l = 2; l <= levels; ++l) widths.push_back(1 + static_cast<int>(rng.below(4)));
    std::vector<Edge> edges;
    std::map<VariableId, MechanismSpec> mech;
    std::map<int, RootConditionalSpec> roots;
    for (int i = 1; i <= widths[0]; ++i) {
        edges.push_back({{0, i}, {1, i}});
        RootConditionalSpec r;
        // Absence sits inside the presence interval half of the time.
        const double absent = rng.uniform() < 0.5 ? 0.0 : 2.0;
        r.by_value = {RootValueSpec::degenerate(absent), RootValueSpec::interval(1.0, 3.0)};
        roots[i] = r;
    }
    for (int l = 2; l <= levels; ++l) {
        for (int i = 1; i <= widths[static_cast<std::size_t>(l)]; ++i) {
            const auto pa = random_parent_subset(rng, l - 1, widths[static_cast<std::size_t>(l - 1)], 3);
            for (const auto& p : pa) edges.push_back({p, {l, i}});
            MechanismSpec m;
            m.family = MechanismFamily::kPiecewiseTable;
            m.noise_scale = 0.0;
            std::size_t cells = 1;
            for (const auto& p : pa) {
                std::vector<double> b;
                if (p.level == 1) {
                    b.push_back(1.0 + 2.0 * rng.uniform());
                    if (rng.uniform() < 0.3) b.push_back(std::min(2.99, b.back() + 0.5));
                } else {
                    b.push_back(0.5 + static_cast<double>(rng.below(3)));
                }
                std::sort(b.begin(), b.end());
                b.erase(std::unique(b.begin(), b.end()), b.end());
                cells *= b.size() + 1;
                m.breaks.push_back(b);
            }
            for (std::size_t c = 0; c < cells; ++c) m.coefficients.push_back(static_cast<double>(rng.below(4)));
            mech[{l, i}] = m;
        }
    }
    const VariableId x{levels + 1, 1};
    const int top = widths[static_cast<std::size_t>(levels)];
    for (int i = 1; i <= top; ++i) edges.push_back({{levels, i}, x});
    mech[x] = observation_block(rng, static_cast<std::size_t>(top), 0.5);
    widths.push_back(top + 1);
    return HierModel(widths, edges, mech, roots);
}

/// Adds the edge u -> z to an enumerable model without changing what z's children see:
/// the new z is z + K * bin(u), and every child decodes the shift back out.
inline HierModel add_refining_edge(const HierModel& model, VariableId u, VariableId z, double split) {
    constexpr double kShift = 1000.0;
    auto edges_set = model.edges();
    std::vector<Edge> edges(edges_set.begin(), edges_set.end());
    edges.push_back({u, z});
    auto mech = model.mechanisms();

    // New table for z, parents in sorted order with u inserted.
    const auto& old_pa = model.parents(z);
    std::vector<VariableId> pa = old_pa;
    pa.push_back(u);
    std::sort(pa.begin(), pa.end());
    const auto upos = static_cast<std::size_t>(std::find(pa.begin(), pa.end(), u) - pa.begin());
    const auto& old = model.mechanism_or_throw(z);
    MechanismSpec fresh = old;
    fresh.breaks = old.breaks;
    fresh.breaks.insert(fresh.breaks.begin() + static_cast<long>(upos), std::vector<double>{split});
    std::vector<std::size_t> dims;
    for (const auto& b : fresh.breaks) dims.push_back(b.size() + 1);
    std::size_t cells = 1;
    for (auto d : dims) cells *= d;
    fresh.coefficients.assign(cells, 0.0);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        std::vector<std::size_t> idx(dims.size());
        std::size_t rest = cell;
        for (std::size_t k = dims.size(); k-- > 0;) {
            idx[k] = rest % dims[k];
            rest /= dims[k];
        }
        std::size_t old_cell = 0;
        for (std::size_t k = 0; k < dims.size(); ++k) {
            if (k == upos) continue;
            const std::size_t kk = k < upos ? k : k - 1;
            old_cell = old_cell * (old.breaks[kk].size() + 1) + idx[k];
        }
        fresh.coefficients[cell] = old.coefficients[old_cell] + kShift * static_cast<double>(idx[upos]);
    }
    mech[z] = fresh;

    // Children decode z' = z + K b back to the old bins.
    for (const auto& child : model.children(z)) {
        if (child == model.observation()) continue;
        auto spec = mech.at(child);
        const auto& cpa = model.parents(child);
        const auto zpos = static_cast<std::size_t>(std::find(cpa.begin(), cpa.end(), z) - cpa.begin());
        const auto old_breaks = spec.breaks[zpos];
        std::vector<double> nb;
        for (int b = 0; b <= 1; ++b) {
            if (b > 0) nb.push_back(kShift * b - kShift / 2);
            for (double v : old_breaks) nb.push_back(v + kShift * b);
        }
        std::vector<std::size_t> dims_old;
        for (const auto& b : spec.breaks) dims_old.push_back(b.size() + 1);
        auto dims_new = dims_old;
        dims_new[zpos] = 2 * dims_old[zpos];
        std::size_t total = 1;
        for (auto d : dims_new) total *= d;
        std::vector<double> table(total);
        for (std::size_t cell = 0; cell < total; ++cell) {
            std::size_t rest = cell;
            std::vector<std::size_t> idx(dims_new.size());
            for (std::size_t k = dims_new.size(); k-- > 0;) {
                idx[k] = rest % dims_new[k];
                rest /= dims_new[k];
            }
            idx[zpos] %= dims_old[zpos];
            std::size_t old_cell = 0;
            for (std::size_t k = 0; k < dims_old.size(); ++k) old_cell = old_cell * dims_old[k] + idx[k];
            table[cell] = spec.coefficients[old_cell];
        }
        spec.breaks[zpos] = nb;
        spec.coefficients = table;
        mech[child] = spec;
    }
    return HierModel(model.widths(), edges, mech, model.roots());
}

/// A random non-edge u -> z with z on level >= 2; false when every slot is taken.
inline bool random_missing_edge(const HierModel& model, RngStream& rng, VariableId& u, VariableId& z) {
    std::vector<Edge> candidates;
    for (int l = 2; l <= model.num_levels(); ++l) {
        for (int i = 1; i <= model.width(l); ++i) {
            for (int j = 1; j <= model.width(l - 1); ++j) {
                const Edge e{{l - 1, j}, {l, i}};
                if (!model.edges().contains(e)) candidates.push_back(e);
            }
        }
    }
    if (candidates.empty()) return false;
    const auto& e = candidates[rng.below(candidates.size())];
    u = e.parent;
    z = e.child;
    return true;
}

}  // namespace hiercomp::testkit
