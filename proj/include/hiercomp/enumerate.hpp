#pragma once

// Exact enumeration of enumerable models (deterministic piecewise tables below level 1).
//
// A root under d_i = c is either a point or a uniform interval. Cutting each interval
// at every table break its children use turns it into pieces on which every child is
// constant, so the joint law of all latents is a finite mixture of "atoms": each
// latent is a point, or a root piece of positive length.

#include <algorithm>
#include <compare>
#include <cmath>
#include <set>
#include <vector>

#include "hiercomp/errors.hpp"
#include "hiercomp/mechanisms.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/sampler.hpp"

namespace hiercomp {

/// Closed interval [lo, hi]; a point when lo == hi.
struct Atom {
    double lo = 0.0;
    double hi = 0.0;

    bool is_point() const { return lo == hi; }
    double representative() const { return is_point() ? lo : 0.5 * (lo + hi); }
    bool within(const Atom& outer) const { return outer.lo <= lo && hi <= outer.hi; }

    friend auto operator<=>(const Atom&, const Atom&) = default;
};

using AtomTuple = std::vector<Atom>;

/// One joint configuration of the latents (in HierModel::latents() order) and its probability.
struct ExactOutcome {
    std::vector<Atom> latents;
    double probability = 0.0;
};

namespace detail {

inline std::size_t latent_ordinal(const HierModel& model, VariableId v) {
    std::size_t k = 0;
    for (int l = 1; l < v.level; ++l) k += static_cast<std::size_t>(model.width(l));
    return k + static_cast<std::size_t>(v.index - 1);
}

struct RootPiece {
    Atom atom;
    double probability = 1.0;
};

inline std::vector<RootPiece> root_pieces(const HierModel& model, int i, int value) {
    const auto& spec = model.root(i)->by_value.at(static_cast<std::size_t>(value));
    if (spec.is_degenerate()) return {{{spec.constant, spec.constant}, 1.0}};
    const VariableId z{1, i};
    std::vector<double> cuts{spec.lo, spec.hi};
    for (const auto& child : model.children(z)) {
        if (child == model.observation()) continue;
        const auto& pa = model.parents(child);
        const auto pos = static_cast<std::size_t>(std::find(pa.begin(), pa.end(), z) - pa.begin());
        for (double b : model.mechanism_or_throw(child).breaks.at(pos)) {
            if (b > spec.lo && b < spec.hi) cuts.push_back(b);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<RootPiece> out;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        out.push_back({{cuts[k], cuts[k + 1]}, (cuts[k + 1] - cuts[k]) / (spec.hi - spec.lo)});
    }
    return out;
}

}  // namespace detail

/// Every atom configuration of the latents under d, with probabilities summing to 1.
inline std::vector<ExactOutcome> enumerate_outcomes(const HierModel& model, const DiscreteCombination& d) {
    require_valid(model);
    require_combination(model, d);
    if (!model.is_enumerable()) {
        throw UnsupportedFamily("exact enumeration needs noise-free piecewise tables below level 1");
    }
    const int n = model.num_concepts();
    std::vector<std::vector<detail::RootPiece>> pieces;
    for (int i = 1; i <= n; ++i) pieces.push_back(detail::root_pieces(model, i, d[static_cast<std::size_t>(i - 1)]));

    const auto latents = model.latents();
    std::vector<ExactOutcome> out;
    std::vector<std::size_t> pick(static_cast<std::size_t>(n), 0);
    std::vector<double> parents;
    while (true) {
        ExactOutcome o;
        o.latents.resize(latents.size());
        o.probability = 1.0;
        for (int i = 0; i < n; ++i) {
            const auto& p = pieces[static_cast<std::size_t>(i)][pick[static_cast<std::size_t>(i)]];
            o.latents[static_cast<std::size_t>(i)] = p.atom;
            o.probability *= p.probability;
        }
        for (std::size_t k = static_cast<std::size_t>(n); k < latents.size(); ++k) {
            parents.clear();
            for (const auto& p : model.parents(latents[k])) {
                parents.push_back(o.latents[detail::latent_ordinal(model, p)].representative());
            }
            const double v = conditional_location(model.mechanism_or_throw(latents[k]), parents);
            o.latents[k] = {v, v};
        }
        out.push_back(std::move(o));
        int i = n - 1;
        while (i >= 0 && ++pick[static_cast<std::size_t>(i)] == pieces[static_cast<std::size_t>(i)].size()) {
            pick[static_cast<std::size_t>(i)] = 0;
            --i;
        }
        if (i < 0) break;
    }
    return out;
}

/// Value of a variable (concept or latent) in an outcome.
inline Atom outcome_value(const HierModel& model, const DiscreteCombination& d, const ExactOutcome& o,
                          VariableId v) {
    if (v.level == 0) {
        const double c = d[static_cast<std::size_t>(v.index - 1)];
        return {c, c};
    }
    if (v.level < 1 || v.level > model.num_levels()) throw InvalidArgument("not a latent or concept variable");
    return o.latents[detail::latent_ordinal(model, v)];
}

/// supp(S | d) as a set of atom tuples.
inline std::set<AtomTuple> exact_support(const HierModel& model, const DiscreteCombination& d,
                                         const std::vector<VariableId>& vars) {
    std::set<AtomTuple> out;
    for (const auto& o : enumerate_outcomes(model, d)) {
        AtomTuple t;
        for (const auto& v : vars) t.push_back(outcome_value(model, d, o, v));
        out.insert(std::move(t));
    }
    return out;
}

/// Grid cells touched by an atom tuple.
inline std::vector<Cell> atom_cells(const std::vector<VariableId>& vars, const AtomTuple& tuple,
                                    const QuantizationGrid& grid) {
    std::vector<std::pair<int, int>> ranges;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        const auto& a = tuple[k];
        const double top = a.is_point() ? a.hi : std::nextafter(a.hi, a.lo);
        ranges.emplace_back(grid.cell(vars[k], a.lo), grid.cell(vars[k], top));
    }
    std::vector<Cell> out{Cell{}};
    for (const auto& [lo, hi] : ranges) {
        std::vector<Cell> next;
        for (const auto& c : out) {
            for (int j = lo; j <= hi; ++j) {
                auto e = c;
                e.push_back(j);
                next.push_back(std::move(e));
            }
        }
        out = std::move(next);
    }
    return out;
}

}  // namespace hiercomp
