#pragma once

// Support-containment certificate for unseen concept combinations.
//
// d is certified composable relative to D_s when, for every latent z, some d~ in D_s
// satisfies supp(pa(z) | d) ⊆ supp(pa(z) | d~). The certificate is sufficient, not
// necessary: a module g_z that only ever saw parent values inside supp(pa(z) | d~)
// during training is forced to behave correctly under d.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hiercomp/enumerate.hpp"
#include "hiercomp/errors.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/sampler.hpp"

namespace hiercomp {

enum class SupportProvenance { kEmpirical, kExact };

struct SupportEntry {
    SupportProvenance provenance = SupportProvenance::kEmpirical;
    std::size_t n = 0;  // empirical only
    std::uint64_t seed = 0;
    std::set<Cell> cells;
    std::set<AtomTuple> atoms;  // exact only
};

struct SupportKey {
    std::vector<VariableId> vars;
    DiscreteCombination d;

    friend auto operator<=>(const SupportKey&, const SupportKey&) = default;
};

/// supp(S | d) for variable sets S and combinations d, on one shared grid.
class SupportTable {
public:
    SupportTable() = default;
    explicit SupportTable(QuantizationGrid grid) : grid_(std::move(grid)) {}

    const QuantizationGrid& grid() const { return grid_; }
    std::size_t size() const { return entries_.size(); }
    const std::map<SupportKey, SupportEntry>& entries() const { return entries_; }

    /// Exact entries are never replaced by empirical ones.
    void insert(std::vector<VariableId> vars, DiscreteCombination d, SupportEntry entry) {
        SupportKey key{std::move(vars), std::move(d)};
        const auto it = entries_.find(key);
        if (it != entries_.end() && it->second.provenance == SupportProvenance::kExact &&
            entry.provenance == SupportProvenance::kEmpirical) {
            return;
        }
        entries_[std::move(key)] = std::move(entry);
    }

    const SupportEntry* find(const std::vector<VariableId>& vars, const DiscreteCombination& d) const {
        const auto it = entries_.find({vars, d});
        return it == entries_.end() ? nullptr : &it->second;
    }

    const SupportEntry& at(const std::vector<VariableId>& vars, const DiscreteCombination& d) const {
        const auto* e = find(vars, d);
        if (e == nullptr) {
            throw MissingSupportEntry("support table has no entry for d = " + to_string(d) +
                                      " over " + std::to_string(vars.size()) + " variable(s)");
        }
        return *e;
    }

private:
    QuantizationGrid grid_;
    std::map<SupportKey, SupportEntry> entries_;
};

enum class SupportMode { kAuto, kExact, kEmpirical };

struct SupportOptions {
    SupportMode mode = SupportMode::kAuto;  // auto: exact when the model is enumerable
    std::size_t n = 4000;
    std::uint64_t seed = 0;
    int cells = 16;
    bool retry = true;  // resample an empirical d~ at 4n once before reporting a blocker
};

/// Parent sets whose supports the certificate compares, one per latent.
inline std::vector<std::pair<VariableId, std::vector<VariableId>>> parent_sets(const HierModel& model) {
    std::vector<std::pair<VariableId, std::vector<VariableId>>> out;
    for (const auto& z : model.latents()) out.emplace_back(z, model.parents(z));
    return out;
}

inline bool uses_exact_supports(const HierModel& model, SupportMode mode) {
    if (mode == SupportMode::kExact && !model.is_enumerable()) {
        throw UnsupportedFamily("exact supports need an enumerable model");
    }
    return mode == SupportMode::kExact || (mode == SupportMode::kAuto && model.is_enumerable());
}

inline SupportEntry exact_entry(const HierModel& model, const DiscreteCombination& d,
                                const std::vector<VariableId>& vars, const QuantizationGrid& grid) {
    SupportEntry e;
    e.provenance = SupportProvenance::kExact;
    e.atoms = exact_support(model, d, vars);
    for (const auto& t : e.atoms) {
        for (auto& c : atom_cells(vars, t, grid)) e.cells.insert(std::move(c));
    }
    return e;
}

inline SupportEntry empirical_entry(const SampleBatch& batch, const std::vector<VariableId>& vars,
                                    const QuantizationGrid& grid) {
    SupportEntry e;
    e.provenance = SupportProvenance::kEmpirical;
    e.n = static_cast<std::size_t>(batch.rows());
    e.seed = batch.seed();
    e.cells = occupied_cells(batch, vars, grid);
    return e;
}

/// supp(d_i | d) is the single point d_i.
inline SupportEntry exact_entry_for_concepts(const std::vector<VariableId>& vars, const DiscreteCombination& d,
                                             const QuantizationGrid& grid) {
    SupportEntry e;
    e.provenance = SupportProvenance::kExact;
    AtomTuple t;
    for (const auto& v : vars) {
        const double c = d[static_cast<std::size_t>(v.index - 1)];
        t.push_back({c, c});
    }
    for (auto& c : atom_cells(vars, t, grid)) e.cells.insert(std::move(c));
    e.atoms.insert(std::move(t));
    return e;
}

/// Entries for supp(pa(z) | d) of every latent z and every d in `combos`.
inline SupportTable build_support_table(const HierModel& model, const std::vector<DiscreteCombination>& combos,
                                        const SupportOptions& options = {}) {
    require_valid(model);
    if (options.cells < 1) throw InvalidArgument("grid resolution must be positive");
    for (const auto& d : combos) require_combination(model, d);
    const bool exact = uses_exact_supports(model, options.mode);

    QuantizationGrid grid;
    if (exact) {
        grid.cells = options.cells;
        for (const auto& d : combos) {
            for (const auto& o : enumerate_outcomes(model, d)) {
                for (const auto& z : model.latents()) {
                    const auto a = outcome_value(model, d, o, z);
                    auto [it, fresh] = grid.ranges.try_emplace(z, a.lo, a.hi);
                    if (!fresh) {
                        it->second.first = std::min(it->second.first, a.lo);
                        it->second.second = std::max(it->second.second, a.hi);
                    }
                }
            }
        }
        for (auto& [z, r] : grid.ranges) r.second += 1e-9 * std::max(1.0, r.second - r.first);
    } else {
        grid = fit_grid(model, combos, options.n, options.seed, options.cells);
    }

    SupportTable table(grid);
    const auto sets = parent_sets(model);
    for (const auto& d : combos) {
        if (exact) {
            for (const auto& [z, pa] : sets) table.insert(pa, d, exact_entry(model, d, pa, grid));
            continue;
        }
        const auto batch = sample(model, d, options.n, options.seed);
        for (const auto& [z, pa] : sets) {
            if (z.level == 1) {
                table.insert(pa, d, exact_entry_for_concepts(pa, d, grid));
            } else {
                table.insert(pa, d, empirical_entry(batch, pa, grid));
            }
        }
    }
    return table;
}

/// Parts of `query` not covered by `reference`. Atom tuples are compared when both
/// entries are exact; otherwise grid cells.
struct Uncovered {
    std::vector<Cell> cells;
    std::vector<AtomTuple> atoms;

    bool empty() const { return cells.empty() && atoms.empty(); }
    std::size_t size() const { return atoms.empty() ? cells.size() : atoms.size(); }
};

inline Uncovered uncovered(const SupportEntry& query, const SupportEntry& reference,
                           const std::vector<VariableId>& vars, const QuantizationGrid& grid) {
    Uncovered out;
    if (query.provenance == SupportProvenance::kExact && reference.provenance == SupportProvenance::kExact) {
        for (const auto& t : query.atoms) {
            const bool inside = std::any_of(reference.atoms.begin(), reference.atoms.end(), [&](const AtomTuple& r) {
                for (std::size_t k = 0; k < t.size(); ++k) {
                    if (!t[k].within(r[k])) return false;
                }
                return true;
            });
            if (!inside) {
                out.atoms.push_back(t);
                for (auto& c : atom_cells(vars, t, grid)) out.cells.push_back(std::move(c));
            }
        }
        return out;
    }
    std::set_difference(query.cells.begin(), query.cells.end(), reference.cells.begin(), reference.cells.end(),
                        std::back_inserter(out.cells));
    return out;
}

struct Blocker {
    VariableId latent;
    Cell cell;
    std::optional<AtomTuple> atoms;  // exact supports: the uncovered parent configuration
    DiscreteCombination nearest;     // d~ that leaves the fewest uncovered parts
};

struct ComposabilityVerdict {
    DiscreteCombination d;
    bool composable = false;
    std::map<VariableId, DiscreteCombination> witness;
    std::vector<Blocker> blockers;
};

/// Lazily drawn 4n batches used by the retry rule.
class RetryCache {
public:
    RetryCache(const HierModel& model, const QuantizationGrid& grid) : model_(model), grid_(grid) {}

    SupportEntry enlarged(const std::vector<VariableId>& vars, const DiscreteCombination& d,
                          const SupportEntry& original) {
        auto it = batches_.find(d);
        if (it == batches_.end()) {
            it = batches_.emplace(d, sample(model_, d, 4 * original.n, original.seed)).first;
        }
        return empirical_entry(it->second, vars, grid_);
    }

private:
    const HierModel& model_;
    const QuantizationGrid& grid_;
    std::map<DiscreteCombination, SampleBatch> batches_;
};

namespace detail {

inline ComposabilityVerdict check_with_cache(const HierModel& model, const std::set<DiscreteCombination>& train,
                                             const DiscreteCombination& d, const SupportTable& table,
                                             bool retry, RetryCache& cache) {
    if (train.empty()) throw InvalidArgument("D_s is empty");
    ComposabilityVerdict verdict;
    verdict.d = d;
    const auto& grid = table.grid();
    for (const auto& [z, pa] : parent_sets(model)) {
        const auto& query = table.at(pa, d);
        std::optional<DiscreteCombination> witness;
        std::optional<std::pair<DiscreteCombination, Uncovered>> best;
        auto consider = [&](const DiscreteCombination& dt, Uncovered miss) {
            if (miss.empty()) {
                witness = dt;
                return true;
            }
            if (!best || miss.size() < best->second.size()) best.emplace(dt, std::move(miss));
            return false;
        };
        for (const auto& dt : train) {
            if (consider(dt, uncovered(query, table.at(pa, dt), pa, grid))) break;
        }
        if (!witness && retry) {
            best.reset();
            for (const auto& dt : train) {
                const auto& ref = table.at(pa, dt);
                if (ref.provenance != SupportProvenance::kEmpirical) {
                    if (consider(dt, uncovered(query, ref, pa, grid))) break;
                    continue;
                }
                if (consider(dt, uncovered(query, cache.enlarged(pa, dt, ref), pa, grid))) break;
            }
        }
        if (witness) {
            verdict.witness[z] = *witness;
            continue;
        }
        const auto& [nearest, miss] = *best;
        if (!miss.atoms.empty()) {
            for (const auto& t : miss.atoms) {
                verdict.blockers.push_back({z, atom_cells(pa, t, grid).front(), t, nearest});
            }
        } else {
            for (const auto& c : miss.cells) verdict.blockers.push_back({z, c, std::nullopt, nearest});
        }
    }
    verdict.composable = verdict.blockers.empty();
    return verdict;
}

}  // namespace detail

/// Certificate for one combination. The witness per latent is the lexicographically
/// smallest d~ in D_s whose parent support contains the query's.
inline ComposabilityVerdict check_composability(const HierModel& model, const std::set<DiscreteCombination>& train,
                                                const DiscreteCombination& d, const SupportTable& table,
                                                bool retry = true) {
    RetryCache cache(model, table.grid());
    return detail::check_with_cache(model, train, d, table, retry, cache);
}

/// D_× = [D_s]_1 × ... × [D_s]_n, in lexicographic order.
inline std::vector<DiscreteCombination> cartesian_product(const std::set<DiscreteCombination>& train) {
    if (train.empty()) throw InvalidArgument("D_s is empty");
    const std::size_t n = train.begin()->size();
    std::vector<std::set<int>> marginals(n);
    for (const auto& d : train) {
        if (d.size() != n) throw InvalidArgument("combinations in D_s differ in length");
        for (std::size_t i = 0; i < n; ++i) marginals[i].insert(d[i]);
    }
    std::vector<DiscreteCombination> out{DiscreteCombination{}};
    for (const auto& m : marginals) {
        std::vector<DiscreteCombination> next;
        for (const auto& prefix : out) {
            for (int v : m) {
                auto values = prefix.values;
                values.push_back(v);
                next.emplace_back(std::move(values));
            }
        }
        out = std::move(next);
    }
    return out;
}

/// One verdict per candidate, in candidate order.
inline std::vector<ComposabilityVerdict> enumerate_composable_space(const HierModel& model,
                                                                    const std::set<DiscreteCombination>& train,
                                                                    const std::vector<DiscreteCombination>& candidates,
                                                                    const SupportTable& table, bool retry = true) {
    RetryCache cache(model, table.grid());
    std::vector<ComposabilityVerdict> out;
    for (const auto& d : candidates) out.push_back(detail::check_with_cache(model, train, d, table, retry, cache));
    return out;
}

struct ComposabilityAnalysis {
    std::set<DiscreteCombination> train;
    std::vector<DiscreteCombination> candidates;
    SupportTable table;
    std::vector<ComposabilityVerdict> verdicts;

    std::set<DiscreteCombination> composable_set() const {
        std::set<DiscreteCombination> out;
        for (const auto& v : verdicts) {
            if (v.composable) out.insert(v.d);
        }
        return out;
    }
};

/// Builds the table over D_s and the candidates (default D_×), then checks every candidate.
inline ComposabilityAnalysis analyze_composability(const HierModel& model, const std::set<DiscreteCombination>& train,
                                                   std::optional<std::vector<DiscreteCombination>> candidates = std::nullopt,
                                                   const SupportOptions& options = {}) {
    ComposabilityAnalysis a;
    a.train = train;
    a.candidates = candidates ? *candidates : cartesian_product(train);
    std::set<DiscreteCombination> all(train.begin(), train.end());
    all.insert(a.candidates.begin(), a.candidates.end());
    a.table = build_support_table(model, {all.begin(), all.end()}, options);
    a.verdicts = enumerate_composable_space(model, train, a.candidates, a.table, options.retry);
    return a;
}

// ---------------------------------------------------------------------------
// Sparsity sweep.

struct SweepRow {
    std::string label;
    std::size_t max_parents = 0;  // k: largest parent set among non-root latents
    std::size_t edges = 0;
    std::set<DiscreteCombination> composable;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::vector<std::pair<std::string, std::string>> violations;  // (sparser, denser) with a larger certified set

    std::string to_text() const {
        std::ostringstream out;
        out << "label\tk\tedges\tcomposable\n";
        for (const auto& r : rows) {
            out << r.label << "\t" << r.max_parents << "\t" << r.edges << "\t" << r.composable.size() << "\n";
        }
        for (const auto& [a, b] : violations) {
            out << "violation: " << b << " has edges of " << a << " but certifies more\n";
        }
        return out.str();
    }
};

/// Certified-set sizes across models that share widths and root conditionals.
inline SweepReport sparsity_sweep(const std::vector<std::pair<std::string, HierModel>>& family,
                                  const std::set<DiscreteCombination>& train, const SupportOptions& options = {}) {
    if (family.empty()) throw InvalidArgument("empty model family");
    const auto& first = family.front().second;
    SweepReport report;
    for (const auto& [label, model] : family) {
        if (model.widths() != first.widths() || model.roots() != first.roots()) {
            throw InvalidArgument("family members not comparable: " + label + " differs in widths or roots");
        }
        SweepRow row;
        row.label = label;
        for (const auto& z : model.latents()) {
            if (z.level > 1) row.max_parents = std::max(row.max_parents, model.parents(z).size());
        }
        row.edges = model.edges().size();
        row.composable = analyze_composability(model, train, std::nullopt, options).composable_set();
        report.rows.push_back(std::move(row));
    }
    for (std::size_t a = 0; a < family.size(); ++a) {
        for (std::size_t b = 0; b < family.size(); ++b) {
            if (a == b) continue;
            const auto& ea = family[a].second.edges();
            const auto& eb = family[b].second.edges();
            if (!std::includes(eb.begin(), eb.end(), ea.begin(), ea.end())) continue;
            const auto& ca = report.rows[a].composable;
            const auto& cb = report.rows[b].composable;
            if (!std::includes(ca.begin(), ca.end(), cb.begin(), cb.end())) {
                report.violations.emplace_back(family[a].first, family[b].first);
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Reports.

inline std::string describe_atoms(const HierModel& model, const std::vector<VariableId>& vars, const AtomTuple& t) {
    std::ostringstream out;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        if (k) out << " ";
        out << model.name(vars[k]) << "=";
        if (t[k].is_point()) {
            out << t[k].lo;
        } else {
            out << "[" << t[k].lo << "," << t[k].hi << "]";
        }
    }
    return out.str();
}

inline std::string describe_cell(const Cell& c) {
    std::string out = "(";
    for (std::size_t k = 0; k < c.size(); ++k) out += (k ? "," : "") + std::to_string(c[k]);
    return out + ")";
}

inline std::string verdict_report(const HierModel& model, const ComposabilityAnalysis& a) {
    std::ostringstream out;
    out << "D_s:";
    for (const auto& d : a.train) out << " " << to_string(d);
    out << "\ncandidates: " << a.candidates.size() << "\n";
    for (const auto& v : a.verdicts) {
        out << to_string(v.d) << " " << (v.composable ? "certified composable" : "not certified") << "\n";
        for (const auto& [z, dt] : v.witness) out << "  witness " << model.name(z) << " <- " << to_string(dt) << "\n";
        for (const auto& b : v.blockers) {
            out << "  blocker " << model.name(b.latent) << " cell " << describe_cell(b.cell);
            if (b.atoms) out << " {" << describe_atoms(model, model.parents(b.latent), *b.atoms) << "}";
            out << " nearest " << to_string(b.nearest) << "\n";
        }
    }
    const auto set = a.composable_set();
    out << "composable: " << set.size() << " of " << a.candidates.size() << ":";
    for (const auto& d : set) out << " " << to_string(d);
    out << "\n";
    return out.str();
}

}  // namespace hiercomp
