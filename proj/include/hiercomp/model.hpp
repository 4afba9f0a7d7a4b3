#pragma once

// Leveled causal generative models.
//
// Level 0 holds the discrete concept variables d_1..d_n, levels 1..L hold the
// continuous latents z_{l,i}, and level L+1 holds the observation x, which is
// one multi-dimensional variable. Every edge goes from level l to level l+1.

#include <algorithm>
#include <compare>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hiercomp/errors.hpp"

namespace hiercomp {

struct VariableId {
    int level = 0;
    int index = 1;

    friend auto operator<=>(const VariableId&, const VariableId&) = default;
};

/// One value of the concept vector d.
struct DiscreteCombination {
    std::vector<int> values;

    DiscreteCombination() = default;
    DiscreteCombination(std::initializer_list<int> v) : values(v) {}
    explicit DiscreteCombination(std::vector<int> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    int operator[](std::size_t i) const { return values[i]; }

    friend auto operator<=>(const DiscreteCombination&, const DiscreteCombination&) = default;
};

inline std::string to_string(const DiscreteCombination& d) {
    std::string out = "[";
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (i > 0) out += ",";
        out += std::to_string(d[i]);
    }
    return out + "]";
}

enum class MechanismFamily { kLinearGaussian, kAffineTanh, kLocationScaleGaussian, kPiecewiseTable };
enum class NoiseFamily { kGaussian, kUniform };

inline std::string_view to_string(MechanismFamily f) {
    switch (f) {
        case MechanismFamily::kLinearGaussian: return "linear-gaussian";
        case MechanismFamily::kAffineTanh: return "affine-tanh";
        case MechanismFamily::kLocationScaleGaussian: return "location-scale-gaussian";
        case MechanismFamily::kPiecewiseTable: return "piecewise-table";
    }
    return "?";
}

inline std::string_view to_string(NoiseFamily f) {
    return f == NoiseFamily::kGaussian ? "gaussian" : "uniform";
}

/// v := g(pa(v), eps).
///
/// Coefficient layout for a latent with K ordered parents p:
///   linear-gaussian          [bias, w_1..w_K]                 v = bias + w.p + s*eps
///   affine-tanh              [bias, w_1..w_K]                 v = tanh(bias + w.p) + s*eps
///   location-scale-gaussian  [bias, w_1..w_K, c, u_1..u_K]    v = bias + w.p + s*exp((c + u.p)/2)*eps
///   piecewise-table          table over parent bins, row-major with the first parent slowest;
///                            `breaks[k]` are the ascending bin edges of parent k (bin j is
///                            [breaks[j-1], breaks[j])); v = table[bins] + s*eps
/// The observation x uses linear-gaussian with [b_1, w_1, ..., b_K, w_K]: its first K
/// coordinates are b_k + w_k p_k and the remaining d_x - K coordinates are s*eps_j.
/// Standard noise: gaussian N(0,1), uniform on [-1, 1].
struct MechanismSpec {
    MechanismFamily family = MechanismFamily::kLinearGaussian;
    std::vector<double> coefficients;
    std::vector<std::vector<double>> breaks;
    NoiseFamily noise = NoiseFamily::kGaussian;
    double noise_scale = 1.0;

    friend bool operator==(const MechanismSpec&, const MechanismSpec&) = default;
};

/// p(z_{1,i} | d_i = c) for one value c.
struct RootValueSpec {
    enum class Kind { kDegenerate, kInterval };

    Kind kind = Kind::kDegenerate;
    double constant = 0.0;
    double lo = 0.0;
    double hi = 1.0;  // interval values are uniform on [lo, hi]

    static RootValueSpec degenerate(double value) { return {Kind::kDegenerate, value, 0.0, 0.0}; }
    static RootValueSpec interval(double lo, double hi) { return {Kind::kInterval, 0.0, lo, hi}; }

    bool is_degenerate() const { return kind == Kind::kDegenerate; }

    friend bool operator==(const RootValueSpec&, const RootValueSpec&) = default;
};

/// Indexed by the value c of d_i; the cardinality of d_i is `by_value.size()`.
struct RootConditionalSpec {
    std::vector<RootValueSpec> by_value;

    int cardinality() const { return static_cast<int>(by_value.size()); }

    friend bool operator==(const RootConditionalSpec&, const RootConditionalSpec&) = default;
};

struct Edge {
    VariableId parent;
    VariableId child;

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Name of a variable given the number of latent levels: "d.i", "z{l}.{i}" or "x".
inline std::string variable_name(VariableId v, int num_levels) {
    if (v.level == 0) return "d." + std::to_string(v.index);
    if (v.level == num_levels + 1) return "x";
    return "z" + std::to_string(v.level) + "." + std::to_string(v.index);
}

/// Inverse of variable_name; throws InvalidArgument on malformed names.
inline VariableId parse_variable_name(std::string_view name, int num_levels) {
    auto parse_int = [&](std::string_view s) {
        if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) {
                return c >= '0' && c <= '9';
            })) {
            throw InvalidArgument("malformed variable name '" + std::string(name) + "'");
        }
        return std::stoi(std::string(s));
    };
    if (name == "x") return {num_levels + 1, 1};
    if (name.starts_with("d.")) return {0, parse_int(name.substr(2))};
    if (name.starts_with("z")) {
        const auto dot = name.find('.');
        if (dot == std::string_view::npos) {
            throw InvalidArgument("malformed variable name '" + std::string(name) + "'");
        }
        return {parse_int(name.substr(1, dot - 1)), parse_int(name.substr(dot + 1))};
    }
    throw InvalidArgument("malformed variable name '" + std::string(name) + "'");
}

/// Immutable hierarchical model. Construction never throws on structural
/// problems; run validate() to list them.
class HierModel {
public:
    HierModel() = default;

    /// `widths` = [n(d), n(z_1), ..., n(z_L), d_x].
    HierModel(std::vector<int> widths, std::vector<Edge> edges,
              std::map<VariableId, MechanismSpec> mechanisms,
              std::map<int, RootConditionalSpec> roots)
        : widths_(std::move(widths)),
          mechanisms_(std::move(mechanisms)),
          roots_(std::move(roots)) {
        for (const auto& e : edges) {
            if (!edges_.insert(e).second) duplicate_edges_.push_back(e);
        }
        for (const auto& e : edges_) parents_[e.child].push_back(e.parent);
        for (auto& [child, ps] : parents_) std::sort(ps.begin(), ps.end());
    }

    /// L, the number of latent levels.
    int num_levels() const { return static_cast<int>(widths_.size()) - 2; }
    const std::vector<int>& widths() const { return widths_; }
    int width(int level) const { return widths_.at(static_cast<std::size_t>(level)); }
    int num_concepts() const { return widths_.empty() ? 0 : widths_.front(); }
    int observation_dim() const { return widths_.empty() ? 0 : widths_.back(); }
    VariableId observation() const { return {num_levels() + 1, 1}; }

    bool contains(VariableId v) const {
        if (widths_.size() < 3 || v.level < 0 || v.level > num_levels() + 1) return false;
        if (v.level == num_levels() + 1) return v.index == 1;
        return v.index >= 1 && v.index <= width(v.level);
    }

    const std::set<Edge>& edges() const { return edges_; }
    const std::vector<Edge>& duplicate_edges() const { return duplicate_edges_; }
    const std::map<VariableId, MechanismSpec>& mechanisms() const { return mechanisms_; }
    const std::map<int, RootConditionalSpec>& roots() const { return roots_; }

    /// pa(v), ordered by level then index.
    const std::vector<VariableId>& parents(VariableId v) const {
        if (!contains(v)) throw UnknownVariable("unknown variable " + describe(v));
        static const std::vector<VariableId> kNone;
        const auto it = parents_.find(v);
        return it == parents_.end() ? kNone : it->second;
    }

    std::vector<VariableId> children(VariableId v) const {
        std::vector<VariableId> out;
        for (const auto& e : edges_) {
            if (e.parent == v) out.push_back(e.child);
        }
        return out;
    }

    const MechanismSpec* mechanism(VariableId v) const {
        const auto it = mechanisms_.find(v);
        return it == mechanisms_.end() ? nullptr : &it->second;
    }

    const MechanismSpec& mechanism_or_throw(VariableId v) const {
        const auto* m = mechanism(v);
        if (m == nullptr) throw InvalidArgument("no mechanism for " + name(v));
        return *m;
    }

    /// Conditional of z_{1,i} given d_i, 1-based i.
    const RootConditionalSpec* root(int i) const {
        const auto it = roots_.find(i);
        return it == roots_.end() ? nullptr : &it->second;
    }

    int cardinality(int i) const {
        const auto* r = root(i);
        return r == nullptr ? 2 : r->cardinality();
    }

    std::vector<VariableId> level(int l) const {
        std::vector<VariableId> out;
        if (l == num_levels() + 1) return {observation()};
        for (int i = 1; i <= width(l); ++i) out.push_back({l, i});
        return out;
    }

    std::vector<VariableId> latents() const {
        std::vector<VariableId> out;
        for (int l = 1; l <= num_levels(); ++l) {
            for (int i = 1; i <= width(l); ++i) out.push_back({l, i});
        }
        return out;
    }

    /// d, then z level by level, then x.
    std::vector<VariableId> variables() const {
        std::vector<VariableId> out = level(0);
        const auto z = latents();
        out.insert(out.end(), z.begin(), z.end());
        out.push_back(observation());
        return out;
    }

    std::string name(VariableId v) const { return variable_name(v, num_levels()); }

    VariableId parse_name(std::string_view s) const {
        const auto v = parse_variable_name(s, num_levels());
        if (!contains(v)) throw UnknownVariable("unknown variable '" + std::string(s) + "'");
        return v;
    }

    /// True when every non-root latent uses a deterministic piecewise table,
    /// so that supports can be enumerated exactly.
    bool is_enumerable() const {
        for (int l = 2; l <= num_levels(); ++l) {
            for (int i = 1; i <= width(l); ++i) {
                const auto* m = mechanism({l, i});
                if (m == nullptr || m->family != MechanismFamily::kPiecewiseTable ||
                    m->noise_scale != 0.0) {
                    return false;
                }
            }
        }
        return true;
    }

    friend bool operator==(const HierModel& a, const HierModel& b) {
        return a.widths_ == b.widths_ && a.edges_ == b.edges_ && a.mechanisms_ == b.mechanisms_ &&
               a.roots_ == b.roots_;
    }

private:
    std::string describe(VariableId v) const {
        return "(" + std::to_string(v.level) + "," + std::to_string(v.index) + ")";
    }

    std::vector<int> widths_;
    std::set<Edge> edges_;
    std::vector<Edge> duplicate_edges_;
    std::map<VariableId, std::vector<VariableId>> parents_;
    std::map<VariableId, MechanismSpec> mechanisms_;
    std::map<int, RootConditionalSpec> roots_;
};

/// Number of coefficients a mechanism needs for K parents, or -1 when the
/// count is determined by the breaks (piecewise tables).
inline long expected_arity(MechanismFamily family, std::size_t num_parents, bool observation) {
    const auto k = static_cast<long>(num_parents);
    if (observation) return 2 * k;
    switch (family) {
        case MechanismFamily::kLinearGaussian:
        case MechanismFamily::kAffineTanh: return k + 1;
        case MechanismFamily::kLocationScaleGaussian: return 2 * k + 2;
        case MechanismFamily::kPiecewiseTable: return -1;
    }
    return -1;
}

struct Violation {
    std::string code;
    std::string message;
    std::vector<VariableId> ids;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }

    bool contains(std::string_view code) const {
        return std::any_of(violations.begin(), violations.end(),
                           [&](const Violation& v) { return v.code == code; });
    }

    std::string to_text() const {
        std::ostringstream out;
        if (ok()) out << "model is well-formed\n";
        for (const auto& v : violations) out << v.code << ": " << v.message << "\n";
        return out.str();
    }
};

/// Lists every violated structural invariant. Never throws.
inline ValidationReport validate(const HierModel& model) {
    ValidationReport report;
    auto add = [&](std::string code, std::string message, std::vector<VariableId> ids = {}) {
        report.violations.push_back({std::move(code), std::move(message), std::move(ids)});
    };

    const auto& widths = model.widths();
    if (widths.size() < 3) {
        add("missing levels", "need widths for d, at least one latent level, and x");
        return report;
    }
    for (std::size_t l = 0; l < widths.size(); ++l) {
        if (widths[l] < 1) add("bad width", "level " + std::to_string(l) + " has width < 1");
    }
    if (!report.ok()) return report;

    const int num_levels = model.num_levels();
    auto name = [&](VariableId v) { return variable_name(v, num_levels); };

    for (const auto& e : model.duplicate_edges()) {
        add("duplicate edge", name(e.parent) + " -> " + name(e.child), {e.parent, e.child});
    }

    // Edges.
    for (const auto& e : model.edges()) {
        if (!model.contains(e.parent) || !model.contains(e.child)) {
            add("unknown variable", "edge " + name(e.parent) + " -> " + name(e.child) +
                                        " references an undeclared variable",
                {e.parent, e.child});
            continue;
        }
        if (e.child.level != e.parent.level + 1) {
            add("non-adjacent-level edge",
                name(e.parent) + " -> " + name(e.child) + " spans levels " +
                    std::to_string(e.parent.level) + " -> " + std::to_string(e.child.level),
                {e.parent, e.child});
        }
    }

    // Cycles are only possible when the level constraint is already broken,
    // but report them separately so the report is complete.
    {
        std::map<VariableId, int> indegree;
        std::map<VariableId, std::vector<VariableId>> out;
        for (const auto& v : model.variables()) indegree[v] = 0;
        for (const auto& e : model.edges()) {
            if (!model.contains(e.parent) || !model.contains(e.child)) continue;
            ++indegree[e.child];
            out[e.parent].push_back(e.child);
        }
        std::vector<VariableId> ready;
        for (const auto& [v, deg] : indegree) {
            if (deg == 0) ready.push_back(v);
        }
        std::size_t visited = 0;
        while (!ready.empty()) {
            const auto v = ready.back();
            ready.pop_back();
            ++visited;
            for (const auto& c : out[v]) {
                if (--indegree[c] == 0) ready.push_back(c);
            }
        }
        if (visited != indegree.size()) add("cycle", "edge set contains a directed cycle");
    }

    // Root pairing d_i -> z_{1,i}.
    for (int i = 1; i <= model.width(1); ++i) {
        const VariableId z{1, i};
        const auto& pa = model.parents(z);
        if (pa.size() != 1 || pa.front() != VariableId{0, i}) {
            add("root pairing", name(z) + " must have exactly one parent, d." + std::to_string(i),
                {z});
        }
        if (model.mechanism(z) != nullptr) {
            add("unexpected mechanism", name(z) + " is generated by its root conditional", {z});
        }
    }
    if (model.width(0) != model.width(1)) {
        add("root pairing", "n(d) = " + std::to_string(model.width(0)) +
                                " differs from n(z_1) = " + std::to_string(model.width(1)));
    }

    // Root conditionals.
    for (int i = 1; i <= model.width(0); ++i) {
        const auto* root = model.root(i);
        const VariableId d{0, i};
        if (root == nullptr) {
            add("missing root conditional", "no conditional for d." + std::to_string(i), {d});
            continue;
        }
        if (root->cardinality() < 2) {
            add("cardinality", "d." + std::to_string(i) + " needs at least two values", {d});
            continue;
        }
        if (!root->by_value.front().is_degenerate()) {
            add("absence not degenerate",
                "p(z1." + std::to_string(i) + " | d." + std::to_string(i) + " = 0) must be a constant",
                {d});
        }
        const RootValueSpec* first_interval = nullptr;
        for (std::size_t c = 1; c < root->by_value.size(); ++c) {
            const auto& spec = root->by_value[c];
            if (spec.is_degenerate()) {
                add("presence degenerate", "d." + std::to_string(i) + " = " + std::to_string(c) +
                                               " must have an interval support",
                    {d});
                continue;
            }
            if (!(spec.lo < spec.hi)) {
                add("empty interval", "d." + std::to_string(i) + " = " + std::to_string(c) +
                                          " has lo >= hi",
                    {d});
            }
            if (first_interval == nullptr) {
                first_interval = &spec;
            } else if (spec.lo != first_interval->lo || spec.hi != first_interval->hi) {
                add("support mismatch", "nonzero values of d." + std::to_string(i) +
                                            " must share one support interval",
                    {d});
            }
        }
    }
    for (const auto& [i, spec] : model.roots()) {
        if (i < 1 || i > model.width(0)) {
            add("unknown variable", "root conditional for undeclared d." + std::to_string(i));
        }
    }

    // Parents and mechanisms of non-root variables.
    std::vector<VariableId> non_roots;
    for (int l = 2; l <= num_levels; ++l) {
        for (int i = 1; i <= model.width(l); ++i) non_roots.push_back({l, i});
    }
    non_roots.push_back(model.observation());
    for (const auto& v : non_roots) {
        const auto& pa = model.parents(v);
        if (pa.empty()) add("missing parent", name(v) + " has no parents", {v});
        const auto* mech = model.mechanism(v);
        if (mech == nullptr) {
            add("missing mechanism", "no mechanism for " + name(v), {v});
            continue;
        }
        const bool observation = v == model.observation();
        if (observation) {
            if (mech->family != MechanismFamily::kLinearGaussian) {
                add("observation family", "x must use the linear-gaussian block mechanism", {v});
            }
            if (static_cast<long>(pa.size()) > model.observation_dim()) {
                add("observation dimension",
                    "d_x = " + std::to_string(model.observation_dim()) + " is smaller than the " +
                        std::to_string(pa.size()) + " observed parents",
                    {v});
            }
        }
        if (mech->family == MechanismFamily::kPiecewiseTable && !observation) {
            std::size_t cells = 1;
            bool sorted = true;
            for (const auto& b : mech->breaks) {
                cells *= b.size() + 1;
                sorted = sorted && std::adjacent_find(b.begin(), b.end(), std::greater_equal<>()) ==
                                       b.end();
            }
            if (mech->breaks.size() != pa.size() || mech->coefficients.size() != cells) {
                add("arity mismatch", name(v) + ": table shape does not match its " +
                                          std::to_string(pa.size()) + " parents",
                    {v});
            }
            if (!sorted) add("arity mismatch", name(v) + ": table breaks must ascend", {v});
        } else {
            const long want = expected_arity(mech->family, pa.size(), observation);
            if (static_cast<long>(mech->coefficients.size()) != want) {
                add("arity mismatch", name(v) + ": expected " + std::to_string(want) +
                                          " coefficients, got " +
                                          std::to_string(mech->coefficients.size()),
                    {v});
            }
        }
        const bool table = mech->family == MechanismFamily::kPiecewiseTable;
        if (table ? mech->noise_scale < 0.0 : !(mech->noise_scale > 0.0)) {
            add("noise scale", name(v) + ": noise scale must be positive", {v});
        }
        if (mech->family == MechanismFamily::kLocationScaleGaussian &&
            mech->noise != NoiseFamily::kGaussian) {
            add("noise family", name(v) + ": location-scale-gaussian needs gaussian noise", {v});
        }
    }
    for (const auto& [v, mech] : model.mechanisms()) {
        if (!model.contains(v) || v.level == 0) {
            add("unknown variable", "mechanism for undeclared variable " + name(v), {v});
        }
    }
    return report;
}

}  // namespace hiercomp
