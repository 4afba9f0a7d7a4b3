#pragma once

// Ancestral sampling with counter-based noise.
//
// The noise for (row r, variable v, draw j) is CounterRng(seed).uniform(r, slot(v), j),
// where slot(v) is the position of v in HierModel::variables(). Rows are therefore
// independent of the batch size: the first n rows of a 2n batch equal the n batch.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hiercomp/errors.hpp"
#include "hiercomp/mechanisms.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/model_io.hpp"
#include "hiercomp/rng.hpp"

namespace hiercomp {

/// Draws of every variable; one column per d_i and z_{l,i}, then d_x columns for x.
class SampleBatch {
public:
    SampleBatch() = default;

    SampleBatch(const HierModel& model, Eigen::Index rows, std::uint64_t seed)
        : data_(rows, 0), seed_(seed) {
        for (const auto& v : model.variables()) {
            if (v == model.observation()) continue;
            column_of_[v] = static_cast<Eigen::Index>(names_.size());
            names_.push_back(model.name(v));
        }
        observation_offset_ = static_cast<Eigen::Index>(names_.size());
        for (int j = 1; j <= model.observation_dim(); ++j) names_.push_back("x." + std::to_string(j));
        data_.resize(rows, static_cast<Eigen::Index>(names_.size()));
        conditioning_.resize(static_cast<std::size_t>(rows));
    }

    Eigen::Index rows() const { return data_.rows(); }
    std::uint64_t seed() const { return seed_; }
    const std::vector<std::string>& names() const { return names_; }
    const Eigen::MatrixXd& data() const { return data_; }
    Eigen::MatrixXd& data() { return data_; }
    const std::vector<DiscreteCombination>& conditioning() const { return conditioning_; }
    std::vector<DiscreteCombination>& conditioning() { return conditioning_; }

    bool has(VariableId v) const { return column_of_.contains(v); }

    Eigen::Index column_index(VariableId v) const {
        const auto it = column_of_.find(v);
        if (it == column_of_.end()) throw UnknownVariable("batch has no column for this variable");
        return it->second;
    }

    auto column(VariableId v) const { return data_.col(column_index(v)); }
    auto column(VariableId v) { return data_.col(column_index(v)); }

    auto observation() const {
        return data_.middleCols(observation_offset_, data_.cols() - observation_offset_);
    }

    /// Columns of a variable set, in the given order.
    Eigen::MatrixXd columns(const std::vector<VariableId>& vars) const {
        Eigen::MatrixXd out(rows(), static_cast<Eigen::Index>(vars.size()));
        for (std::size_t k = 0; k < vars.size(); ++k) {
            out.col(static_cast<Eigen::Index>(k)) = column(vars[k]);
        }
        return out;
    }

    /// Appends the rows of another batch drawn from the same model.
    void append(const SampleBatch& other) {
        if (other.names_ != names_) throw InvalidArgument("batches come from different models");
        Eigen::MatrixXd merged(rows() + other.rows(), data_.cols());
        merged << data_, other.data_;
        data_ = std::move(merged);
        conditioning_.insert(conditioning_.end(), other.conditioning_.begin(),
                             other.conditioning_.end());
    }

private:
    std::vector<std::string> names_;
    std::map<VariableId, Eigen::Index> column_of_;
    Eigen::Index observation_offset_ = 0;
    Eigen::MatrixXd data_;
    std::vector<DiscreteCombination> conditioning_;
    std::uint64_t seed_ = 0;
};

inline void require_valid(const HierModel& model) {
    const auto report = validate(model);
    if (!report.ok()) throw InvalidArgument("model does not validate:\n" + report.to_text());
}

inline void require_combination(const HierModel& model, const DiscreteCombination& d) {
    if (static_cast<int>(d.size()) != model.num_concepts()) {
        throw InvalidArgument("combination " + to_string(d) + " has " + std::to_string(d.size()) +
                              " entries, model has " + std::to_string(model.num_concepts()));
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] < 0 || d[i] >= model.cardinality(static_cast<int>(i) + 1)) {
            throw InvalidArgument("combination " + to_string(d) + ": d." + std::to_string(i + 1) +
                                  " is out of range");
        }
    }
}

namespace detail {

/// Flattened view of a validated model for row-wise generation.
struct GenerationPlan {
    struct Step {
        VariableId id;
        std::uint32_t slot = 0;
        Eigen::Index column = 0;
        std::vector<Eigen::Index> parent_columns;
        const MechanismSpec* mechanism = nullptr;
        const RootConditionalSpec* root = nullptr;
        int concept_index = -1;
    };
    std::vector<Step> latents;
    Step observation;
    int observation_dim = 0;
    Eigen::Index observation_offset = 0;
};

inline GenerationPlan make_plan(const HierModel& model, const SampleBatch& layout) {
    GenerationPlan plan;
    const auto vars = model.variables();
    for (std::size_t s = 0; s < vars.size(); ++s) {
        const auto v = vars[s];
        if (v.level == 0) continue;
        GenerationPlan::Step step;
        step.id = v;
        step.slot = static_cast<std::uint32_t>(s);
        for (const auto& p : model.parents(v)) step.parent_columns.push_back(layout.column_index(p));
        if (v == model.observation()) {
            step.mechanism = &model.mechanism_or_throw(v);
            plan.observation = step;
        } else if (v.level == 1) {
            step.column = layout.column_index(v);
            step.root = model.root(v.index);
            step.concept_index = v.index - 1;
            plan.latents.push_back(step);
        } else {
            step.column = layout.column_index(v);
            step.mechanism = &model.mechanism_or_throw(v);
            plan.latents.push_back(step);
        }
    }
    plan.observation_dim = model.observation_dim();
    plan.observation_offset = layout.column_index({0, 1}) + model.num_concepts() +
                              static_cast<Eigen::Index>(model.latents().size());
    return plan;
}

inline double root_value(const RootConditionalSpec& root, int value, double u) {
    const auto& spec = root.by_value.at(static_cast<std::size_t>(value));
    return spec.is_degenerate() ? spec.constant : spec.lo + (spec.hi - spec.lo) * u;
}

/// Observation block map: first K coordinates are affine images of the parents,
/// the rest are scaled noise.
inline void observe(const MechanismSpec& spec, std::span<const double> parents,
                    std::span<const double> noise, std::span<double> out) {
    const std::size_t k = parents.size();
    for (std::size_t j = 0; j < k; ++j) {
        out[j] = spec.coefficients[2 * j] + spec.coefficients[2 * j + 1] * parents[j];
    }
    for (std::size_t j = k; j < out.size(); ++j) out[j] = spec.noise_scale * noise[j - k];
}

}  // namespace detail

/// Draws n rows of every variable under the concept combination d.
/// `first_row` offsets the counter so that disjoint row ranges can be drawn separately.
inline SampleBatch sample(const HierModel& model, const DiscreteCombination& d, std::size_t n,
                          std::uint64_t seed, std::uint64_t first_row = 0) {
    require_valid(model);
    require_combination(model, d);
    if (n == 0) throw InvalidArgument("sample size must be at least 1");

    SampleBatch batch(model, static_cast<Eigen::Index>(n), seed);
    const auto plan = detail::make_plan(model, batch);
    const CounterRng rng(seed);
    auto& data = batch.data();
    std::vector<double> parents;
    std::vector<double> noise(static_cast<std::size_t>(plan.observation_dim));
    std::vector<double> x(static_cast<std::size_t>(plan.observation_dim));

    for (std::size_t r = 0; r < n; ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        const std::uint64_t counter = first_row + r;
        batch.conditioning()[r] = d;
        for (int i = 0; i < model.num_concepts(); ++i) {
            data(row, batch.column_index({0, i + 1})) = d[static_cast<std::size_t>(i)];
        }
        for (const auto& step : plan.latents) {
            const double u = rng.uniform(counter, step.slot, 0);
            if (step.root != nullptr) {
                data(row, step.column) =
                    detail::root_value(*step.root, d[static_cast<std::size_t>(step.concept_index)], u);
                continue;
            }
            parents.clear();
            for (auto c : step.parent_columns) parents.push_back(data(row, c));
            data(row, step.column) =
                apply_mechanism(*step.mechanism, parents, standard_noise(step.mechanism->noise, u));
        }
        parents.clear();
        for (auto c : plan.observation.parent_columns) parents.push_back(data(row, c));
        const std::size_t extra = x.size() - parents.size();
        for (std::size_t j = 0; j < extra; ++j) {
            noise[j] = standard_noise(plan.observation.mechanism->noise,
                                      rng.uniform(counter, plan.observation.slot,
                                                  static_cast<std::uint32_t>(j)));
        }
        detail::observe(*plan.observation.mechanism, parents, noise, x);
        for (std::size_t j = 0; j < x.size(); ++j) {
            data(row, plan.observation_offset + static_cast<Eigen::Index>(j)) = x[j];
        }
    }
    return batch;
}

/// Concatenated batches, `rows_each` rows per combination, disjoint counters.
inline SampleBatch sample_pooled(const HierModel& model, const std::vector<DiscreteCombination>& combos,
                                 std::size_t rows_each, std::uint64_t seed) {
    if (combos.empty()) throw InvalidArgument("no combinations to sample");
    SampleBatch pooled = sample(model, combos.front(), rows_each, seed, 0);
    for (std::size_t k = 1; k < combos.size(); ++k) {
        pooled.append(sample(model, combos[k], rows_each, seed, k * rows_each));
    }
    return pooled;
}

/// Deterministic map from (z_l, exogenous noise below level l) to x.
///
/// `noise` lists, in order, the standard noise of every latent on levels l+1..L
/// (level by level, index order) followed by the d_x - K noise coordinates of x.
inline std::vector<double> propagate_to_observation(const HierModel& model, int level,
                                                    std::span<const double> level_values,
                                                    std::span<const double> noise) {
    const int num_levels = model.num_levels();
    std::map<VariableId, double> values;
    for (int i = 1; i <= model.width(level); ++i) {
        values[{level, i}] = level_values[static_cast<std::size_t>(i - 1)];
    }
    std::size_t cursor = 0;
    std::vector<double> parents;
    for (int l = level + 1; l <= num_levels; ++l) {
        for (int i = 1; i <= model.width(l); ++i) {
            const VariableId v{l, i};
            parents.clear();
            for (const auto& p : model.parents(v)) parents.push_back(values.at(p));
            values[v] = apply_mechanism(model.mechanism_or_throw(v), parents, noise[cursor++]);
        }
    }
    const auto x_id = model.observation();
    parents.clear();
    for (const auto& p : model.parents(x_id)) parents.push_back(values.at(p));
    std::vector<double> x(static_cast<std::size_t>(model.observation_dim()));
    detail::observe(model.mechanism_or_throw(x_id), parents, noise.subspan(cursor), x);
    return x;
}

// ---------------------------------------------------------------------------
// Quantized supports.

using Cell = std::vector<int>;

/// Uniform per-variable grid used as a finite surrogate for supp(.).
/// Values outside a variable's range fall into the boundary cells. Discrete
/// concept variables use their value as the cell index.
struct QuantizationGrid {
    int cells = 16;
    std::pair<double, double> default_range{-4.0, 4.0};
    std::map<VariableId, std::pair<double, double>> ranges;

    std::pair<double, double> range(VariableId v) const {
        const auto it = ranges.find(v);
        return it == ranges.end() ? default_range : it->second;
    }

    int cell(VariableId v, double value) const {
        if (v.level == 0) return static_cast<int>(value);
        const auto [lo, hi] = range(v);
        if (!(hi > lo)) return 0;
        const double t = (value - lo) / (hi - lo) * cells;
        if (!(t >= 0.0)) return 0;
        if (t >= cells) return cells - 1;
        return static_cast<int>(t);
    }

    Cell cell_of(const std::vector<VariableId>& vars, std::span<const double> values) const {
        Cell out(vars.size());
        for (std::size_t k = 0; k < vars.size(); ++k) out[k] = cell(vars[k], values[k]);
        return out;
    }
};

/// Occupied cells of the joint values of `vars` in a batch.
inline std::set<Cell> occupied_cells(const SampleBatch& batch, const std::vector<VariableId>& vars,
                                     const QuantizationGrid& grid) {
    std::set<Cell> out;
    std::vector<Eigen::Index> cols;
    for (const auto& v : vars) cols.push_back(batch.column_index(v));
    std::vector<double> values(vars.size());
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        for (std::size_t k = 0; k < cols.size(); ++k) values[k] = batch.data()(r, cols[k]);
        out.insert(grid.cell_of(vars, values));
    }
    return out;
}

/// Empirical supp(S | d) on the grid, from n rows.
inline std::set<Cell> sample_marginal_support(const HierModel& model, const DiscreteCombination& d,
                                              const std::vector<VariableId>& vars, std::size_t n,
                                              std::uint64_t seed, const QuantizationGrid& grid) {
    if (grid.cells < 1) throw InvalidArgument("grid resolution must be positive");
    return occupied_cells(sample(model, d, n, seed), vars, grid);
}

/// Grid whose per-variable ranges cover the latents sampled under every combination.
inline QuantizationGrid fit_grid(const HierModel& model, const std::vector<DiscreteCombination>& combos,
                                 std::size_t n, std::uint64_t seed, int cells) {
    QuantizationGrid grid;
    grid.cells = cells;
    for (const auto& d : combos) {
        const auto batch = sample(model, d, n, seed);
        for (const auto& v : model.latents()) {
            const auto col = batch.column(v);
            const double lo = col.minCoeff();
            const double hi = col.maxCoeff();
            auto [it, fresh] = grid.ranges.try_emplace(v, lo, hi);
            if (!fresh) {
                it->second.first = std::min(it->second.first, lo);
                it->second.second = std::max(it->second.second, hi);
            }
        }
    }
    for (auto& [v, r] : grid.ranges) {
        const double pad = 1e-9 * std::max(1.0, std::abs(r.second - r.first));
        r.first -= pad;
        r.second += pad;
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Columnar export.

namespace detail {
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

/// Writes `path` (header row + one row per sample) and `path + ".meta.json"`.
inline void write_batch(const SampleBatch& batch, const HierModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    for (std::size_t c = 0; c < batch.names().size(); ++c) {
        out << (c ? "," : "") << batch.names()[c];
    }
    out << "\n";
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        for (Eigen::Index c = 0; c < batch.data().cols(); ++c) {
            out << (c ? "," : "") << detail::format_double(batch.data()(r, c));
        }
        out << "\n";
    }
    std::set<DiscreteCombination> combos(batch.conditioning().begin(), batch.conditioning().end());
    nlohmann::ordered_json meta;
    meta["seed"] = batch.seed();
    meta["rows"] = batch.rows();
    nlohmann::ordered_json ds = nlohmann::ordered_json::array();
    for (const auto& d : combos) ds.push_back(d.values);
    meta["d"] = ds;
    meta["model_hash"] = model_hash(model);
    std::ofstream side(path + ".meta.json");
    if (!side) throw Error("cannot write '" + path + ".meta.json'");
    side << meta.dump(2) << "\n";
}

/// Reads a batch written by write_batch. Conditioning is rebuilt from the d columns.
inline SampleBatch read_batch(const HierModel& model, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open batch file '" + path + "'");
    std::string header;
    std::getline(in, header);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    std::uint64_t seed = 0;
    if (std::ifstream side(path + ".meta.json"); side) {
        const auto meta = nlohmann::json::parse(side);
        seed = meta.value("seed", std::uint64_t{0});
    }
    SampleBatch batch(model, static_cast<Eigen::Index>(rows.size()), seed);
    std::vector<std::string> names;
    std::stringstream hs(header);
    std::string name;
    while (std::getline(hs, name, ',')) names.push_back(name);
    if (names != batch.names()) throw Error("batch header does not match the model's variables");
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != names.size()) {
            throw Error("batch row " + std::to_string(r + 2) + " has the wrong number of fields");
        }
        for (std::size_t c = 0; c < names.size(); ++c) {
            batch.data()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
        std::vector<int> d;
        for (int i = 1; i <= model.num_concepts(); ++i) {
            d.push_back(static_cast<int>(batch.data()(static_cast<Eigen::Index>(r),
                                                      batch.column_index({0, i}))));
        }
        batch.conditioning()[r] = DiscreteCombination(std::move(d));
    }
    return batch;
}

}  // namespace hiercomp
