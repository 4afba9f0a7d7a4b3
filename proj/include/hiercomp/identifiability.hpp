#pragma once

// Checks of the identification conditions on a declared model, and component-wise
// matching of candidate latents against true ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiercomp/assignment.hpp"
#include "hiercomp/errors.hpp"
#include "hiercomp/mechanisms.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/rng.hpp"
#include "hiercomp/sampler.hpp"
#include "hiercomp/stats.hpp"

namespace hiercomp {

enum class DerivativeMode { kAnalytic, kFiniteDifference };

enum class CheckStatus { kPass, kNotVerified, kViolated };

inline std::string_view to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::kPass: return "PASS";
        case CheckStatus::kNotVerified: return "NOT-VERIFIED";
        case CheckStatus::kViolated: return "VIOLATED";
    }
    return "?";
}

/// Numerical rank: singular values above tol * largest.
inline int numerical_rank(const Eigen::VectorXd& singular_values, double tol) {
    if (singular_values.size() == 0 || singular_values[0] <= 0.0) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i) {
        if (singular_values[i] > tol * singular_values[0]) ++r;
    }
    return r;
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return {};
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
}

namespace detail {

inline void require_latent_step(const HierModel& model, int level) {
    if (level < 1 || level >= model.num_levels()) {
        throw InvalidArgument("level " + std::to_string(level) + " has no latent children; use 1.." +
                              std::to_string(model.num_levels() - 1));
    }
}

inline std::vector<double> parent_values(const HierModel& model, VariableId child, std::span<const double> z_l) {
    std::vector<double> out;
    for (const auto& p : model.parents(child)) out.push_back(z_l[static_cast<std::size_t>(p.index - 1)]);
    return out;
}

}  // namespace detail

/// w(z_{l+1}, z_l): first partials of log p(z_{l+1,j} | z_l) in each child component,
/// then second partials.
inline Eigen::VectorXd w_vector(const HierModel& model, int level, std::span<const double> z_next,
                                std::span<const double> z_l, DerivativeMode mode = DerivativeMode::kAnalytic) {
    detail::require_latent_step(model, level);
    const int n = model.width(level + 1);
    if (static_cast<int>(z_next.size()) != n || static_cast<int>(z_l.size()) != model.width(level)) {
        throw InvalidArgument("w_vector: point dimensions do not match the level widths");
    }
    Eigen::VectorXd w(2 * n);
    for (int j = 1; j <= n; ++j) {
        const VariableId child{level + 1, j};
        const auto& spec = model.mechanism_or_throw(child);
        const auto pa = detail::parent_values(model, child, z_l);
        const double v = z_next[static_cast<std::size_t>(j - 1)];
        if (mode == DerivativeMode::kAnalytic) {
            const auto d = log_density_partials(spec, v, pa);
            w[j - 1] = d.first;
            w[n + j - 1] = d.second;
        } else {
            const double h = 1e-4 * conditional_scale(spec, pa);
            const double f0 = log_density(spec, v, pa);
            const double fp = log_density(spec, v + h, pa);
            const double fm = log_density(spec, v - h, pa);
            w[j - 1] = (fp - fm) / (2.0 * h);
            w[n + j - 1] = (fp - 2.0 * f0 + fm) / (h * h);
        }
    }
    return w;
}

/// Rows w(z_{l+1}, anchor_k) - w(z_{l+1}, anchor_0), k = 1..2n.
inline Eigen::MatrixXd variability_matrix(const HierModel& model, int level, std::span<const double> z_next,
                                          const std::vector<std::vector<double>>& anchors,
                                          DerivativeMode mode = DerivativeMode::kAnalytic) {
    const int n = model.width(level + 1);
    if (static_cast<int>(anchors.size()) != 2 * n + 1) {
        throw InvalidArgument("need " + std::to_string(2 * n + 1) + " anchor points");
    }
    const Eigen::VectorXd base = w_vector(model, level, z_next, anchors[0], mode);
    Eigen::MatrixXd out(2 * n, 2 * n);
    for (int k = 1; k <= 2 * n; ++k) {
        out.row(k - 1) = (w_vector(model, level, z_next, anchors[static_cast<std::size_t>(k)], mode) - base).transpose();
    }
    return out;
}

/// Upper bound on the rank of any difference matrix: the number of w-vector entries
/// that can change with z_l at all.
inline int structural_rank_bound(const HierModel& model, int level) {
    const int n = model.width(level + 1);
    int bound = 0;
    for (int j = 1; j <= n; ++j) {
        const auto& spec = model.mechanism_or_throw({level + 1, j});
        const std::size_t k = model.parents({level + 1, j}).size();
        const std::span<const double> c(spec.coefficients);
        auto any_nonzero = [](std::span<const double> s) {
            return std::any_of(s.begin(), s.end(), [](double x) { return x != 0.0; });
        };
        const bool location_varies = any_nonzero(c.subspan(1, k));
        const bool scale_varies =
            spec.family == MechanismFamily::kLocationScaleGaussian && any_nonzero(c.subspan(k + 2, k));
        if (location_varies || scale_varies) ++bound;
        if (scale_varies) ++bound;
    }
    return bound;
}

struct VariabilityOptions {
    int probes = 25;
    int budget = 200;  // anchor sets tried per probe
    std::uint64_t seed = 0;
    DerivativeMode mode = DerivativeMode::kAnalytic;
    double tolerance = -1.0;  // negative: 1e-8 analytic, 1e-4 finite differences
};

struct VariabilityReport {
    int level = 0;
    std::vector<double> probe;                 // z_{l+1} of the weakest probe
    std::vector<std::vector<double>> anchors;  // 2n+1 parent values of its best anchor set
    Eigen::MatrixXd difference;
    Eigen::VectorXd singular_values;
    int rank = 0;  // minimum over probes of the best rank found
    int required = 0;
    int structural_bound = 0;
    double tolerance = 0.0;
    int anchor_sets_tried = 0;
    bool pass = false;
    CheckStatus status = CheckStatus::kNotVerified;
};

/// Randomized search for anchor sets with a full-rank difference matrix, at several probe values of z_{l+1}.
inline VariabilityReport check_sufficient_variability(const HierModel& model, int level,
                                                      const VariabilityOptions& options = {}) {
    require_valid(model);
    detail::require_latent_step(model, level);
    const int n = model.width(level + 1);
    for (int j = 1; j <= n; ++j) {
        const auto& spec = model.mechanism_or_throw({level + 1, j});
        if (!has_smooth_density(spec)) {
            throw UnsupportedFamily(model.name({level + 1, j}) + ": unsupported family " +
                                    std::string(to_string(spec.family)) + " for variability");
        }
    }
    VariabilityReport report;
    report.level = level;
    report.required = 2 * n;
    report.structural_bound = structural_rank_bound(model, level);
    report.tolerance = options.tolerance >= 0.0 ? options.tolerance
                       : options.mode == DerivativeMode::kAnalytic ? 1e-8
                                                                   : 1e-4;

    // Realistic probe and anchor values: rows of a batch with every concept present.
    DiscreteCombination present(std::vector<int>(static_cast<std::size_t>(model.num_concepts()), 1));
    const std::size_t rows = static_cast<std::size_t>(options.probes) + 64;
    const auto batch = sample(model, present, rows, options.seed);
    const auto lower = batch.columns(model.level(level));
    const auto upper = batch.columns(model.level(level + 1));
    RngStream rng(options.seed, 0xA1u);

    report.rank = 2 * n + 1;
    for (int p = 0; p < options.probes; ++p) {
        std::vector<double> probe(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) probe[static_cast<std::size_t>(j)] = upper(p, j);
        int best = -1;
        std::vector<std::vector<double>> best_anchors;
        Eigen::MatrixXd best_diff;
        Eigen::VectorXd best_sv;
        for (int t = 0; t < options.budget; ++t) {
            std::vector<std::vector<double>> anchors;
            for (int k = 0; k <= 2 * n; ++k) {
                const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(lower.rows())));
                std::vector<double> a(static_cast<std::size_t>(lower.cols()));
                for (Eigen::Index c = 0; c < lower.cols(); ++c) a[static_cast<std::size_t>(c)] = lower(r, c);
                anchors.push_back(std::move(a));
            }
            ++report.anchor_sets_tried;
            const auto diff = variability_matrix(model, level, probe, anchors, options.mode);
            const auto sv = singular_values(diff);
            const int r = numerical_rank(sv, report.tolerance);
            if (r > best) {
                best = r;
                best_anchors = std::move(anchors);
                best_diff = diff;
                best_sv = sv;
            }
            if (best == 2 * n) break;
        }
        if (best < report.rank) {
            report.rank = best;
            report.probe = probe;
            report.anchors = best_anchors;
            report.difference = best_diff;
            report.singular_values = best_sv;
        }
    }
    report.pass = report.rank == report.required;
    report.status = report.pass                                    ? CheckStatus::kPass
                    : report.structural_bound < report.required ? CheckStatus::kViolated
                                                                  : CheckStatus::kNotVerified;
    return report;
}

// ---------------------------------------------------------------------------
// Conditional independence within a level.

enum class CiTest { kPartialCorrelation, kBinnedMutualInformation };

struct PairVerdict {
    VariableId u;
    VariableId v;
    double statistic = 0.0;
    double p_value = 1.0;
    bool independent = true;
};

struct CiOptions {
    CiTest test = CiTest::kPartialCorrelation;
    double alpha = 0.01;
    BinnedMiOptions mi;
    std::size_t min_rows = 1000;
};

/// Same-level pairs at `level`, each tested given all variables on the level below
/// (non-constant concept columns for level 1).
inline std::vector<PairVerdict> check_conditional_independence(const HierModel& model, const SampleBatch& batch,
                                                               int level, const CiOptions& options = {}) {
    if (level < 1 || level > model.num_levels()) throw InvalidArgument("level out of range");
    if (static_cast<std::size_t>(batch.rows()) < options.min_rows) {
        throw InsufficientSamples("conditional-independence check needs at least " +
                                  std::to_string(options.min_rows) + " rows");
    }
    std::vector<VariableId> cond;
    for (const auto& v : model.level(level - 1)) {
        const auto col = batch.column(v);
        if (col.maxCoeff() > col.minCoeff()) cond.push_back(v);
    }
    const Eigen::MatrixXd z = batch.columns(cond);
    std::vector<PairVerdict> out;
    const auto vars = model.level(level);
    for (std::size_t a = 0; a < vars.size(); ++a) {
        for (std::size_t b = a + 1; b < vars.size(); ++b) {
            const Eigen::VectorXd x = batch.column(vars[a]);
            const Eigen::VectorXd y = batch.column(vars[b]);
            const auto r = options.test == CiTest::kPartialCorrelation ? partial_correlation_test(x, y, z)
                                                                       : binned_mi_test(x, y, z, options.mi);
            out.push_back({vars[a], vars[b], r.statistic, r.p_value, r.p_value > options.alpha});
        }
    }
    return out;
}

/// Declared models factorize by construction: every pair is independent given the level below.
inline std::vector<PairVerdict> structural_conditional_independence(const HierModel& model, int level) {
    require_valid(model);
    if (level < 1 || level > model.num_levels()) throw InvalidArgument("level out of range");
    std::vector<PairVerdict> out;
    const auto vars = model.level(level);
    for (std::size_t a = 0; a < vars.size(); ++a) {
        for (std::size_t b = a + 1; b < vars.size(); ++b) out.push_back({vars[a], vars[b], 0.0, 1.0, true});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Invertibility of (z_l, exogenous noise below l) -> x.

struct InvertibilityOptions {
    int points = 50;
    std::uint64_t seed = 0;
    double tolerance = 1e-8;  // on the singular-value ratio
};

struct InvertibilityReport {
    int level = 0;
    int input_dim = 0;
    int output_dim = 0;
    bool dimension_ok = false;
    std::string message;
    Eigen::VectorXd worst_singular_values;  // at the point with the smallest ratio
    int rank_deficit = 0;                   // at that point
    double min_ratio = 0.0;
    int points_checked = 0;
    bool pass = false;
};

/// Number of exogenous noise inputs strictly below level l (latents on l+1..L, then x).
inline int exogenous_dim_below(const HierModel& model, int level) {
    int dim = 0;
    for (int l = level + 1; l <= model.num_levels(); ++l) dim += model.width(l);
    return dim + model.observation_dim() - static_cast<int>(model.parents(model.observation()).size());
}

inline InvertibilityReport check_invertibility(const HierModel& model, int level,
                                               const InvertibilityOptions& options = {}) {
    require_valid(model);
    if (level < 1 || level > model.num_levels()) throw InvalidArgument("level out of range");
    for (int l = level + 1; l <= model.num_levels(); ++l) {
        for (const auto& v : model.level(l)) {
            if (model.mechanism_or_throw(v).family == MechanismFamily::kPiecewiseTable) {
                throw UnsupportedFamily(model.name(v) + ": piecewise tables are not differentiable");
            }
        }
    }
    InvertibilityReport report;
    report.level = level;
    const int nz = model.width(level);
    const int ne = exogenous_dim_below(model, level);
    report.input_dim = nz + ne;
    report.output_dim = model.observation_dim();
    report.dimension_ok = report.output_dim >= report.input_dim;
    if (!report.dimension_ok) {
        report.message = "dimension deficit: d_x = " + std::to_string(report.output_dim) + " < n(z_l) + n(eps_l) = " +
                         std::to_string(report.input_dim);
        return report;
    }

    DiscreteCombination present(std::vector<int>(static_cast<std::size_t>(model.num_concepts()), 1));
    const auto batch = sample(model, present, static_cast<std::size_t>(options.points), options.seed);
    const auto z = batch.columns(model.level(level));
    RngStream rng(options.seed, 0xB1u);

    report.min_ratio = std::numeric_limits<double>::infinity();
    std::vector<double> input(static_cast<std::size_t>(report.input_dim));
    for (int p = 0; p < options.points; ++p) {
        for (int j = 0; j < nz; ++j) input[static_cast<std::size_t>(j)] = z(p, j);
        for (int j = 0; j < ne; ++j) input[static_cast<std::size_t>(nz + j)] = rng.gaussian();
        auto f = [&](const std::vector<double>& in) {
            return propagate_to_observation(model, level, std::span(in).first(static_cast<std::size_t>(nz)),
                                            std::span(in).subspan(static_cast<std::size_t>(nz)));
        };
        Eigen::MatrixXd jac(report.output_dim, report.input_dim);
        for (int c = 0; c < report.input_dim; ++c) {
            const double h = 1e-6 * std::max(1.0, std::abs(input[static_cast<std::size_t>(c)]));
            auto plus = input;
            auto minus = input;
            plus[static_cast<std::size_t>(c)] += h;
            minus[static_cast<std::size_t>(c)] -= h;
            const auto fp = f(plus);
            const auto fm = f(minus);
            for (int r = 0; r < report.output_dim; ++r) {
                jac(r, c) = (fp[static_cast<std::size_t>(r)] - fm[static_cast<std::size_t>(r)]) / (2.0 * h);
            }
        }
        const auto sv = singular_values(jac);
        const double ratio = sv[0] > 0.0 ? sv[sv.size() - 1] / sv[0] : 0.0;
        ++report.points_checked;
        if (ratio < report.min_ratio) {
            report.min_ratio = ratio;
            report.worst_singular_values = sv;
            report.rank_deficit = report.input_dim - numerical_rank(sv, options.tolerance);
        }
    }
    report.pass = report.rank_deficit == 0;
    report.message = report.pass ? "full column rank at every point"
                                 : "rank deficit " + std::to_string(report.rank_deficit);
    return report;
}

// ---------------------------------------------------------------------------
// Component-wise matching.

struct MatchResult {
    std::vector<int> permutation;    // permutation[i] = true component matched to candidate i
    std::vector<double> scores;      // |rank correlation| of each matched pair
    std::vector<double> monotone_r2; // monotone-fit R^2 of each matched pair
    std::vector<bool> invertible;
    Eigen::MatrixXd score_matrix;    // |rank correlation|, rows = candidates, cols = true components
    double threshold = 0.95;
    bool pass = false;
};

inline MatchResult match_components(const Eigen::MatrixXd& z_true, const Eigen::MatrixXd& z_hat,
                                    double threshold = 0.95) {
    if (z_true.rows() != z_hat.rows()) throw InvalidArgument("row counts differ");
    if (z_true.cols() != z_hat.cols()) throw InvalidArgument("component counts differ");
    const auto k = z_true.cols();
    MatchResult m;
    m.threshold = threshold;
    std::vector<Eigen::VectorXd> rt;
    std::vector<Eigen::VectorXd> rh;
    for (Eigen::Index j = 0; j < k; ++j) {
        rt.push_back(ranks(z_true.col(j)));
        rh.push_back(ranks(z_hat.col(j)));
    }
    m.score_matrix.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) m.score_matrix(i, j) = std::abs(pearson(rh[static_cast<std::size_t>(i)], rt[static_cast<std::size_t>(j)]));
    }
    m.permutation = max_score_assignment(m.score_matrix);
    m.pass = true;
    for (Eigen::Index i = 0; i < k; ++i) {
        const int j = m.permutation[static_cast<std::size_t>(i)];
        const double s = m.score_matrix(i, j);
        const double r2 = monotone_r2(z_true.col(j), z_hat.col(i));
        m.scores.push_back(s);
        m.monotone_r2.push_back(r2);
        m.invertible.push_back(r2 >= threshold);
        m.pass = m.pass && s >= threshold && r2 >= threshold;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Text reports.

inline std::string format_matrix(const Eigen::MatrixXd& m) {
    std::ostringstream out;
    out.precision(10);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out << "    ";
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
        out << "\n";
    }
    return out.str();
}

inline std::string to_text(const HierModel& model, const VariabilityReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "variability level " << r.level << ": " << to_string(r.status) << " rank " << r.rank << "/" << r.required
        << " (structural bound " << r.structural_bound << ", tolerance " << r.tolerance << ", anchor sets "
        << r.anchor_sets_tried << ")\n";
    out << "  probe";
    for (std::size_t j = 0; j < r.probe.size(); ++j) out << " " << model.name({r.level + 1, static_cast<int>(j) + 1}) << "=" << r.probe[j];
    out << "\n  anchors\n";
    for (const auto& a : r.anchors) {
        out << "   ";
        for (double v : a) out << " " << v;
        out << "\n";
    }
    out << "  difference matrix\n" << format_matrix(r.difference);
    out << "  singular values";
    for (Eigen::Index i = 0; i < r.singular_values.size(); ++i) out << " " << r.singular_values[i];
    out << "\n";
    return out.str();
}

inline std::string to_text(const InvertibilityReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "invertibility level " << r.level << ": " << (r.pass ? "PASS" : "VIOLATED") << " (" << r.message
        << "; inputs " << r.input_dim << ", outputs " << r.output_dim << ", points " << r.points_checked << ")\n";
    if (r.worst_singular_values.size() > 0) {
        out << "  smallest-ratio singular values";
        for (Eigen::Index i = 0; i < r.worst_singular_values.size(); ++i) out << " " << r.worst_singular_values[i];
        out << "\n";
    }
    return out.str();
}

inline std::string to_text(const HierModel& model, const std::vector<PairVerdict>& verdicts, double alpha) {
    std::ostringstream out;
    out.precision(10);
    for (const auto& v : verdicts) {
        out << "  " << model.name(v.u) << " _|_ " << model.name(v.v) << ": stat " << v.statistic << " p " << v.p_value
            << (v.independent ? " independent" : " dependent") << " at alpha " << alpha << "\n";
    }
    return out.str();
}

inline std::string to_text(const MatchResult& m) {
    std::ostringstream out;
    out.precision(10);
    out << "match " << (m.pass ? "PASS" : "FAIL") << " threshold " << m.threshold << "\n  assignment";
    for (std::size_t i = 0; i < m.permutation.size(); ++i) out << " " << i + 1 << "->" << m.permutation[i] + 1;
    out << "\n  scores";
    for (double s : m.scores) out << " " << s;
    out << "\n  monotone R2";
    for (double s : m.monotone_r2) out << " " << s;
    out << "\n  score matrix\n" << format_matrix(m.score_matrix);
    return out.str();
}

}  // namespace hiercomp
