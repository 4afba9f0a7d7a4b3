#pragma once

// Correlation measures, conditional-independence tests and isotonic regression.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "hiercomp/errors.hpp"
#include "hiercomp/rng.hpp"

namespace hiercomp {

inline double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("correlation needs two equal-length columns");
    const Eigen::VectorXd a = x.array() - x.mean();
    const Eigen::VectorXd b = y.array() - y.mean();
    const double sa = a.norm();
    const double sb = b.norm();
    if (sa == 0.0 || sb == 0.0) throw DegenerateTest("correlation undefined for a constant column");
    return std::clamp(a.dot(b) / (sa * sb), -1.0, 1.0);
}

/// Ranks starting at 1, ties receive their average rank.
inline Eigen::VectorXd ranks(const Eigen::VectorXd& x) {
    const auto n = static_cast<std::size_t>(x.size());
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
    Eigen::VectorXd r(x.size());
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return pearson(ranks(x), ranks(y));
}

/// Residual of y after least-squares regression on [1, Z].
inline Eigen::VectorXd regress_out(const Eigen::VectorXd& y, const Eigen::MatrixXd& z) {
    Eigen::MatrixXd design(y.size(), z.cols() + 1);
    design.col(0).setOnes();
    if (z.cols() > 0) design.rightCols(z.cols()) = z;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols()) throw DegenerateTest("singular conditioning covariance");
    return y - design * qr.solve(y);
}

struct CiResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Partial correlation of x and y given Z with a Fisher z p-value.
inline CiResult partial_correlation_test(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& z) {
    const double n = static_cast<double>(x.size());
    const double k = static_cast<double>(z.cols());
    if (n - k - 3.0 < 1.0) throw InsufficientSamples("too few rows for a partial-correlation test");
    const double r = pearson(regress_out(x, z), regress_out(y, z));
    const double rc = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
    const double stat = std::atanh(rc) * std::sqrt(n - k - 3.0);
    return {r, std::erfc(std::abs(stat) / std::sqrt(2.0))};
}

/// Equal-frequency bin index of each value.
inline std::vector<int> quantile_bins(const Eigen::VectorXd& x, int bins) {
    const Eigen::VectorXd r = ranks(x);
    const double n = static_cast<double>(x.size());
    std::vector<int> out(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out[static_cast<std::size_t>(i)] = std::min(bins - 1, static_cast<int>((r[i] - 1.0) / n * bins));
    }
    return out;
}

namespace detail {

inline double binned_cmi(const std::vector<int>& xb, const std::vector<int>& yb, const std::vector<int>& strata,
                         int bins, int num_strata) {
    const std::size_t cells = static_cast<std::size_t>(bins * bins);
    std::vector<double> joint(static_cast<std::size_t>(num_strata) * cells, 0.0);
    std::vector<double> px(static_cast<std::size_t>(num_strata * bins), 0.0);
    std::vector<double> py(static_cast<std::size_t>(num_strata * bins), 0.0);
    std::vector<double> pz(static_cast<std::size_t>(num_strata), 0.0);
    for (std::size_t i = 0; i < xb.size(); ++i) {
        const auto s = static_cast<std::size_t>(strata[i]);
        joint[s * cells + static_cast<std::size_t>(xb[i] * bins + yb[i])] += 1.0;
        px[s * static_cast<std::size_t>(bins) + static_cast<std::size_t>(xb[i])] += 1.0;
        py[s * static_cast<std::size_t>(bins) + static_cast<std::size_t>(yb[i])] += 1.0;
        pz[s] += 1.0;
    }
    const double n = static_cast<double>(xb.size());
    double cmi = 0.0;
    for (int s = 0; s < num_strata; ++s) {
        const auto su = static_cast<std::size_t>(s);
        if (pz[su] == 0.0) continue;
        for (int a = 0; a < bins; ++a) {
            for (int b = 0; b < bins; ++b) {
                const double nxy = joint[su * cells + static_cast<std::size_t>(a * bins + b)];
                if (nxy == 0.0) continue;
                const double nx = px[su * static_cast<std::size_t>(bins) + static_cast<std::size_t>(a)];
                const double ny = py[su * static_cast<std::size_t>(bins) + static_cast<std::size_t>(b)];
                cmi += nxy / n * std::log(nxy * pz[su] / (nx * ny));
            }
        }
    }
    return cmi;
}

}  // namespace detail

struct BinnedMiOptions {
    int bins = 4;
    int permutations = 200;
    std::uint64_t seed = 0;
};

/// Binned conditional mutual information with a conditional-permutation p-value:
/// y is shuffled within each stratum of the binned conditioning set.
inline CiResult binned_mi_test(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                               const BinnedMiOptions& options = {}) {
    if (x.size() < 2 || x.size() != y.size()) throw InvalidArgument("binned MI needs equal-length columns");
    const int bins = options.bins;
    const auto xb = quantile_bins(x, bins);
    auto yb = quantile_bins(y, bins);
    std::vector<int> strata(static_cast<std::size_t>(x.size()), 0);
    int num_strata = 1;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const auto zb = quantile_bins(z.col(c), bins);
        for (std::size_t i = 0; i < strata.size(); ++i) strata[i] = strata[i] * bins + zb[i];
        num_strata *= bins;
    }
    const double observed = detail::binned_cmi(xb, yb, strata, bins, num_strata);

    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_strata));
    for (std::size_t i = 0; i < strata.size(); ++i) members[static_cast<std::size_t>(strata[i])].push_back(i);
    RngStream rng(options.seed, 0xC1u);
    int exceed = 0;
    auto shuffled = yb;
    for (int p = 0; p < options.permutations; ++p) {
        for (const auto& m : members) {
            for (std::size_t k = m.size(); k > 1; --k) {
                const auto j = static_cast<std::size_t>(rng.below(k));
                std::swap(shuffled[m[k - 1]], shuffled[m[j]]);
            }
        }
        if (detail::binned_cmi(xb, shuffled, strata, bins, num_strata) >= observed) ++exceed;
    }
    return {observed, (1.0 + exceed) / (1.0 + options.permutations)};
}

/// Pool-adjacent-violators fit of a non-decreasing function; returns fitted values in input order.
inline Eigen::VectorXd isotonic_fit(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const auto n = static_cast<std::size_t>(x.size());
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
    std::vector<double> mean;
    std::vector<double> weight;
    std::vector<std::size_t> length;
    for (std::size_t k = 0; k < n; ++k) {
        mean.push_back(y[order[k]]);
        weight.push_back(1.0);
        length.push_back(1);
        while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
            const double w = weight[weight.size() - 2] + weight.back();
            const double m = (mean[mean.size() - 2] * weight[weight.size() - 2] + mean.back() * weight.back()) / w;
            const std::size_t len = length[length.size() - 2] + length.back();
            mean.pop_back();
            weight.pop_back();
            length.pop_back();
            mean.back() = m;
            weight.back() = w;
            length.back() = len;
        }
    }
    Eigen::VectorXd fit(x.size());
    std::size_t k = 0;
    for (std::size_t b = 0; b < mean.size(); ++b) {
        for (std::size_t j = 0; j < length[b]; ++j) fit[order[k++]] = mean[b];
    }
    return fit;
}

/// Best R^2 of a monotone (increasing or decreasing) fit of y on x.
inline double monotone_r2(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const Eigen::VectorXd centered = y.array() - y.mean();
    const double sst = centered.squaredNorm();
    if (sst == 0.0) throw DegenerateTest("monotone fit undefined for a constant column");
    const double up = (y - isotonic_fit(x, y)).squaredNorm();
    const Eigen::VectorXd neg = -x;
    const double down = (y - isotonic_fit(neg, y)).squaredNorm();
    return 1.0 - std::min(up, down) / sst;
}

}  // namespace hiercomp
