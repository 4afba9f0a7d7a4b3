#pragma once

// Evaluation of mechanisms and of their conditional log-densities.

#include <algorithm>
#include <cmath>
#include <string>
#include <numbers>
#include <span>
#include <vector>

#include "hiercomp/errors.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/rng.hpp"

namespace hiercomp {

/// Maps a uniform draw to the standard noise of a family.
inline double standard_noise(NoiseFamily family, double u) {
    return family == NoiseFamily::kGaussian ? normal_quantile(u) : 2.0 * u - 1.0;
}

/// Bin of `value` among ascending `edges`: bin j covers [edges[j-1], edges[j]).
inline std::size_t table_bin(const std::vector<double>& edges, double value) {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) -
                                    edges.begin());
}

inline std::size_t table_cell(const MechanismSpec& spec, std::span<const double> parents) {
    std::size_t cell = 0;
    for (std::size_t k = 0; k < spec.breaks.size(); ++k) {
        cell = cell * (spec.breaks[k].size() + 1) + table_bin(spec.breaks[k], parents[k]);
    }
    return cell;
}

inline double dot_weights(std::span<const double> w, std::span<const double> p) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += w[k] * p[k];
    return s;
}

/// Location of v given its parents (the value at zero noise).
inline double conditional_location(const MechanismSpec& spec, std::span<const double> parents) {
    const std::span<const double> c(spec.coefficients);
    switch (spec.family) {
        case MechanismFamily::kLinearGaussian:
        case MechanismFamily::kLocationScaleGaussian:
            return c[0] + dot_weights(c.subspan(1, parents.size()), parents);
        case MechanismFamily::kAffineTanh:
            return std::tanh(c[0] + dot_weights(c.subspan(1, parents.size()), parents));
        case MechanismFamily::kPiecewiseTable: return c[table_cell(spec, parents)];
    }
    return 0.0;
}

/// Multiplier of the standard noise.
inline double conditional_scale(const MechanismSpec& spec, std::span<const double> parents) {
    if (spec.family != MechanismFamily::kLocationScaleGaussian) return spec.noise_scale;
    const std::span<const double> c(spec.coefficients);
    const std::size_t k = parents.size();
    const double log_var = c[k + 1] + dot_weights(c.subspan(k + 2, k), parents);
    return spec.noise_scale * std::exp(0.5 * log_var);
}

inline double apply_mechanism(const MechanismSpec& spec, std::span<const double> parents,
                              double noise) {
    return conditional_location(spec, parents) + conditional_scale(spec, parents) * noise;
}

/// Whether log p(v | pa) is smooth in v and in pa.
inline bool has_smooth_density(const MechanismSpec& spec) {
    return spec.family != MechanismFamily::kPiecewiseTable && spec.noise == NoiseFamily::kGaussian;
}

/// log p(v | pa) for smooth gaussian families.
inline double log_density(const MechanismSpec& spec, double value, std::span<const double> parents) {
    if (!has_smooth_density(spec)) {
        throw UnsupportedFamily(std::string("no smooth density for ") +
                                std::string(to_string(spec.family)) + " with " +
                                std::string(to_string(spec.noise)) + " noise");
    }
    const double mu = conditional_location(spec, parents);
    const double sigma = conditional_scale(spec, parents);
    const double r = (value - mu) / sigma;
    return -0.5 * r * r - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

struct LogDensityPartials {
    double first = 0.0;   // d/dv log p(v | pa)
    double second = 0.0;  // d^2/dv^2 log p(v | pa)
};

/// Closed-form partials of the gaussian log-density with respect to the child value.
inline LogDensityPartials log_density_partials(const MechanismSpec& spec, double value,
                                               std::span<const double> parents) {
    if (!has_smooth_density(spec)) {
        throw UnsupportedFamily(std::string("no smooth density for ") +
                                std::string(to_string(spec.family)) + " with " +
                                std::string(to_string(spec.noise)) + " noise");
    }
    const double mu = conditional_location(spec, parents);
    const double sigma = conditional_scale(spec, parents);
    const double var = sigma * sigma;
    return {-(value - mu) / var, -1.0 / var};
}

}  // namespace hiercomp
