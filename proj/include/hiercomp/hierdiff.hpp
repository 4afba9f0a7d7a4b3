#pragma once

// Conditioning kernels: the interpolation schedule, global/local attention blending,
// DICE overlap and the pairwise sparsity penalty with its analytic gradient.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiercomp/errors.hpp"

namespace hiercomp {

using AttentionMap = Eigen::MatrixXd;

struct AttentionStack {
    AttentionMap global;               // A_{T-1}
    std::vector<AttentionMap> locals;  // A_0^{(m)}, m = 1..M
    int t = 0;
    int total_steps = 2;
};

/// s(t) = cos(pi t / (2 (T - 1))), with the endpoints returned exactly.
inline double schedule(int t, int total_steps) {
    if (total_steps < 2) throw InvalidArgument("schedule needs T >= 2");
    if (t < 0 || t > total_steps - 1) throw InvalidArgument("step " + std::to_string(t) + " outside [0, T-1]");
    if (t == 0) return 1.0;
    if (t == total_steps - 1) return 0.0;
    return std::cos(std::numbers::pi * t / (2.0 * (total_steps - 1)));
}

namespace detail {
inline void require_same_shape(const AttentionMap& a, const AttentionMap& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("attention maps differ in shape");
}
}  // namespace detail

/// Non-negative and finite.
inline bool is_attention_map(const AttentionMap& m) {
    return m.allFinite() && (m.size() == 0 || m.minCoeff() >= 0.0);
}

/// A_t = (1 - s(t)) A_global + s(t)/M sum_m A_local^{(m)}.
inline AttentionMap interpolate_attention(const AttentionStack& stack) {
    if (stack.locals.empty()) throw InvalidArgument("need at least one local map");
    for (const auto& l : stack.locals) detail::require_same_shape(stack.global, l);
    const double s = schedule(stack.t, stack.total_steps);
    if (s == 0.0) return stack.global;
    AttentionMap sum = stack.locals.front();
    for (std::size_t m = 1; m < stack.locals.size(); ++m) sum += stack.locals[m];
    const double count = static_cast<double>(stack.locals.size());
    if (s == 1.0) return sum / count;
    return (1.0 - s) * stack.global + (s / count) * sum;
}

/// Numerator convention of the overlap.
enum class OverlapMode {
    kElementwise,  // sum_ij H1_ij H2_ij
    kStrictTrace,  // tr(H1 H2), square maps only
};

/// 2 <H1, H2> / (|H1|_1 + |H2|_1).
inline double dice_overlap(const AttentionMap& h1, const AttentionMap& h2,
                           OverlapMode mode = OverlapMode::kElementwise) {
    detail::require_same_shape(h1, h2);
    const double denom = h1.cwiseAbs().sum() + h2.cwiseAbs().sum();
    if (denom == 0.0) throw DegenerateTest("overlap undefined for two all-zero maps");
    double num = 0.0;
    if (mode == OverlapMode::kElementwise) {
        num = h1.cwiseProduct(h2).sum();
    } else {
        if (h1.rows() != h1.cols()) throw InvalidArgument("strict trace needs square maps");
        num = (h1 * h2).trace();
    }
    return 2.0 * num / denom;
}

/// L_n = sum over ordered pairs m != n of D(H^(m), H^(n)).
inline double sparsity_loss(const std::vector<AttentionMap>& locals, OverlapMode mode = OverlapMode::kElementwise) {
    if (locals.empty()) throw InvalidArgument("need at least one local map");
    for (const auto& l : locals) detail::require_same_shape(locals.front(), l);
    double total = 0.0;
    for (std::size_t m = 0; m < locals.size(); ++m) {
        for (std::size_t n = 0; n < locals.size(); ++n) {
            if (m != n) total += dice_overlap(locals[m], locals[n], mode);
        }
    }
    return total;
}

/// L = L_d + lambda L_n.
inline double combined_loss(double denoising_loss, const std::vector<AttentionMap>& locals, double lambda,
                            OverlapMode mode = OverlapMode::kElementwise) {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
    if (!std::isfinite(denoising_loss) || !std::isfinite(lambda)) throw InvalidArgument("non-finite loss input");
    if (lambda == 0.0) return denoising_loss;
    return denoising_loss + lambda * sparsity_loss(locals, mode);
}

/// Default sparsity weight.
inline constexpr double kDefaultSparsityWeight = 1e-4;

/// dL_n / dH^(m) for every local map.
///
/// With S = <A, B> and N = |A|_1 + |B|_1, dD(A, B)/dA_ij = 2 dS/dA_ij / N - 2 S / N^2,
/// where dS/dA = B (elementwise) or B^T (strict trace). D is symmetric in its
/// arguments, so each unordered pair contributes twice.
inline std::vector<AttentionMap> grad_sparsity_loss(const std::vector<AttentionMap>& locals,
                                                    OverlapMode mode = OverlapMode::kElementwise) {
    if (locals.empty()) throw InvalidArgument("need at least one local map");
    for (const auto& l : locals) detail::require_same_shape(locals.front(), l);
    std::vector<AttentionMap> grads;
    for (const auto& l : locals) grads.push_back(AttentionMap::Zero(l.rows(), l.cols()));
    for (std::size_t m = 0; m < locals.size(); ++m) {
        for (std::size_t n = m + 1; n < locals.size(); ++n) {
            const auto& a = locals[m];
            const auto& b = locals[n];
            const double denom = a.cwiseAbs().sum() + b.cwiseAbs().sum();
            if (denom == 0.0) throw DegenerateTest("overlap undefined for two all-zero maps");
            const double s = mode == OverlapMode::kElementwise ? a.cwiseProduct(b).sum() : (a * b).trace();
            const AttentionMap sign_a = a.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
            const AttentionMap sign_b = b.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
            const AttentionMap ds_da = mode == OverlapMode::kElementwise ? b : AttentionMap(b.transpose());
            const AttentionMap ds_db = mode == OverlapMode::kElementwise ? a : AttentionMap(a.transpose());
            grads[m] += 2.0 * (2.0 * ds_da / denom - (2.0 * s / (denom * denom)) * sign_a);
            grads[n] += 2.0 * (2.0 * ds_db / denom - (2.0 * s / (denom * denom)) * sign_b);
        }
    }
    return grads;
}

/// Mean of D over unordered pairs of local maps (0 when M = 1).
inline double mean_pairwise_dice(const std::vector<AttentionMap>& locals, OverlapMode mode = OverlapMode::kElementwise) {
    if (locals.size() < 2) return 0.0;
    const double pairs = static_cast<double>(locals.size() * (locals.size() - 1));
    return sparsity_loss(locals, mode) / pairs;
}

}  // namespace hiercomp
