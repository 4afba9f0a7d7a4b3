#pragma once

// Toy denoiser with cross-attention conditioning.
//
// A frozen random "text encoder" maps a prompt (one state per concept: absent, present or
// unspecified) to one token per concept. The global prompt states every concept of d. Local
// prompt m mentions concept m alone when it is present and is the empty prompt otherwise; a
// last local prompt is always empty. Each pixel queries
// every prompt's tokens plus a learned null token. The attention outputs are blended with
// interpolate_attention (time dependence on) or the global output is used alone, then a
// per-pixel MLP over [3x3 patch, step embedding, attention output] predicts the noise.
//
// The attention map of a local prompt is the mass a pixel puts on that prompt's tokens,
// 1 - a_null, laid out on the grid.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiercomp/errors.hpp"
#include "hiercomp/hierdiff.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/rng.hpp"
#include "hiercomp/toy_scene.hpp"

namespace hiercomp::toy {

enum PromptState : int { kAbsent = 0, kPresent = 1, kUnspecified = 2 };

struct PromptEncoder {
    int concepts = 2;
    int token_dim = 8;
    Eigen::MatrixXd w1, b1, w2, b2;

    /// One row per concept.
    Eigen::MatrixXd encode(const std::vector<int>& states) const {
        if (states.size() != static_cast<std::size_t>(concepts)) throw InvalidArgument("prompt length mismatch");
        Eigen::VectorXd x = Eigen::VectorXd::Zero(3 * concepts);
        for (int i = 0; i < concepts; ++i) {
            const int s = states[static_cast<std::size_t>(i)];
            if (s < 0 || s > 2) throw InvalidArgument("bad prompt state");
            x[3 * i + s] = 1.0;
        }
        const Eigen::VectorXd h = (w1 * x + b1).array().tanh();
        const Eigen::VectorXd out = (w2 * h + b2).array().tanh();
        Eigen::MatrixXd tokens(concepts, token_dim);
        for (int i = 0; i < concepts; ++i) tokens.row(i) = out.segment(i * token_dim, token_dim).transpose();
        return tokens;
    }
};

inline PromptEncoder make_encoder(int concepts, std::uint64_t seed, int token_dim = 8, int hidden = 16) {
    PromptEncoder e;
    e.concepts = concepts;
    e.token_dim = token_dim;
    RngStream rng(seed, 0xE5Cu);
    auto fill = [&](Eigen::Index r, Eigen::Index c, double scale) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
        return m;
    };
    e.w1 = fill(hidden, 3 * concepts, 1.0);
    e.b1 = fill(hidden, 1, 0.5);
    e.w2 = fill(concepts * token_dim, hidden, 1.5 / std::sqrt(static_cast<double>(hidden)));
    e.b2 = fill(concepts * token_dim, 1, 0.5);
    return e;
}

struct Conditioning {
    Eigen::MatrixXd global;
    std::vector<Eigen::MatrixXd> locals;
};

inline Conditioning conditioning_for(const PromptEncoder& enc, const DiscreteCombination& d) {
    if (d.size() != static_cast<std::size_t>(enc.concepts)) throw InvalidArgument("combination length mismatch");
    Conditioning c;
    c.global = enc.encode(d.values);
    for (int m = 0; m <= enc.concepts; ++m) {
        std::vector<int> s(static_cast<std::size_t>(enc.concepts), kUnspecified);
        if (m < enc.concepts && d[static_cast<std::size_t>(m)] == 1) s[static_cast<std::size_t>(m)] = kPresent;
        c.locals.push_back(enc.encode(s));
    }
    return c;
}

/// Linear betas on [beta_first, beta_last] over T steps.
struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    int steps() const { return static_cast<int>(beta.size()); }
};

inline NoiseSchedule make_schedule(int steps, double beta_first = 0.05, double beta_last = 0.7) {
    if (steps < 2) throw InvalidArgument("need at least two diffusion steps");
    NoiseSchedule s;
    double prod = 1.0;
    for (int k = 0; k < steps; ++k) {
        const double b = beta_first + (beta_last - beta_first) * k / (steps - 1);
        prod *= 1.0 - b;
        s.beta.push_back(b);
        s.alpha_bar.push_back(prod);
    }
    return s;
}

struct DenoiserParams {
    Eigen::MatrixXd pos, wq, bq, wk, bk, wv, bv, knull, vnull, w1, b1, w2, b2, w3, b3;

    using Field = Eigen::MatrixXd DenoiserParams::*;
    static constexpr std::array<std::pair<const char*, Field>, 15> kFields{{
        {"pos", &DenoiserParams::pos},     {"wq", &DenoiserParams::wq},   {"bq", &DenoiserParams::bq},
        {"wk", &DenoiserParams::wk},       {"bk", &DenoiserParams::bk},   {"wv", &DenoiserParams::wv},
        {"bv", &DenoiserParams::bv},       {"knull", &DenoiserParams::knull}, {"vnull", &DenoiserParams::vnull},
        {"w1", &DenoiserParams::w1},       {"b1", &DenoiserParams::b1},   {"w2", &DenoiserParams::w2},
        {"b2", &DenoiserParams::b2},       {"w3", &DenoiserParams::w3},   {"b3", &DenoiserParams::b3},
    }};

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [name, f] : kFields) n += static_cast<std::size_t>((this->*f).size());
        return n;
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(count()));
        Eigen::Index at = 0;
        for (const auto& [name, f] : kFields) {
            const auto& m = this->*f;
            out.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
            at += m.size();
        }
        return out;
    }

    void assign(const Eigen::VectorXd& flat) {
        if (static_cast<std::size_t>(flat.size()) != count()) throw InvalidArgument("parameter vector length mismatch");
        Eigen::Index at = 0;
        for (const auto& [name, f] : kFields) {
            auto& m = this->*f;
            Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
            at += m.size();
        }
    }

    DenoiserParams zeros_like() const {
        DenoiserParams z = *this;
        for (const auto& [name, f] : kFields) (z.*f).setZero();
        return z;
    }
};

struct DenoiserShape {
    int size = 16;
    int attention = 8;
    int token = 8;
    int hidden = 48;

    static constexpr int kPatch = 9;
    static constexpr int kTime = 8;

    int pixels() const { return size * size; }
};

inline DenoiserParams init_params(const DenoiserShape& shape, std::uint64_t seed) {
    RngStream rng(seed, 0x1417u);
    auto fill = [&](Eigen::Index r, Eigen::Index c, double scale) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
        return m;
    };
    const int c = shape.attention;
    const int zin = DenoiserShape::kPatch + DenoiserShape::kTime;
    const int min = zin + c;
    DenoiserParams p;
    p.pos = fill(shape.pixels(), c, 1.0);
    p.wq = fill(c, zin, 1.0 / std::sqrt(static_cast<double>(zin)));
    p.bq = Eigen::MatrixXd::Zero(1, c);
    p.wk = fill(c, shape.token, 1.0 / std::sqrt(static_cast<double>(shape.token)));
    p.bk = Eigen::MatrixXd::Zero(1, c);
    p.wv = fill(c, shape.token, 1.0 / std::sqrt(static_cast<double>(shape.token)));
    p.bv = Eigen::MatrixXd::Zero(1, c);
    p.knull = fill(1, c, 1.0);
    p.vnull = fill(1, c, 1.0);
    p.w1 = fill(shape.hidden, min, 1.0 / std::sqrt(static_cast<double>(min)));
    p.b1 = Eigen::MatrixXd::Zero(1, shape.hidden);
    p.w2 = fill(shape.hidden, shape.hidden, 1.0 / std::sqrt(static_cast<double>(shape.hidden)));
    p.b2 = Eigen::MatrixXd::Zero(1, shape.hidden);
    p.w3 = fill(1, shape.hidden, 0.1 / std::sqrt(static_cast<double>(shape.hidden)));
    p.b3 = Eigen::MatrixXd::Zero(1, 1);
    return p;
}

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// 3x3 neighbourhoods, zero padded, one row per pixel.
inline Eigen::MatrixXd patches(const Eigen::VectorXd& x, int size) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(size * size, DenoiserShape::kPatch);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr;
                    const int cc = c + dc;
                    if (rr < 0 || rr >= size || cc < 0 || cc >= size) continue;
                    out(r * size + c, 3 * (dr + 1) + (dc + 1)) = x[rr * size + cc];
                }
            }
        }
    }
    return out;
}

/// Sinusoidal embedding of step k in 1..T.
inline Eigen::RowVectorXd step_embedding(int k, int steps) {
    Eigen::RowVectorXd e(DenoiserShape::kTime);
    const double phase = static_cast<double>(k) / steps;
    for (int j = 0; j < DenoiserShape::kTime / 2; ++j) {
        const double w = std::numbers::pi * std::pow(2.0, j);
        e[2 * j] = std::sin(w * phase);
        e[2 * j + 1] = std::cos(w * phase);
    }
    return e;
}

}  // namespace detail

struct SlotCache {
    Eigen::MatrixXd tokens, keys, vpre, values, weights, out;
};

struct ForwardPass {
    int step = 1;
    double s = 0.0;
    bool time_dependent = true;
    Eigen::MatrixXd zq, q, z, h1, h2;
    Eigen::VectorXd eps;
    std::vector<SlotCache> slots;  // global first, then locals
    std::vector<AttentionMap> local_maps;
};

/// Noise prediction for x_k at step k in 1..T. The interpolation step index is t = k - 1,
/// so the noisiest step uses the global prompt alone.
inline ForwardPass forward(const DenoiserParams& p, const DenoiserShape& shape, const Eigen::VectorXd& x, int k,
                           int steps, const Conditioning& cond, bool time_dependent) {
    if (x.size() != shape.pixels()) throw InvalidArgument("image size does not match the denoiser");
    if (k < 1 || k > steps) throw InvalidArgument("step outside 1..T");
    const int n = shape.pixels();
    const double scale = 1.0 / std::sqrt(static_cast<double>(shape.attention));
    ForwardPass f;
    f.step = k;
    f.time_dependent = time_dependent;
    const Eigen::MatrixXd patch = detail::patches(x, shape.size);
    const Eigen::RowVectorXd temb = detail::step_embedding(k, steps);
    f.zq.resize(n, DenoiserShape::kPatch + DenoiserShape::kTime);
    f.zq << patch, temb.replicate(n, 1);
    f.q = p.pos + f.zq * p.wq.transpose();
    f.q.rowwise() += p.bq.row(0);

    auto attend = [&](const Eigen::MatrixXd& tokens) {
        SlotCache sc;
        sc.tokens = tokens;
        const auto nt = tokens.rows();
        sc.keys.resize(nt + 1, shape.attention);
        sc.keys.topRows(nt) = tokens * p.wk.transpose();
        sc.keys.topRows(nt).rowwise() += p.bk.row(0);
        sc.keys.row(nt) = p.knull.row(0);
        sc.vpre.resize(nt + 1, shape.attention);
        sc.vpre.topRows(nt) = tokens * p.wv.transpose();
        sc.vpre.topRows(nt).rowwise() += p.bv.row(0);
        sc.vpre.row(nt) = p.vnull.row(0);
        sc.values = sc.vpre.unaryExpr(&detail::softplus);
        Eigen::MatrixXd scores = (f.q * sc.keys.transpose()) * scale;
        const Eigen::VectorXd mx = scores.rowwise().maxCoeff();
        scores.colwise() -= mx;
        sc.weights = scores.array().exp();
        const Eigen::VectorXd sum = sc.weights.rowwise().sum();
        sc.weights.array().colwise() /= sum.array();
        sc.out = sc.weights * sc.values;
        return sc;
    };

    f.slots.push_back(attend(cond.global));
    for (const auto& l : cond.locals) f.slots.push_back(attend(l));

    AttentionMap a;
    if (time_dependent) {
        AttentionStack stack;
        stack.global = f.slots[0].out;
        for (std::size_t m = 1; m < f.slots.size(); ++m) stack.locals.push_back(f.slots[m].out);
        stack.t = k - 1;
        stack.total_steps = steps;
        f.s = schedule(stack.t, steps);
        a = interpolate_attention(stack);
    } else {
        a = f.slots[0].out;
    }
    for (std::size_t m = 1; m < f.slots.size(); ++m) {
        const auto& w = f.slots[m].weights;
        AttentionMap h(shape.size, shape.size);
        for (int i = 0; i < n; ++i) h(i / shape.size, i % shape.size) = 1.0 - w(i, w.cols() - 1);
        f.local_maps.push_back(std::move(h));
    }

    f.z.resize(n, f.zq.cols() + shape.attention);
    f.z << f.zq, a;
    f.h1 = f.z * p.w1.transpose();
    f.h1.rowwise() += p.b1.row(0);
    f.h1 = f.h1.array().tanh();
    f.h2 = f.h1 * p.w2.transpose();
    f.h2.rowwise() += p.b2.row(0);
    f.h2 = f.h2.array().tanh();
    f.eps = f.h2 * p.w3.transpose();
    f.eps.array() += p.b3(0, 0);
    return f;
}

/// Accumulates into `g` the gradient given dL/d eps and dL/dH for each local map
/// (empty `d_maps` means the maps do not enter the loss).
inline void backward(const DenoiserParams& p, const DenoiserShape& shape, const ForwardPass& f,
                     const Eigen::VectorXd& d_eps, const std::vector<AttentionMap>& d_maps, DenoiserParams& g) {
    const int n = shape.pixels();
    const double scale = 1.0 / std::sqrt(static_cast<double>(shape.attention));
    g.w3 += d_eps.transpose() * f.h2;
    g.b3(0, 0) += d_eps.sum();
    const Eigen::MatrixXd dh2 = (d_eps * p.w3).array() * (1.0 - f.h2.array().square());
    g.w2 += dh2.transpose() * f.h1;
    g.b2 += dh2.colwise().sum();
    const Eigen::MatrixXd dh1 = (dh2 * p.w2).array() * (1.0 - f.h1.array().square());
    g.w1 += dh1.transpose() * f.z;
    g.b1 += dh1.colwise().sum();
    const Eigen::MatrixXd dz = dh1 * p.w1;
    const Eigen::MatrixXd da = dz.rightCols(shape.attention);

    const std::size_t locals = f.slots.size() - 1;
    std::vector<Eigen::MatrixXd> dout(f.slots.size());
    if (!f.time_dependent) {
        dout[0] = da;
        for (std::size_t m = 1; m < f.slots.size(); ++m) dout[m] = Eigen::MatrixXd::Zero(n, shape.attention);
    } else {
        dout[0] = (1.0 - f.s) * da;
        for (std::size_t m = 1; m < f.slots.size(); ++m) dout[m] = (f.s / static_cast<double>(locals)) * da;
    }

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n, shape.attention);
    for (std::size_t m = 0; m < f.slots.size(); ++m) {
        const auto& sc = f.slots[m];
        const auto nt = sc.tokens.rows();
        Eigen::MatrixXd dw = dout[m] * sc.values.transpose();
        if (m > 0 && !d_maps.empty()) {
            const auto& dh = d_maps[m - 1];
            for (int i = 0; i < n; ++i) dw(i, nt) -= dh(i / shape.size, i % shape.size);
        }
        const Eigen::MatrixXd dvalues = sc.weights.transpose() * dout[m];
        const Eigen::VectorXd inner = (dw.array() * sc.weights.array()).rowwise().sum();
        Eigen::MatrixXd dscores = sc.weights.array() * (dw.colwise() - inner).array();
        dscores *= scale;
        dq += dscores * sc.keys;
        const Eigen::MatrixXd dkeys = dscores.transpose() * f.q;
        g.wk += dkeys.topRows(nt).transpose() * sc.tokens;
        g.bk += dkeys.topRows(nt).colwise().sum();
        g.knull += dkeys.row(nt);
        const Eigen::MatrixXd dvpre = dvalues.array() * sc.vpre.unaryExpr(&detail::sigmoid).array();
        g.wv += dvpre.topRows(nt).transpose() * sc.tokens;
        g.bv += dvpre.topRows(nt).colwise().sum();
        g.vnull += dvpre.row(nt);
    }
    g.pos += dq;
    g.wq += dq.transpose() * f.zq;
    g.bq += dq.colwise().sum();
}

struct ToyModel {
    DenoiserShape shape;
    DenoiserParams params;
    PromptEncoder encoder;
    NoiseSchedule schedule;
    bool time_dependent = true;

    Eigen::VectorXd predict(const Eigen::VectorXd& x, int k, const DiscreteCombination& d) const {
        return forward(params, shape, x, k, schedule.steps(), conditioning_for(encoder, d), time_dependent).eps;
    }
};

/// Ancestral sampling x_T -> x_0.
inline Eigen::VectorXd sample_image(const ToyModel& model, const DiscreteCombination& d, RngStream& rng) {
    const auto& s = model.schedule;
    const int steps = s.steps();
    const Conditioning cond = conditioning_for(model.encoder, d);
    Eigen::VectorXd x(model.shape.pixels());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.gaussian();
    for (int k = steps; k >= 1; --k) {
        const auto kk = static_cast<std::size_t>(k - 1);
        const Eigen::VectorXd eps = forward(model.params, model.shape, x, k, steps, cond, model.time_dependent).eps;
        const double beta = s.beta[kk];
        const double ab = s.alpha_bar[kk];
        x = (x - beta / std::sqrt(1.0 - ab) * eps) / std::sqrt(1.0 - beta);
        if (k > 1) {
            const double prev = s.alpha_bar[kk - 1];
            const double sigma = std::sqrt(beta * (1.0 - prev) / (1.0 - ab));
            for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += sigma * rng.gaussian();
        }
    }
    return x;
}

/// x_k = sqrt(alpha_bar_k) x_0 + sqrt(1 - alpha_bar_k) eps.
inline Eigen::VectorXd noisy(const NoiseSchedule& s, const Eigen::VectorXd& x0, int k, const Eigen::VectorXd& eps) {
    const double ab = s.alpha_bar[static_cast<std::size_t>(k - 1)];
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Denoising surrogate of the variational bound: for every step, the mean squared noise
/// prediction error per pixel over the batch. The bound is their sum.
struct StepLosses {
    std::vector<double> per_step;

    double total() const {
        double t = 0.0;
        for (double v : per_step) t += v;
        return t;
    }
};

/// `predict(x_k, k, i)` is the noise prediction for example i.
inline StepLosses elbo_loss(const NoiseSchedule& s, const std::vector<Eigen::VectorXd>& images,
                            const std::function<Eigen::VectorXd(const Eigen::VectorXd&, int, std::size_t)>& predict,
                            std::uint64_t seed) {
    if (images.empty()) throw InvalidArgument("empty batch");
    StepLosses out;
    RngStream rng(seed, 0xE1B0u);
    for (int k = 1; k <= s.steps(); ++k) {
        double sum = 0.0;
        double count = 0.0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            Eigen::VectorXd eps(images[i].size());
            for (Eigen::Index j = 0; j < eps.size(); ++j) eps[j] = rng.gaussian();
            const Eigen::VectorXd pred = predict(noisy(s, images[i], k, eps), k, i);
            if (pred.size() != eps.size()) throw InvalidArgument("prediction shape mismatch");
            sum += (pred - eps).squaredNorm();
            count += static_cast<double>(eps.size());
        }
        out.per_step.push_back(sum / count);
    }
    return out;
}

inline StepLosses elbo_loss(const ToyModel& model, const std::vector<Example>& batch, std::uint64_t seed) {
    std::vector<Eigen::VectorXd> images;
    for (const auto& e : batch) images.push_back(e.image);
    return elbo_loss(
        model.schedule, images,
        [&](const Eigen::VectorXd& x, int k, std::size_t i) { return model.predict(x, k, batch[i].d); }, seed);
}

}  // namespace hiercomp::toy
