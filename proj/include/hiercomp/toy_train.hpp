#pragma once

// Training, evaluation and export for the toy denoiser.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hiercomp/errors.hpp"
#include "hiercomp/hierdiff.hpp"
#include "hiercomp/rng.hpp"
#include "hiercomp/toy_model.hpp"
#include "hiercomp/toy_scene.hpp"

namespace hiercomp::toy {

/// Non-finite loss during training.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

struct TrainConfig {
    int steps = 8;
    double beta_first = 0.05;
    double beta_last = 0.7;
    double lambda = 1e-2;
    int locals = 3;  // concepts + 1
    double learning_rate = 3e-3;
    int epochs = 40;
    int batch = 16;
    std::uint64_t seed = 0;
    std::uint64_t encoder_seed = 7;
    std::size_t per_combination = 500;
    bool with_td = true;
    bool with_sr = true;
    DenoiserShape shape;

    double effective_lambda() const { return with_sr ? lambda : 0.0; }
};

inline const std::vector<std::string>& arm_names() {
    static const std::vector<std::string> names{"full", "no-td", "no-sr", "no-td-no-sr"};
    return names;
}

inline TrainConfig with_arm(TrainConfig c, const std::string& arm) {
    if (arm == "full") {
        c.with_td = c.with_sr = true;
    } else if (arm == "no-td") {
        c.with_td = false;
        c.with_sr = true;
    } else if (arm == "no-sr") {
        c.with_td = true;
        c.with_sr = false;
    } else if (arm == "no-td-no-sr") {
        c.with_td = c.with_sr = false;
    } else {
        throw InvalidArgument("unknown arm '" + arm + "'");
    }
    return c;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["steps"] = c.steps;
    j["beta_first"] = c.beta_first;
    j["beta_last"] = c.beta_last;
    j["lambda"] = c.lambda;
    j["locals"] = c.locals;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch"] = c.batch;
    j["seed"] = c.seed;
    j["encoder_seed"] = c.encoder_seed;
    j["per_combination"] = c.per_combination;
    j["with_td"] = c.with_td;
    j["with_sr"] = c.with_sr;
    j["grid"] = c.shape.size;
    j["attention_dim"] = c.shape.attention;
    j["hidden"] = c.shape.hidden;
    return j;
}

/// Reads the fields present in `j` over the defaults; unknown keys are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("", "toy config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "steps") c.steps = v.get<int>();
            else if (key == "beta_first") c.beta_first = v.get<double>();
            else if (key == "beta_last") c.beta_last = v.get<double>();
            else if (key == "lambda") c.lambda = v.get<double>();
            else if (key == "locals") c.locals = v.get<int>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "epochs") c.epochs = v.get<int>();
            else if (key == "batch") c.batch = v.get<int>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "encoder_seed") c.encoder_seed = v.get<std::uint64_t>();
            else if (key == "per_combination") c.per_combination = v.get<std::size_t>();
            else if (key == "with_td") c.with_td = v.get<bool>();
            else if (key == "with_sr") c.with_sr = v.get<bool>();
            else if (key == "grid") c.shape.size = v.get<int>();
            else if (key == "attention_dim") c.shape.attention = v.get<int>();
            else if (key == "hidden") c.shape.hidden = v.get<int>();
            else throw ParseError("/" + key, "unknown field");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("/" + key, e.what());
        }
    }
    if (!(c.lambda >= 0.0)) throw ParseError("/lambda", "must be non-negative");
    if (c.locals < 1) throw ParseError("/locals", "must be at least 1");
    if (c.steps < 2) throw ParseError("/steps", "must be at least 2");
    if (c.epochs < 0 || c.batch < 1) throw ParseError("", "epochs must be >= 0 and batch >= 1");
    return c;
}

/// One training draw: example index, step and noise.
struct Draw {
    std::size_t index = 0;
    int step = 1;
    Eigen::VectorXd eps;
};

struct ObjectiveValue {
    double denoising = 0.0;  // mean over draws of the per-pixel squared error
    double sparsity = 0.0;   // mean over draws of L_n
    double dice = 0.0;       // mean over draws of the mean pairwise DICE
    double total = 0.0;      // denoising + lambda * sparsity
};

/// L = L_d + lambda L_n averaged over `draws`; accumulates the gradient into `grad` when given.
inline ObjectiveValue objective(const DenoiserParams& p, const DenoiserShape& shape, const NoiseSchedule& sched,
                                const std::vector<Example>& examples,
                                const std::map<DiscreteCombination, Conditioning>& cond, const std::vector<Draw>& draws,
                                bool time_dependent, double lambda, DenoiserParams* grad) {
    ObjectiveValue v;
    const double inv = 1.0 / static_cast<double>(draws.size());
    for (const auto& dr : draws) {
        const auto& ex = examples.at(dr.index);
        const auto f = forward(p, shape, noisy(sched, ex.image, dr.step, dr.eps), dr.step, sched.steps(),
                               cond.at(ex.d), time_dependent);
        const Eigen::VectorXd err = f.eps - dr.eps;
        const double ld = err.squaredNorm() / static_cast<double>(err.size());
        const double ln = sparsity_loss(f.local_maps);
        v.denoising += inv * ld;
        v.sparsity += inv * ln;
        v.dice += inv * mean_pairwise_dice(f.local_maps);
        if (grad != nullptr) {
            const Eigen::VectorXd d_eps = (2.0 * inv / static_cast<double>(err.size())) * err;
            std::vector<AttentionMap> d_maps;
            if (lambda > 0.0) {
                d_maps = grad_sparsity_loss(f.local_maps);
                for (auto& m : d_maps) m *= lambda * inv;
            }
            backward(p, shape, f, d_eps, d_maps, *grad);
        }
    }
    v.total = v.denoising + lambda * v.sparsity;
    return v;
}

struct EpochMetrics {
    int epoch = 0;
    double denoising = 0.0;
    double sparsity = 0.0;
    double dice = 0.0;
};

inline std::string metrics_tsv(const std::vector<EpochMetrics>& log) {
    std::string out = "epoch\tL_d\tL_n\tdice\n";
    char buf[160];
    for (const auto& m : log) {
        std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\n", m.epoch, m.denoising, m.sparsity, m.dice);
        out += buf;
    }
    return out;
}

struct TrainResult {
    ToyModel model;
    std::vector<EpochMetrics> log;
};

inline std::map<DiscreteCombination, Conditioning> conditioning_table(const PromptEncoder& enc, int concepts) {
    std::map<DiscreteCombination, Conditioning> out;
    for (const auto& d : binary_cube(concepts)) out.emplace(d, conditioning_for(enc, d));
    return out;
}

inline ToyModel untrained_model(const TrainConfig& config, int concepts) {
    if (config.locals != concepts + 1) {
        throw InvalidArgument("locals must equal the number of concepts plus one (got " + std::to_string(config.locals) +
                              " for " + std::to_string(concepts) + " concepts)");
    }
    ToyModel m;
    m.shape = config.shape;
    m.params = init_params(config.shape, config.seed);
    m.encoder = make_encoder(concepts, config.encoder_seed, config.shape.token);
    m.schedule = make_schedule(config.steps, config.beta_first, config.beta_last);
    m.time_dependent = config.with_td;
    return m;
}

/// Adam on L_d + lambda L_n. Deterministic given the config seed.
inline TrainResult train(const TrainConfig& config, const SceneSpec& scene, const Dataset& data) {
    if (data.examples.empty()) throw InvalidArgument("empty dataset");
    if (scene.size != config.shape.size) throw InvalidArgument("scene and denoiser grids differ");
    TrainResult r;
    r.model = untrained_model(config, scene.num_concepts());
    const auto cond = conditioning_table(r.model.encoder, scene.num_concepts());
    const double lambda = config.effective_lambda();

    Eigen::VectorXd theta = r.model.params.flatten();
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
    const double b1 = 0.9;
    const double b2 = 0.999;
    long t = 0;
    RngStream rng(config.seed, 0x7A11u);
    std::vector<std::size_t> order(data.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        EpochMetrics em;
        em.epoch = epoch;
        double batches = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            std::vector<Draw> draws;
            for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(config.batch)); ++i) {
                Draw d;
                d.index = order[i];
                d.step = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.steps)));
                d.eps.resize(config.shape.pixels());
                for (Eigen::Index j = 0; j < d.eps.size(); ++j) d.eps[j] = rng.gaussian();
                draws.push_back(std::move(d));
            }
            DenoiserParams g = r.model.params.zeros_like();
            const auto v = objective(r.model.params, config.shape, r.model.schedule, data.examples, cond, draws,
                                     config.with_td, lambda, &g);
            const Eigen::VectorXd grad = g.flatten();
            if (!std::isfinite(v.total) || !grad.allFinite()) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch starting " << start << ": L_d=" << v.denoising
                    << " L_n=" << v.sparsity << " |grad|=" << grad.norm();
                throw TrainingDiverged(msg.str());
            }
            ++t;
            m1 = b1 * m1 + (1.0 - b1) * grad;
            m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
            theta.array() -= config.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
            r.model.params.assign(theta);
            em.denoising += v.denoising;
            em.sparsity += v.sparsity;
            em.dice += v.dice;
            batches += 1.0;
        }
        em.denoising /= batches;
        em.sparsity /= batches;
        em.dice /= batches;
        r.log.push_back(em);
    }
    return r;
}

struct CompositionResult {
    DiscreteCombination d;
    int samples = 0;
    int successes = 0;

    double rate() const { return samples == 0 ? 0.0 : static_cast<double>(successes) / samples; }
};

/// Samples `n` images per combination through the reverse process and applies the template classifier.
inline std::vector<CompositionResult> evaluate_composition(const ToyModel& model, const SceneSpec& scene,
                                                           const std::set<DiscreteCombination>& combos, int n,
                                                           std::uint64_t seed) {
    std::vector<CompositionResult> out;
    std::uint32_t stream = 0;
    for (const auto& d : combos) {
        check_combination(scene, d);
        RngStream rng(seed, 0xE7A0u + stream++);
        CompositionResult r{d, n, 0};
        for (int i = 0; i < n; ++i) {
            if (composition_success(scene, sample_image(model, d, rng), d)) ++r.successes;
        }
        out.push_back(r);
    }
    return out;
}

/// Flat little-endian float64 tensor file plus a text manifest of names, shapes and offsets.
inline void save_parameters(const DenoiserParams& p, const std::string& path) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw Error("cannot write " + path);
    std::ostringstream manifest;
    manifest << "format float64\nendianness little\n";
    std::size_t offset = 0;
    for (const auto& [name, f] : DenoiserParams::kFields) {
        const auto& m = p.*f;
        manifest << name << " " << m.rows() << " " << m.cols() << " " << offset << "\n";
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const double v = m(r, c);
                unsigned char bytes[8];
                std::uint64_t u;
                std::memcpy(&u, &v, 8);
                for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(u >> (8 * b));
                bin.write(reinterpret_cast<const char*>(bytes), 8);
            }
        }
        offset += static_cast<std::size_t>(m.size()) * 8;
    }
    std::ofstream(path + ".manifest.txt") << manifest.str();
}

inline DenoiserParams load_parameters(const DenoiserParams& like, const std::string& path) {
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw Error("cannot read " + path);
    DenoiserParams p = like;
    for (const auto& [name, f] : DenoiserParams::kFields) {
        auto& m = p.*f;
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                unsigned char bytes[8];
                if (!bin.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError(path, "truncated parameter file");
                std::uint64_t u = 0;
                for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
                double v;
                std::memcpy(&v, &u, 8);
                m(r, c) = v;
            }
        }
    }
    return p;
}

}  // namespace hiercomp::toy
