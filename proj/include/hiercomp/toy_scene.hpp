#pragma once

// Synthetic scenes for the toy experiment: each concept owns a region of the grid and
// renders a fixed stamp whose pixels are drawn iid from a palette. Also holds the
// template classifier used as the success oracle.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hiercomp/errors.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/rng.hpp"

namespace hiercomp::toy {

struct Region {
    int row = 0;
    int col = 0;
    int rows = 0;
    int cols = 0;

    bool contains(int r, int c) const { return r >= row && r < row + rows && c >= col && c < col + cols; }
};

struct ConceptSpec {
    std::string name;
    Region region;
    std::vector<std::pair<int, int>> stamp;  // absolute (row, col) cells, all inside region
    std::vector<double> palette;
    std::vector<double> weights;  // same length as palette, sums to 1
};

struct SceneSpec {
    int size = 16;
    double background = -1.0;
    std::vector<ConceptSpec> concepts;

    int pixels() const { return size * size; }
    int num_concepts() const { return static_cast<int>(concepts.size()); }
};

/// Square on the left half, plus-shaped cross on the right half, palette {0.5, 0.75, 1}.
inline SceneSpec default_scene() {
    SceneSpec s;
    ConceptSpec square{"square", {0, 0, 16, 8}, {}, {0.5, 0.75, 1.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    for (int r = 5; r <= 10; ++r) {
        for (int c = 1; c <= 6; ++c) square.stamp.emplace_back(r, c);
    }
    ConceptSpec cross{"cross", {0, 8, 16, 8}, {}, {0.5, 0.75, 1.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    for (int r = 4; r <= 11; ++r) {
        for (int c = 8; c <= 15; ++c) {
            if ((c == 11 || c == 12) || (r == 7 || r == 8)) {
                if (c >= 9 && c <= 14) cross.stamp.emplace_back(r, c);
            }
        }
    }
    s.concepts = {square, cross};
    return s;
}

inline void check_combination(const SceneSpec& scene, const DiscreteCombination& d) {
    if (d.size() != static_cast<std::size_t>(scene.num_concepts())) {
        throw InvalidArgument("combination " + to_string(d) + " does not match the scene's " +
                              std::to_string(scene.num_concepts()) + " concepts");
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] != 0 && d[i] != 1) throw InvalidArgument("unknown concept state in " + to_string(d));
    }
}

/// Row-major image with values in the background or the palette.
inline Eigen::VectorXd render(const SceneSpec& scene, const DiscreteCombination& d, RngStream& rng) {
    check_combination(scene, d);
    Eigen::VectorXd img = Eigen::VectorXd::Constant(scene.pixels(), scene.background);
    for (std::size_t m = 0; m < scene.concepts.size(); ++m) {
        if (d[m] == 0) continue;
        const auto& c = scene.concepts[m];
        for (const auto& [r, col] : c.stamp) {
            double u = rng.uniform();
            std::size_t k = 0;
            while (k + 1 < c.palette.size() && u >= c.weights[k]) u -= c.weights[k++];
            img[r * scene.size + col] = c.palette[k];
        }
    }
    return img;
}

struct Example {
    DiscreteCombination d;
    Eigen::VectorXd image;
};

struct Dataset {
    std::vector<Example> examples;
    std::set<DiscreteCombination> train;
    std::set<DiscreteCombination> held_out;  // binary cube minus train
};

inline std::set<DiscreteCombination> binary_cube(int n) {
    std::set<DiscreteCombination> out;
    for (int mask = 0; mask < (1 << n); ++mask) {
        std::vector<int> v;
        for (int i = n - 1; i >= 0; --i) v.push_back((mask >> i) & 1);
        out.emplace(std::move(v));
    }
    return out;
}

/// `per_combination` examples for each training combination, in set order.
inline Dataset generate_dataset(const SceneSpec& scene, const std::set<DiscreteCombination>& train,
                                std::size_t per_combination, std::uint64_t seed) {
    if (train.empty()) throw InvalidArgument("training support is empty");
    for (const auto& d : train) check_combination(scene, d);
    Dataset ds;
    ds.train = train;
    for (const auto& d : binary_cube(scene.num_concepts())) {
        if (!train.contains(d)) ds.held_out.insert(d);
    }
    RngStream rng(seed, 0x5CE1u);
    for (const auto& d : train) {
        for (std::size_t i = 0; i < per_combination; ++i) ds.examples.push_back({d, render(scene, d, rng)});
    }
    return ds;
}

inline std::string split_manifest(const Dataset& ds, std::uint64_t seed) {
    nlohmann::ordered_json doc;
    doc["seed"] = seed;
    doc["examples"] = ds.examples.size();
    nlohmann::ordered_json train = nlohmann::ordered_json::array();
    for (const auto& d : ds.train) train.push_back(d.values);
    nlohmann::ordered_json held = nlohmann::ordered_json::array();
    for (const auto& d : ds.held_out) held.push_back(d.values);
    doc["train"] = train;
    doc["held_out"] = held;
    return doc.dump(2) + "\n";
}

/// Normalized cross-correlation between the concept's region and its stamp template.
inline double template_score(const SceneSpec& scene, const Eigen::VectorXd& image, int concept_index) {
    const auto& c = scene.concepts.at(static_cast<std::size_t>(concept_index));
    std::set<std::pair<int, int>> on(c.stamp.begin(), c.stamp.end());
    std::vector<double> px;
    std::vector<double> tpl;
    for (int r = c.region.row; r < c.region.row + c.region.rows; ++r) {
        for (int col = c.region.col; col < c.region.col + c.region.cols; ++col) {
            px.push_back(image[r * scene.size + col]);
            tpl.push_back(on.contains({r, col}) ? 1.0 : -1.0);
        }
    }
    const Eigen::Map<const Eigen::VectorXd> x(px.data(), static_cast<Eigen::Index>(px.size()));
    const Eigen::Map<const Eigen::VectorXd> t(tpl.data(), static_cast<Eigen::Index>(tpl.size()));
    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd tc = t.array() - t.mean();
    const double denom = xc.norm() * tc.norm();
    return denom == 0.0 ? 0.0 : xc.dot(tc) / denom;
}

/// Mean intensity over the stamp cells.
inline double stamp_mean(const SceneSpec& scene, const Eigen::VectorXd& image, int concept_index) {
    const auto& c = scene.concepts.at(static_cast<std::size_t>(concept_index));
    double sum = 0.0;
    for (const auto& [r, col] : c.stamp) sum += image[r * scene.size + col];
    return sum / static_cast<double>(c.stamp.size());
}

inline constexpr double kDetectCorrelation = 0.7;

/// Concept detected: template correlation >= 0.7 and the stamp brighter than mid-grey.
inline bool detects(const SceneSpec& scene, const Eigen::VectorXd& image, int concept_index) {
    const auto& c = scene.concepts.at(static_cast<std::size_t>(concept_index));
    const double lo = *std::min_element(c.palette.begin(), c.palette.end());
    return template_score(scene, image, concept_index) >= kDetectCorrelation &&
           stamp_mean(scene, image, concept_index) >= 0.5 * (scene.background + lo);
}

/// Every active concept is detected.
inline bool composition_success(const SceneSpec& scene, const Eigen::VectorXd& image, const DiscreteCombination& d) {
    check_combination(scene, d);
    for (std::size_t m = 0; m < d.size(); ++m) {
        if (d[m] == 1 && !detects(scene, image, static_cast<int>(m))) return false;
    }
    return true;
}

}  // namespace hiercomp::toy
