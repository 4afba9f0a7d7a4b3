#pragma once

// Model-spec documents (JSON).
//
//   {
//     "levels": [n(d), n(z_1), ..., n(z_L), d_x],
//     "edges": [["d.1", "z1.1"], ["z1.1", "z2.1"], ..., ["z2.1", "x"]],
//     "mechanisms": {
//       "z2.1": {"family": "linear-gaussian", "params": [0.0, 0.8],
//                "noise": {"family": "gaussian", "scale": 0.5}},
//       "z2.2": {"family": "piecewise-table",
//                "params": {"breaks": [[0.5]], "table": [0.0, 1.0]},
//                "noise": {"family": "gaussian", "scale": 0.0}},
//       "x":    {"family": "linear-gaussian", "params": [b1, w1, ...],
//                "noise": {"family": "gaussian", "scale": 1.0}}
//     },
//     "roots": {"1": {"0": {"constant": 0.0}, "1": {"interval": [-1.0, 1.0]}}}
//   }
//
// Unknown fields are rejected.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hiercomp/errors.hpp"
#include "hiercomp/model.hpp"

namespace hiercomp {

struct LoadedModel {
    HierModel model;
    ValidationReport report;
};

namespace detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline void reject_unknown_fields(const json& object, std::initializer_list<std::string_view> allowed,
                                  const std::string& path) {
    for (const auto& [key, value] : object.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ParseError(path + "/" + key, "unknown field '" + key + "'");
        }
    }
}

inline const json& require(const json& object, const std::string& key, const std::string& path) {
    if (!object.is_object() || !object.contains(key)) {
        throw ParseError(path, "missing " + key);
    }
    return object.at(key);
}

inline double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ParseError(path, "expected a number");
    return j.get<double>();
}

inline std::vector<double> as_numbers(const json& j, const std::string& path) {
    if (!j.is_array()) throw ParseError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        out.push_back(as_number(j[i], path + "/" + std::to_string(i)));
    }
    return out;
}

inline MechanismFamily parse_family(const json& j, const std::string& path) {
    if (!j.is_string()) throw ParseError(path, "expected a family name");
    const auto s = j.get<std::string>();
    for (auto f : {MechanismFamily::kLinearGaussian, MechanismFamily::kAffineTanh,
                   MechanismFamily::kLocationScaleGaussian, MechanismFamily::kPiecewiseTable}) {
        if (s == to_string(f)) return f;
    }
    throw ParseError(path, "unknown mechanism family '" + s + "'");
}

inline NoiseFamily parse_noise_family(const json& j, const std::string& path) {
    if (!j.is_string()) throw ParseError(path, "expected a noise family name");
    const auto s = j.get<std::string>();
    if (s == "gaussian") return NoiseFamily::kGaussian;
    if (s == "uniform") return NoiseFamily::kUniform;
    throw ParseError(path, "unknown noise family '" + s + "'");
}

inline int parse_index_key(const std::string& key, const std::string& path) {
    if (key.empty() || key.size() > 9 ||
        !std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ParseError(path, "expected a non-negative integer key, got '" + key + "'");
    }
    return std::stoi(key);
}

inline std::string line_of(const std::string& text, std::size_t byte) {
    const auto end = std::min(byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(end), '\n');
    return "line " + std::to_string(line);
}

}  // namespace detail

/// Parses a model-spec document. Structural problems end up in the report;
/// malformed documents throw ParseError.
inline LoadedModel load_model(const std::string& text) {
    using detail::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw ParseError("", "missing levels");
        }
        throw ParseError(detail::line_of(text, e.byte), e.what());
    }
    if (doc.is_null() || (doc.is_object() && doc.empty())) throw ParseError("", "missing levels");
    if (!doc.is_object()) throw ParseError("", "document must be an object");
    detail::reject_unknown_fields(doc, {"levels", "edges", "mechanisms", "roots"}, "");

    const auto& levels_json = detail::require(doc, "levels", "");
    if (!levels_json.is_array() || levels_json.empty()) throw ParseError("/levels", "missing levels");
    std::vector<int> widths;
    for (std::size_t i = 0; i < levels_json.size(); ++i) {
        const auto& w = levels_json[i];
        if (!w.is_number_integer()) {
            throw ParseError("/levels/" + std::to_string(i), "expected an integer width");
        }
        widths.push_back(w.get<int>());
    }
    if (widths.size() < 3) {
        throw ParseError("/levels", "need widths for d, at least one latent level, and x");
    }
    const int num_levels = static_cast<int>(widths.size()) - 2;

    auto parse_name = [&](const json& j, const std::string& path) {
        if (!j.is_string()) throw ParseError(path, "expected a variable name");
        try {
            return parse_variable_name(j.get<std::string>(), num_levels);
        } catch (const InvalidArgument& e) {
            throw ParseError(path, e.what());
        }
    };

    std::vector<Edge> edges;
    std::set<Edge> seen;
    if (doc.contains("edges")) {
        const auto& list = doc.at("edges");
        if (!list.is_array()) throw ParseError("/edges", "expected a list of [parent, child]");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string path = "/edges/" + std::to_string(i);
            const auto& pair = list[i];
            if (!pair.is_array() || pair.size() != 2) throw ParseError(path, "expected [parent, child]");
            const Edge e{parse_name(pair[0], path + "/0"), parse_name(pair[1], path + "/1")};
            if (!seen.insert(e).second) {
                throw ParseError(path, "duplicate edge " + pair[0].get<std::string>() + " -> " +
                                           pair[1].get<std::string>());
            }
            edges.push_back(e);
        }
    }

    std::map<VariableId, MechanismSpec> mechanisms;
    if (doc.contains("mechanisms")) {
        const auto& map = doc.at("mechanisms");
        if (!map.is_object()) throw ParseError("/mechanisms", "expected an object");
        for (const auto& [key, value] : map.items()) {
            const std::string path = "/mechanisms/" + key;
            const auto id = parse_name(json(key), path);
            if (!value.is_object()) throw ParseError(path, "expected an object");
            detail::reject_unknown_fields(value, {"family", "params", "noise"}, path);
            MechanismSpec spec;
            spec.family = detail::parse_family(detail::require(value, "family", path), path + "/family");
            const auto& params = detail::require(value, "params", path);
            if (spec.family == MechanismFamily::kPiecewiseTable) {
                if (!params.is_object()) {
                    throw ParseError(path + "/params", "piecewise-table expects {breaks, table}");
                }
                detail::reject_unknown_fields(params, {"breaks", "table"}, path + "/params");
                const auto& breaks = detail::require(params, "breaks", path + "/params");
                if (!breaks.is_array()) throw ParseError(path + "/params/breaks", "expected a list");
                for (std::size_t k = 0; k < breaks.size(); ++k) {
                    spec.breaks.push_back(detail::as_numbers(
                        breaks[k], path + "/params/breaks/" + std::to_string(k)));
                }
                spec.coefficients = detail::as_numbers(
                    detail::require(params, "table", path + "/params"), path + "/params/table");
            } else {
                spec.coefficients = detail::as_numbers(params, path + "/params");
            }
            const auto& noise = detail::require(value, "noise", path);
            if (!noise.is_object()) throw ParseError(path + "/noise", "expected an object");
            detail::reject_unknown_fields(noise, {"family", "scale"}, path + "/noise");
            spec.noise = detail::parse_noise_family(detail::require(noise, "family", path + "/noise"),
                                                    path + "/noise/family");
            spec.noise_scale =
                detail::as_number(detail::require(noise, "scale", path + "/noise"), path + "/noise/scale");
            mechanisms.emplace(id, std::move(spec));
        }
    }

    std::map<int, RootConditionalSpec> roots;
    if (doc.contains("roots")) {
        const auto& map = doc.at("roots");
        if (!map.is_object()) throw ParseError("/roots", "expected an object");
        for (const auto& [key, value] : map.items()) {
            const std::string path = "/roots/" + key;
            const int i = detail::parse_index_key(key, path);
            if (!value.is_object()) throw ParseError(path, "expected an object keyed by value");
            std::map<int, RootValueSpec> by_value;
            for (const auto& [ckey, cvalue] : value.items()) {
                const std::string cpath = path + "/" + ckey;
                const int c = detail::parse_index_key(ckey, cpath);
                if (!cvalue.is_object()) throw ParseError(cpath, "expected an object");
                detail::reject_unknown_fields(cvalue, {"constant", "interval", "density"}, cpath);
                if (cvalue.contains("constant") == cvalue.contains("interval")) {
                    throw ParseError(cpath, "expected exactly one of constant / interval");
                }
                if (cvalue.contains("constant")) {
                    if (cvalue.contains("density")) {
                        throw ParseError(cpath + "/density", "density only applies to intervals");
                    }
                    by_value[c] = RootValueSpec::degenerate(
                        detail::as_number(cvalue.at("constant"), cpath + "/constant"));
                } else {
                    const auto bounds = detail::as_numbers(cvalue.at("interval"), cpath + "/interval");
                    if (bounds.size() != 2) throw ParseError(cpath + "/interval", "expected [lo, hi]");
                    if (cvalue.contains("density") &&
                        cvalue.at("density") != json("uniform")) {
                        throw ParseError(cpath + "/density", "only uniform interval densities exist");
                    }
                    by_value[c] = RootValueSpec::interval(bounds[0], bounds[1]);
                }
            }
            RootConditionalSpec spec;
            int expected = 0;
            for (const auto& [c, v] : by_value) {
                if (c != expected++) throw ParseError(path, "values must be numbered 0, 1, ...");
                spec.by_value.push_back(v);
            }
            roots.emplace(i, std::move(spec));
        }
    }

    LoadedModel out{HierModel(std::move(widths), std::move(edges), std::move(mechanisms),
                              std::move(roots)),
                    {}};
    out.report = validate(out.model);
    return out;
}

inline LoadedModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return load_model(buffer.str());
}

/// Canonical document for a model: edges and mechanisms in variable order.
inline std::string save_model(const HierModel& model) {
    using detail::ordered_json;
    ordered_json doc;
    doc["levels"] = model.widths();
    ordered_json edges = ordered_json::array();
    for (const auto& e : model.edges()) {
        edges.push_back({model.name(e.parent), model.name(e.child)});
    }
    doc["edges"] = edges;
    ordered_json mechanisms = ordered_json::object();
    for (const auto& [v, spec] : model.mechanisms()) {
        ordered_json m;
        m["family"] = std::string(to_string(spec.family));
        if (spec.family == MechanismFamily::kPiecewiseTable) {
            ordered_json params;
            params["breaks"] = spec.breaks;
            params["table"] = spec.coefficients;
            m["params"] = params;
        } else {
            m["params"] = spec.coefficients;
        }
        m["noise"] = {{"family", std::string(to_string(spec.noise))}, {"scale", spec.noise_scale}};
        mechanisms[model.name(v)] = m;
    }
    doc["mechanisms"] = mechanisms;
    ordered_json roots = ordered_json::object();
    for (const auto& [i, spec] : model.roots()) {
        ordered_json values = ordered_json::object();
        for (std::size_t c = 0; c < spec.by_value.size(); ++c) {
            const auto& v = spec.by_value[c];
            if (v.is_degenerate()) {
                values[std::to_string(c)] = {{"constant", v.constant}};
            } else {
                values[std::to_string(c)] = {{"interval", {v.lo, v.hi}}};
            }
        }
        roots[std::to_string(i)] = values;
    }
    doc["roots"] = roots;
    return doc.dump(2) + "\n";
}

/// FNV-1a 64 of the canonical document, as 16 hex digits.
inline std::string model_hash(const HierModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : save_model(model)) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    return out;
}

/// A set of combinations: a JSON array of integer arrays, e.g. [[0, 1], [1, 0]].
inline std::set<DiscreteCombination> load_combinations(const std::string& text) {
    detail::json doc;
    try {
        doc = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw ParseError("", std::string("malformed combination list: ") + e.what());
    }
    if (!doc.is_array()) throw ParseError("", "combination list must be an array");
    std::set<DiscreteCombination> out;
    for (std::size_t k = 0; k < doc.size(); ++k) {
        const auto path = "/" + std::to_string(k);
        if (!doc[k].is_array()) throw ParseError(path, "combination must be an array of integers");
        std::vector<int> values;
        for (const auto& v : doc[k]) {
            if (!v.is_number_integer() || v.get<long>() < 0) throw ParseError(path, "entries must be non-negative integers");
            values.push_back(v.get<int>());
        }
        if (!out.empty() && out.begin()->size() != values.size()) throw ParseError(path, "combinations differ in length");
        out.insert(DiscreteCombination(std::move(values)));
    }
    return out;
}

inline std::set<DiscreteCombination> load_combinations_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open combination file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return load_combinations(buffer.str());
}

}  // namespace hiercomp
