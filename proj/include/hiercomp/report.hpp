#pragma once

// Run manifests: everything needed to rerun a command, attached to every report.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiercomp/errors.hpp"

namespace hiercomp {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
    std::vector<std::string> argv;  // without the program name
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::string model_hash;  // empty when no model is involved
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;
    double wall_clock_seconds = 0.0;

    std::string command_line() const {
        std::string out = "hiercomp";
        for (const auto& a : argv) out += " " + a;
        return out;
    }
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["argv"] = m.argv;
    j["config"] = m.config;
    j["model_hash"] = m.model_hash;
    j["seed"] = m.seed;
    j["tool_version"] = m.tool_version;
    j["wall_clock_seconds"] = m.wall_clock_seconds;
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.config = j.at("config");
        m.model_hash = j.at("model_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest", e.what());
    }
    return m;
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, e.what());
    }
    return manifest_from_json(j);
}

/// Report header. The wall-clock line is written separately, last, by `wall_clock_line`.
inline std::string manifest_header(const RunManifest& m) {
    std::ostringstream out;
    out << "manifest\n";
    out << "  command: " << m.command_line() << "\n";
    out << "  tool_version: " << m.tool_version << "\n";
    out << "  seed: " << m.seed << "\n";
    out << "  model_hash: " << (m.model_hash.empty() ? "-" : m.model_hash) << "\n";
    out << "  config: " << m.config.dump() << "\n";
    return out.str();
}

inline constexpr const char* kWallClockPrefix = "wall_clock_seconds: ";

inline std::string wall_clock_line(const RunManifest& m) {
    std::ostringstream out;
    out.precision(6);
    out << kWallClockPrefix << m.wall_clock_seconds << "\n";
    return out.str();
}

/// Report text with wall-clock lines removed, for byte comparison of reruns.
inline std::string strip_wall_clock(const std::string& report) {
    std::istringstream in(report);
    std::string out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(kWallClockPrefix, 0) == 0) continue;
        out += line + "\n";
    }
    return out;
}

}  // namespace hiercomp
