// hiercomp: command-line front end for the composability, identifiability and
// structure-recovery analyses and for the toy diffusion experiment.
//
// Exit codes: 0 success, 1 analysis-negative, 2 usage or I/O, 3 internal.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hiercomp/composability.hpp"
#include "hiercomp/identifiability.hpp"
#include "hiercomp/model_io.hpp"
#include "hiercomp/report.hpp"
#include "hiercomp/sampler.hpp"
#include "hiercomp/structure.hpp"
#include "hiercomp/toy_train.hpp"

using namespace hiercomp;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kNegative = 1, kUsage = 2, kInternal = 3 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Outcome {
    int code = kOk;
    std::ostringstream text;
    json machine = json::object();
};

struct Common {
    std::uint64_t seed = 0;
    std::string report_path;
    std::string json_path;
    std::string manifest_path;
};

HierModel load_valid_model(const std::string& path, RunManifest& m) {
    auto loaded = load_model_file(path);
    if (!loaded.report.ok()) {
        throw UsageError("model '" + path + "' is not well-formed:\n" + loaded.report.to_text());
    }
    m.model_hash = model_hash(loaded.model);
    return std::move(loaded.model);
}

std::vector<DiscreteCombination> all_combinations(const HierModel& model) {
    std::vector<DiscreteCombination> out{DiscreteCombination(std::vector<int>{})};
    for (int i = 1; i <= model.num_concepts(); ++i) {
        std::vector<DiscreteCombination> next;
        for (const auto& d : out) {
            for (int c = 0; c < model.cardinality(i); ++c) {
                auto v = d.values;
                v.push_back(c);
                next.emplace_back(std::move(v));
            }
        }
        out = std::move(next);
    }
    return out;
}

json combos_json(const std::set<DiscreteCombination>& s) {
    json out = json::array();
    for (const auto& d : s) out.push_back(d.values);
    return out;
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(digits);
    out << v;
    return out.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string model;
};

Outcome cmd_validate(const ValidateArgs& a, RunManifest& m) {
    Outcome o;
    m.config = {{"model", a.model}};
    const auto loaded = load_model_file(a.model);
    m.model_hash = model_hash(loaded.model);
    o.text << loaded.report.to_text();
    json violations = json::array();
    for (const auto& v : loaded.report.violations) violations.push_back({{"code", v.code}, {"message", v.message}});
    o.machine["ok"] = loaded.report.ok();
    o.machine["violations"] = violations;
    o.code = loaded.report.ok() ? kOk : kNegative;
    return o;
}

struct ComposabilityArgs {
    std::string model;
    std::string train;
    std::string candidates = "cartesian";
    int grid = 16;
    std::size_t n = 4000;
    std::string support = "auto";
    bool retry = true;
};

Outcome cmd_composability(const ComposabilityArgs& a, RunManifest& m) {
    Outcome o;
    const auto model = load_valid_model(a.model, m);
    const auto train = load_combinations_file(a.train);
    if (train.empty()) throw UsageError("training support '" + a.train + "' is empty");
    std::optional<std::vector<DiscreteCombination>> candidates;
    if (a.candidates != "cartesian") {
        const auto c = load_combinations_file(a.candidates);
        candidates = std::vector<DiscreteCombination>(c.begin(), c.end());
    }
    SupportOptions opt;
    opt.mode = a.support == "exact" ? SupportMode::kExact : a.support == "empirical" ? SupportMode::kEmpirical : SupportMode::kAuto;
    opt.n = a.n;
    opt.seed = m.seed;
    opt.cells = a.grid;
    opt.retry = a.retry;
    m.config = {{"model", a.model}, {"train", a.train}, {"train_set", combos_json(train)}, {"candidates", a.candidates},
                {"grid", a.grid}, {"n", a.n}, {"support", a.support}, {"retry", a.retry},
                {"exact_supports", uses_exact_supports(model, opt.mode)}};

    const auto analysis = analyze_composability(model, train, candidates, opt);
    o.text << verdict_report(model, analysis);
    json verdicts = json::array();
    for (const auto& v : analysis.verdicts) {
        verdicts.push_back({{"d", v.d.values}, {"composable", v.composable}, {"blockers", v.blockers.size()}});
    }
    o.machine["verdicts"] = verdicts;
    o.machine["composable"] = combos_json(analysis.composable_set());
    return o;
}

struct IdentifyArgs {
    std::string model;
    std::vector<std::string> checks{"invertibility", "ci", "variability"};
    int probes = 25;
    int budget = 200;
    int points = 50;
    std::size_t rows = 4000;
    std::string test = "pc";
    double alpha = 0.01;
    std::string derivatives = "analytic";
};

CheckStatus worse(CheckStatus a, CheckStatus b) {
    auto rank = [](CheckStatus s) { return s == CheckStatus::kViolated ? 2 : s == CheckStatus::kNotVerified ? 1 : 0; };
    return rank(a) >= rank(b) ? a : b;
}

Outcome cmd_identify(const IdentifyArgs& a, RunManifest& m) {
    Outcome o;
    const auto model = load_valid_model(a.model, m);
    m.config = {{"model", a.model}, {"checks", a.checks}, {"probes", a.probes}, {"budget", a.budget},
                {"points", a.points}, {"rows", a.rows}, {"test", a.test}, {"alpha", a.alpha},
                {"derivatives", a.derivatives}};
    const int L = model.num_levels();
    std::vector<std::pair<std::string, CheckStatus>> summary;
    json machine = json::array();

    for (const auto& check : a.checks) {
        CheckStatus status = CheckStatus::kPass;
        json levels = json::array();
        auto note = [&](int level, CheckStatus s, const std::string& msg) {
            status = worse(status, s);
            levels.push_back({{"level", level}, {"status", std::string(to_string(s))}, {"note", msg}});
        };
        o.text << "== " << check << "\n";
        if (check == "invertibility") {
            for (int l = 1; l <= L; ++l) {
                try {
                    InvertibilityOptions opt;
                    opt.points = a.points;
                    opt.seed = m.seed;
                    const auto r = check_invertibility(model, l, opt);
                    o.text << to_text(r);
                    note(l, r.pass ? CheckStatus::kPass : CheckStatus::kViolated, r.message);
                } catch (const UnsupportedFamily& e) {
                    o.text << "invertibility level " << l << ": unsupported family (" << e.what() << ")\n";
                    note(l, CheckStatus::kNotVerified, std::string("unsupported family: ") + e.what());
                }
            }
        } else if (check == "variability") {
            if (L < 2) o.text << "no latent-to-latent step to check\n";
            for (int l = 1; l < L; ++l) {
                try {
                    VariabilityOptions opt;
                    opt.probes = a.probes;
                    opt.budget = a.budget;
                    opt.seed = m.seed;
                    opt.mode = a.derivatives == "fd" ? DerivativeMode::kFiniteDifference : DerivativeMode::kAnalytic;
                    const auto r = check_sufficient_variability(model, l, opt);
                    o.text << to_text(model, r);
                    note(l, r.status, "rank " + std::to_string(r.rank) + "/" + std::to_string(r.required));
                } catch (const UnsupportedFamily& e) {
                    o.text << "variability level " << l << ": unsupported family (" << e.what() << ")\n";
                    note(l, CheckStatus::kNotVerified, std::string("unsupported family: ") + e.what());
                }
            }
        } else {
            const auto combos = all_combinations(model);
            const std::size_t each = std::max<std::size_t>(1, a.rows / combos.size());
            const auto batch = sample_pooled(model, combos, each, m.seed);
            CiOptions opt;
            opt.test = a.test == "mi" ? CiTest::kBinnedMutualInformation : CiTest::kPartialCorrelation;
            opt.alpha = a.alpha;
            for (int l = 1; l <= L; ++l) {
                try {
                    const auto verdicts = check_conditional_independence(model, batch, l, opt);
                    const bool all = std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.independent; });
                    o.text << "ci level " << l << ": " << (all ? "PASS" : "NOT-VERIFIED") << " (" << verdicts.size()
                           << " pairs, " << batch.rows() << " rows)\n";
                    o.text << to_text(model, verdicts, a.alpha);
                    note(l, all ? CheckStatus::kPass : CheckStatus::kNotVerified,
                         all ? "all pairs independent" : "test rejected independence for some pair");
                } catch (const DegenerateTest& e) {
                    o.text << "ci level " << l << ": degenerate test (" << e.what() << ")\n";
                    note(l, CheckStatus::kNotVerified, std::string("degenerate test: ") + e.what());
                } catch (const InsufficientSamples& e) {
                    o.text << "ci level " << l << ": " << e.what() << "\n";
                    note(l, CheckStatus::kNotVerified, e.what());
                }
            }
        }
        summary.emplace_back(check, status);
        machine.push_back({{"check", check}, {"status", std::string(to_string(status))}, {"levels", levels}});
    }
    o.text << "summary\n";
    for (const auto& [check, s] : summary) {
        o.text << "  " << check << " " << to_string(s) << "\n";
        if (s == CheckStatus::kViolated) o.code = kNegative;
    }
    o.machine["checks"] = machine;
    return o;
}

struct RecoverArgs {
    std::string model;
    std::vector<std::string> batches;
    std::string combos;
    std::size_t n = 50000;
    double alpha = 0.01;
    std::string test = "pc";
    bool bonferroni = false;
    int max_conditioning = -1;
    std::string truth;
    std::string graph_out;
    bool tests = false;
};

Outcome cmd_recover(const RecoverArgs& a, RunManifest& m) {
    Outcome o;
    const auto model = load_valid_model(a.model, m);
    SampleBatch batch;
    json source;
    if (!a.batches.empty()) {
        batch = read_batch(model, a.batches.front());
        for (std::size_t k = 1; k < a.batches.size(); ++k) batch.append(read_batch(model, a.batches[k]));
        source = {{"batches", a.batches}};
    } else {
        std::vector<DiscreteCombination> combos;
        if (a.combos.empty()) {
            combos = all_combinations(model);
        } else {
            const auto s = load_combinations_file(a.combos);
            combos.assign(s.begin(), s.end());
        }
        if (combos.empty()) throw UsageError("no combinations to sample");
        const std::size_t each = a.n / combos.size();
        if (each == 0) throw UsageError("--n is smaller than the number of combinations");
        batch = sample_pooled(model, combos, each, m.seed);
        json cj = json::array();
        for (const auto& d : combos) cj.push_back(d.values);
        source = {{"sampled", cj}, {"rows_each", each}};
    }
    RecoveryOptions opt;
    opt.alpha = a.alpha;
    opt.test = a.test == "mi" ? CiTest::kBinnedMutualInformation : CiTest::kPartialCorrelation;
    opt.bonferroni = a.bonferroni;
    opt.max_conditioning = a.max_conditioning;
    m.config = {{"model", a.model}, {"source", source}, {"rows", batch.rows()}, {"alpha", a.alpha}, {"test", a.test},
                {"bonferroni", a.bonferroni}, {"max_conditioning", a.max_conditioning}, {"truth", a.truth}};

    const auto g = recover_structure(batch, latent_widths(model), opt);
    if (a.tests) {
        o.text << to_text(g);
    } else {
        const int num_levels = static_cast<int>(g.widths.size());
        o.text << "recovered edges: " << g.edges.size() << " (" << g.log.size() << " tests)\n";
        for (const auto& e : g.edges) {
            o.text << "  " << variable_name(e.parent, num_levels) << " -> " << variable_name(e.child, num_levels) << "\n";
        }
    }
    if (!a.graph_out.empty()) write_file(a.graph_out, graph_to_json(g));
    o.machine["graph"] = json::parse(graph_to_json(g));

    std::optional<HierModel> truth;
    if (!a.truth.empty()) {
        auto loaded = load_model_file(a.truth);
        if (!loaded.report.ok()) throw UsageError("truth model '" + a.truth + "' is not well-formed");
        truth = std::move(loaded.model);
    } else if (a.batches.empty()) {
        truth = model;
    }
    if (truth) {
        const auto s = score_graph(g, *truth);
        o.text << "score vs truth: " << to_text(s);
        o.machine["score"] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"exact_match", s.exact_match}};
    }
    return o;
}

struct SampleArgs {
    std::string model;
    std::string combos;
    std::vector<std::string> d;
    std::size_t n = 1000;
    std::string out;
};

DiscreteCombination parse_combination(const std::string& text) {
    std::vector<int> v;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            const int x = std::stoi(cell, &used);
            if (used != cell.size() || x < 0) throw std::invalid_argument(cell);
            v.push_back(x);
        } catch (const std::exception&) {
            throw UsageError("bad combination '" + text + "': expected comma-separated non-negative integers");
        }
    }
    return DiscreteCombination(std::move(v));
}

Outcome cmd_sample(const SampleArgs& a, RunManifest& m) {
    Outcome o;
    const auto model = load_valid_model(a.model, m);
    std::vector<DiscreteCombination> combos;
    for (const auto& s : a.d) combos.push_back(parse_combination(s));
    if (!a.combos.empty()) {
        const auto s = load_combinations_file(a.combos);
        combos.insert(combos.end(), s.begin(), s.end());
    }
    if (combos.empty()) combos = all_combinations(model);
    json cj = json::array();
    for (const auto& d : combos) cj.push_back(d.values);
    m.config = {{"model", a.model}, {"combinations", cj}, {"n", a.n}, {"out", a.out}};
    const auto batch = sample_pooled(model, combos, a.n, m.seed);
    write_batch(batch, model, a.out);
    o.text << "wrote " << batch.rows() << " rows to " << a.out << "\n";
    o.machine["rows"] = batch.rows();
    return o;
}

struct ToyArgs {
    std::string config;
    std::string arm;
    std::string out;
    std::string train;
    int eval_samples = 50;
};

json read_eval(const fs::path& p) {
    try {
        return json::parse(read_file(p.string()));
    } catch (const json::exception& e) {
        throw Error("malformed evaluation file '" + p.string() + "': " + e.what());
    }
}

/// Paired comparison of every pair of arms evaluated under the same output directory.
/// Kept out of the run report, whose content must not depend on other runs.
std::string paired_comparison(const std::string& out_dir) {
    std::vector<std::pair<std::string, json>> evals;
    for (const auto& arm : toy::arm_names()) {
        const fs::path p = fs::path(out_dir) / arm / "eval.json";
        if (fs::exists(p)) evals.emplace_back(arm, read_eval(p));
    }
    std::ostringstream out;
    out << "arm\tseed\tdice";
    std::vector<std::vector<int>> combos;
    if (!evals.empty()) {
        for (const auto& r : evals.front().second.at("rates")) combos.push_back(r.at("d").get<std::vector<int>>());
    }
    for (const auto& d : combos) out << "\tsuccess" << to_string(DiscreteCombination(d));
    out << "\n";
    for (const auto& [arm, e] : evals) {
        out << arm << "\t" << e.at("seed").get<std::uint64_t>() << "\t" << fixed(e.at("final").at("dice").get<double>());
        for (const auto& d : combos) {
            for (const auto& r : e.at("rates")) {
                if (r.at("d").get<std::vector<int>>() == d) {
                    out << "\t" << fixed(r.at("successes").get<double>() / r.at("samples").get<double>(), 4);
                }
            }
        }
        out << "\n";
    }
    for (std::size_t i = 0; i < evals.size(); ++i) {
        for (std::size_t j = i + 1; j < evals.size(); ++j) {
            const double di = evals[i].second.at("final").at("dice").get<double>();
            const double dj = evals[j].second.at("final").at("dice").get<double>();
            out << evals[i].first << " vs " << evals[j].first << ": dice " << (di < dj ? "lower" : di > dj ? "higher" : "equal");
            for (const auto& d : combos) {
                double ri = 0.0;
                double rj = 0.0;
                for (const auto& r : evals[i].second.at("rates")) {
                    if (r.at("d").get<std::vector<int>>() == d) ri = r.at("successes").get<double>() / r.at("samples").get<double>();
                }
                for (const auto& r : evals[j].second.at("rates")) {
                    if (r.at("d").get<std::vector<int>>() == d) rj = r.at("successes").get<double>() / r.at("samples").get<double>();
                }
                out << ", " << to_string(DiscreteCombination(d)) << " " << (ri > rj ? "higher" : ri < rj ? "lower" : "equal");
            }
            out << "\n";
        }
    }
    return out.str();
}

Outcome cmd_toy(const ToyArgs& a, RunManifest& m) {
    Outcome o;
    toy::TrainConfig config;
    if (!a.config.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(a.config));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(a.config, e.what());
        }
        config = toy::train_config_from_json(j);
    }
    config = toy::with_arm(config, a.arm);
    config.seed = m.seed;
    const auto scene = toy::default_scene();
    std::set<DiscreteCombination> train{DiscreteCombination({0, 1}), DiscreteCombination({1, 0})};
    if (!a.train.empty()) train = load_combinations_file(a.train);
    if (train.empty()) throw UsageError("training support is empty");
    m.config = {{"arm", a.arm}, {"train", combos_json(train)}, {"eval_samples", a.eval_samples}, {"out", a.out},
                {"train_config", toy::to_json(config)}};

    const auto data = toy::generate_dataset(scene, train, config.per_combination, m.seed);
    const auto result = toy::train(config, scene, data);
    const auto eval = toy::evaluate_composition(result.model, scene, toy::binary_cube(scene.num_concepts()),
                                                a.eval_samples, m.seed);

    const fs::path dir = fs::path(a.out) / a.arm;
    fs::create_directories(dir);
    write_file((dir / "metrics.tsv").string(), toy::metrics_tsv(result.log));
    write_file((dir / "split.json").string(), toy::split_manifest(data, m.seed));
    toy::save_parameters(result.model.params, (dir / "params.bin").string());

    const auto& last = result.log.back();
    json rates = json::array();
    o.text << "arm " << a.arm << " seed " << m.seed << " epochs " << config.epochs << " lambda "
           << config.effective_lambda() << "\n";
    o.text << "final epoch: L_d " << fixed(last.denoising) << " L_n " << fixed(last.sparsity) << " dice "
           << fixed(last.dice) << "\n";
    o.text << "composition success (" << a.eval_samples << " samples each)\n";
    for (const auto& r : eval) {
        const bool held = data.held_out.contains(r.d);
        o.text << "  " << to_string(r.d) << (held ? " held-out " : " train    ") << r.successes << "/" << r.samples
               << " = " << fixed(r.rate(), 4) << "\n";
        rates.push_back({{"d", r.d.values}, {"held_out", held}, {"successes", r.successes}, {"samples", r.samples}});
    }
    json ev = {{"arm", a.arm}, {"seed", m.seed}, {"lambda", config.effective_lambda()},
               {"final", {{"L_d", last.denoising}, {"L_n", last.sparsity}, {"dice", last.dice}}}, {"rates", rates}};
    write_file((dir / "eval.json").string(), ev.dump(2) + "\n");
    o.machine = ev;

    write_file((fs::path(a.out) / "comparison.txt").string(), paired_comparison(a.out));
    return o;
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical compositional generation analyses and toy experiment", "hiercomp"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kToolVersion);
    Common common;
    app.add_option("--seed", common.seed, "Seed for every random draw")->default_val(0);
    app.add_option("--report", common.report_path, "Also write the text report here");
    app.add_option("--json", common.json_path, "Write a machine-readable copy of the report here");
    app.add_option("--manifest", common.manifest_path, "Write the run manifest here (JSON)");

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Check a model spec for structural violations");
    validate->add_option("model", va.model, "Model spec (JSON)")->required();

    ComposabilityArgs ca;
    auto* comp = app.add_subcommand("composability", "Certify composable combinations from a training support");
    comp->add_option("model", ca.model, "Model spec (JSON)")->required();
    comp->add_option("--train", ca.train, "Training support: JSON array of combinations")->required();
    comp->add_option("--candidates", ca.candidates, "'cartesian' or a JSON file of combinations")->default_val("cartesian");
    comp->add_option("--grid", ca.grid, "Cells per axis for empirical supports")->default_val(16)->check(CLI::PositiveNumber);
    comp->add_option("--n", ca.n, "Samples per combination for empirical supports")->default_val(4000)->check(CLI::PositiveNumber);
    comp->add_option("--support", ca.support, "auto, exact or empirical")
        ->default_val("auto")
        ->check(CLI::IsMember({"auto", "exact", "empirical"}));
    comp->add_flag("!--no-retry", ca.retry, "Do not resample blocked empirical supports");

    IdentifyArgs ia;
    auto* identify = app.add_subcommand("identify", "Check the identification conditions of a model");
    identify->add_option("model", ia.model, "Model spec (JSON)")->required();
    identify->add_option("--checks", ia.checks, "Subset of invertibility,ci,variability")
        ->delimiter(',')
        ->check(CLI::IsMember({"invertibility", "ci", "variability"}));
    identify->add_option("--probes", ia.probes, "Variability probes per level")->default_val(25)->check(CLI::PositiveNumber);
    identify->add_option("--budget", ia.budget, "Anchor sets tried per probe")->default_val(200)->check(CLI::PositiveNumber);
    identify->add_option("--points", ia.points, "Jacobian points for invertibility")->default_val(50)->check(CLI::PositiveNumber);
    identify->add_option("--rows", ia.rows, "Sample rows for the independence test")->default_val(4000);
    identify->add_option("--test", ia.test, "pc (partial correlation) or mi (binned mutual information)")
        ->default_val("pc")
        ->check(CLI::IsMember({"pc", "mi"}));
    identify->add_option("--alpha", ia.alpha, "Test level")->default_val(0.01)->check(CLI::Range(0.0, 1.0));
    identify->add_option("--derivatives", ia.derivatives, "analytic or fd")
        ->default_val("analytic")
        ->check(CLI::IsMember({"analytic", "fd"}));

    RecoverArgs ra;
    auto* recover = app.add_subcommand("recover", "Recover the latent graph from samples");
    recover->add_option("--model", ra.model, "Model spec giving the variable layout")->required();
    recover->add_option("--batch", ra.batches, "Sample file written by 'sample' (repeatable)");
    recover->add_option("--combos", ra.combos, "Combinations to sample when no batch is given (default: all)");
    recover->add_option("--n", ra.n, "Total rows to sample when no batch is given")->default_val(50000);
    recover->add_option("--alpha", ra.alpha, "Test level")->default_val(0.01)->check(CLI::Range(0.0, 1.0));
    recover->add_option("--test", ra.test, "pc or mi")->default_val("pc")->check(CLI::IsMember({"pc", "mi"}));
    recover->add_flag("--bonferroni", ra.bonferroni, "Divide alpha by the number of candidate edges");
    recover->add_option("--max-conditioning", ra.max_conditioning, "Largest conditioning set (negative: automatic)")
        ->default_val(-1);
    recover->add_option("--truth", ra.truth, "Model whose graph is the reference (default: --model when sampling)");
    recover->add_option("--graph-out", ra.graph_out, "Write the recovered graph here (JSON edge list)");
    recover->add_flag("--tests", ra.tests, "List every independence test");

    SampleArgs sa;
    auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a model");
    sample_cmd->add_option("model", sa.model, "Model spec (JSON)")->required();
    sample_cmd->add_option("--d", sa.d, "Combination such as 0,1 (repeatable)");
    sample_cmd->add_option("--combos", sa.combos, "JSON file of combinations");
    sample_cmd->add_option("--n", sa.n, "Rows per combination")->default_val(1000)->check(CLI::PositiveNumber);
    sample_cmd->add_option("--out", sa.out, "Output CSV")->required();

    ToyArgs ta;
    auto* toy_cmd = app.add_subcommand("toy", "Train and evaluate one arm of the toy diffusion experiment");
    toy_cmd->add_option("--config", ta.config, "Training config (JSON); omitted fields take defaults");
    toy_cmd->add_option("--arm", ta.arm, "full, no-td, no-sr or no-td-no-sr")
        ->required()
        ->check(CLI::IsMember(toy::arm_names()));
    toy_cmd->add_option("--out", ta.out, "Output directory; results go to <out>/<arm>/")->required();
    toy_cmd->add_option("--train", ta.train, "Training support (default [[0,1],[1,0]])");
    toy_cmd->add_option("--eval-samples", ta.eval_samples, "Samples per combination at evaluation")
        ->default_val(50)
        ->check(CLI::PositiveNumber);

    std::string replay_path;
    auto* replay = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
    replay->add_option("manifest", replay_path, "Manifest written by --manifest")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "hiercomp: " << e.what() << "\n";
        return kUsage;
    }

    if (replay->parsed()) {
        const auto manifest = read_manifest(replay_path);
        if (!manifest.argv.empty() && manifest.argv.front() == "replay") throw UsageError("manifest records a replay");
        return run(manifest.argv, out, err);
    }

    RunManifest m;
    m.argv = args;
    m.seed = common.seed;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    if (validate->parsed()) o = cmd_validate(va, m);
    else if (comp->parsed()) o = cmd_composability(ca, m);
    else if (identify->parsed()) o = cmd_identify(ia, m);
    else if (recover->parsed()) o = cmd_recover(ra, m);
    else if (sample_cmd->parsed()) o = cmd_sample(sa, m);
    else o = cmd_toy(ta, m);
    m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const std::string report = manifest_header(m) + "report\n" + o.text.str() + "exit_code: " +
                               std::to_string(o.code) + "\n" + wall_clock_line(m);
    out << report;
    if (!common.report_path.empty()) write_file(common.report_path, report);
    if (!common.json_path.empty()) {
        auto mj = to_json(m);
        mj.erase("wall_clock_seconds");
        json doc = {{"manifest", mj}, {"result", o.machine}, {"exit_code", o.code}};
        write_file(common.json_path, doc.dump(2) + "\n");
    }
    if (!common.manifest_path.empty()) write_file(common.manifest_path, to_json(m).dump(2) + "\n");
    return o.code;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const UsageError& e) {
        err << "hiercomp: " << e.what() << "\n";
        return kUsage;
    } catch (const toy::TrainingDiverged& e) {
        err << "hiercomp: training diverged: " << e.what() << "\n";
        return kNegative;
    } catch (const Error& e) {
        err << "hiercomp: " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "hiercomp: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "hiercomp: internal error: " << e.what() << "\n";
        return kInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}
