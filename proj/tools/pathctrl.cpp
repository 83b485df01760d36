#include "pathctrl/experiments.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Flags {
    std::string config;
    std::string experiment;
    std::string model;
    std::vector<std::string> params;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
    std::optional<double> t_start;
    std::optional<double> t_end;
    std::vector<double> penalty_ladder;
    std::vector<double> p_ladder;
    std::vector<double> bound_ladder;
    std::string output;
    std::string format;
    std::optional<std::size_t> threads;
};

void add_run_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("-c,--config", f.config, "JSON configuration file");
    cmd->add_option("-e,--experiment", f.experiment, "experiment name (see `pathctrl list`)");
    cmd->add_option("-m,--model", f.model, "model key, or comma-separated keys");
    cmd->add_option("--param", f.params, "model parameter as key=value (repeatable)");
    cmd->add_option("--seed", f.seed, "base seed");
    cmd->add_option("--paths", f.paths, "number of Monte Carlo paths");
    cmd->add_option("--steps", f.steps, "number of time steps");
    cmd->add_option("--t-start", f.t_start, "start of the time grid");
    cmd->add_option("--t-end", f.t_end, "end of the time grid");
    cmd->add_option("--penalty-ladder", f.penalty_ladder, "penalty levels n")->delimiter(',');
    cmd->add_option("--p-ladder", f.p_ladder, "perturbation levels p")->delimiter(',');
    cmd->add_option("--bound-ladder", f.bound_ladder, "control bounds")->delimiter(',');
    cmd->add_option("-o,--output", f.output, "output directory");
    cmd->add_option("--format", f.format, "results format: csv or json");
    cmd->add_option("--threads", f.threads, "worker threads (results do not depend on it)");
}

pathctrl::Json read_config_file(const std::string& path) {
    if (path.empty()) return pathctrl::Json::object();
    std::ifstream is(path);
    if (!is) throw pathctrl::ConfigError("config", "cannot open '" + path + "'");
    try {
        return pathctrl::Json::parse(is);
    } catch (const pathctrl::Json::parse_error& e) {
        throw pathctrl::ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
}

pathctrl::Json flag_overrides(const Flags& f) {
    pathctrl::Json j = pathctrl::Json::object();
    if (!f.experiment.empty()) j["experiment"] = f.experiment;
    if (!f.model.empty()) {
        std::vector<std::string> keys;
        std::stringstream ss(f.model);
        for (std::string k; std::getline(ss, k, ',');) keys.push_back(k);
        if (keys.size() == 1)
            j["model"] = keys.front();
        else
            j["model"] = keys;
    }
    for (const auto& kv : f.params) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw pathctrl::ConfigError("model_params", "expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
            std::size_t used = 0;
            const double v = std::stod(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
            j["model_params"][key] = v;
        } catch (const std::exception&) {
            throw pathctrl::ConfigError("model_params." + key, "expected a number, got '" + val + "'");
        }
    }
    if (f.seed) j["seed"] = *f.seed;
    if (f.paths) j["paths"] = *f.paths;
    if (f.steps) j["grid"]["n_steps"] = *f.steps;
    if (f.t_start) j["grid"]["t_start"] = *f.t_start;
    if (f.t_end) j["grid"]["t_end"] = *f.t_end;
    if (!f.penalty_ladder.empty()) j["penalty_ladder"] = f.penalty_ladder;
    if (!f.p_ladder.empty()) j["p_ladder"] = f.p_ladder;
    if (!f.bound_ladder.empty()) j["bound_ladder"] = f.bound_ladder;
    if (!f.output.empty()) j["output"] = f.output;
    if (!f.format.empty()) j["format"] = f.format;
    if (f.threads) j["threads"] = *f.threads;
    return j;
}

pathctrl::ExperimentConfig resolve(const Flags& f) {
    return pathctrl::load_config(read_config_file(f.config), flag_overrides(f));
}

int run(const Flags& f) {
    const auto cfg = resolve(f);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = pathctrl::run_experiment(cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto results = pathctrl::write_artifacts(cfg, result, wall);
    for (const auto& a : result.assertions) {
        auto& os = a.passed ? std::cout : std::cerr;
        os << (a.passed ? "ok   " : "FAIL ") << a.name << ": " << a.detail << '\n';
    }
    std::cout << cfg.experiment << ": " << (result.passed() ? "passed" : "failed") << " in " << wall << " s, wrote "
              << results.string() << '\n';
    return result.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pathctrl: experiments on path-dependent stochastic control"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pathctrl::kVersion));

    Flags run_flags, validate_flags;
    auto* run_cmd = app.add_subcommand("run", "run one experiment and write results and manifest.json");
    add_run_flags(run_cmd, run_flags);
    auto* validate_cmd = app.add_subcommand("validate", "check a configuration and print it with defaults filled in");
    add_run_flags(validate_cmd, validate_flags);
    auto* list_cmd = app.add_subcommand("list", "list the registered experiments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*list_cmd) {
            for (const auto& e : pathctrl::experiment_registry())
                std::cout << e.name << "  " << e.summary << " [anchor: " << e.anchor << "]\n";
            return 0;
        }
        if (*validate_cmd) {
            std::cout << resolve(validate_flags).to_json().dump(2) << '\n';
            return 0;
        }
        return run(run_flags);
    } catch (const pathctrl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
