#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace pathctrl {

using Json = nlohmann::ordered_json;

struct GridConfig {
    double t_start = 0.0;
    double t_end = 1.0;
    std::size_t n_steps = 50;
};

/// Validated configuration of one experiment run.
struct ExperimentConfig {
    std::string experiment;
    std::vector<std::string> models;
    ModelParams model_params;
    GridConfig grid;
    std::size_t paths = 1;
    std::uint64_t seed = 0;
    std::vector<double> penalty_ladder;
    std::vector<double> p_ladder;
    std::vector<double> bound_ladder;
    std::string output;
    std::string format = "csv";
    /// 0 leaves the library default (PATHCTRL_THREADS or 1).
    std::size_t threads = 0;

    const std::string& model() const { return models.front(); }

    /// Parameters of `name` only: the keys it accepts, or all keys for
    /// models registered from code.
    ModelParams params_for(const std::string& name) const;

    Json to_json() const {
        Json j;
        j["experiment"] = experiment;
        if (models.size() == 1)
            j["model"] = models.front();
        else
            j["model"] = models;
        j["model_params"] = Json::object();
        for (const auto& [k, v] : model_params) j["model_params"][k] = v;
        j["grid"] = {{"t_start", grid.t_start}, {"t_end", grid.t_end}, {"n_steps", grid.n_steps}};
        j["paths"] = paths;
        j["seed"] = seed;
        j["penalty_ladder"] = penalty_ladder;
        j["p_ladder"] = p_ladder;
        j["bound_ladder"] = bound_ladder;
        j["output"] = output;
        j["format"] = format;
        j["threads"] = threads;
        return j;
    }
};

/// Parameter keys of the built-in models.
inline const std::map<std::string, std::set<std::string>>& model_param_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"toy1d", {"target", "x0"}},
        {"transaction", {"lambda", "r", "m", "Sigma", "p", "cash", "stock"}},
    };
    return keys;
}

inline ModelParams ExperimentConfig::params_for(const std::string& name) const {
    const auto& keys = model_param_keys();
    auto it = keys.find(name);
    if (it == keys.end()) return model_params;
    ModelParams out;
    for (const auto& [k, v] : model_params)
        if (it->second.count(k)) out[k] = v;
    return out;
}

namespace detail {

inline const std::set<std::string>& config_fields() {
    static const std::set<std::string> f{"experiment", "model",    "model_params", "grid",   "paths",  "seed",
                                         "penalty_ladder", "p_ladder", "bound_ladder", "output", "format", "threads"};
    return f;
}

inline double number_field(const Json& j, const std::string& field) {
    if (!j.is_number()) throw ConfigError(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(field, "expected a finite number");
    return v;
}

inline std::uint64_t count_field(const Json& j, const std::string& field, bool positive) {
    if (j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
        const auto v = j.get<std::uint64_t>();
        if (positive && v == 0) throw ConfigError(field, "must be positive");
        return v;
    }
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (v >= 0.0 && v == std::floor(v) && v < 1.8e19) {
            if (positive && v == 0.0) throw ConfigError(field, "must be positive");
            return static_cast<std::uint64_t>(v);
        }
    }
    throw ConfigError(field, positive ? "expected a positive integer" : "expected a non-negative integer");
}

inline std::string string_field(const Json& j, const std::string& field) {
    if (!j.is_string()) throw ConfigError(field, "expected a string");
    return j.get<std::string>();
}

inline std::vector<double> ladder_field(const Json& j, const std::string& field, double min_value, bool strict_min) {
    if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : j) {
        const double v = number_field(e, field);
        if (strict_min ? !(v > min_value) : !(v >= min_value)) {
            std::ostringstream os;
            os << "entries must be " << (strict_min ? "> " : ">= ") << min_value;
            throw ConfigError(field, os.str());
        }
        if (!out.empty() && !(v > out.back())) throw ConfigError(field, "must be strictly ascending");
        out.push_back(v);
    }
    return out;
}

}  // namespace detail

/// Parses a fully merged configuration document. Model keys are checked
/// against `registry`; the experiment name is checked by the caller.
inline ExperimentConfig parse_config(const Json& j, const ModelRegistry& registry = ModelRegistry::instance()) {
    if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
    for (const auto& [k, _] : j.items())
        if (!detail::config_fields().count(k)) throw ConfigError(k, "unknown field");
    auto need = [&j](const char* k) -> const Json& {
        if (!j.contains(k)) throw ConfigError(k, "missing field");
        return j.at(k);
    };

    ExperimentConfig c;
    c.experiment = detail::string_field(need("experiment"), "experiment");

    const Json& m = need("model");
    if (m.is_string()) {
        c.models.push_back(m.get<std::string>());
    } else if (m.is_array() && !m.empty()) {
        for (const auto& e : m) c.models.push_back(detail::string_field(e, "model"));
    } else {
        throw ConfigError("model", "expected a model key or a non-empty array of keys");
    }
    for (const auto& name : c.models)
        if (!registry.contains(name)) throw ConfigError("model", "unknown model key '" + name + "'");

    if (j.contains("model_params")) {
        const Json& p = j.at("model_params");
        if (!p.is_object()) throw ConfigError("model_params", "expected an object of numbers");
        for (const auto& [k, v] : p.items()) {
            bool known = false;
            for (const auto& name : c.models) {
                auto it = model_param_keys().find(name);
                known = known || it == model_param_keys().end() || it->second.count(k);
            }
            if (!known) throw ConfigError("model_params." + k, "not a parameter of the selected model");
            c.model_params[k] = detail::number_field(v, "model_params." + k);
        }
    }

    const Json& g = need("grid");
    if (!g.is_object()) throw ConfigError("grid", "expected an object");
    for (const auto& [k, _] : g.items())
        if (k != "t_start" && k != "t_end" && k != "n_steps") throw ConfigError("grid." + k, "unknown field");
    if (g.contains("t_start")) c.grid.t_start = detail::number_field(g.at("t_start"), "grid.t_start");
    if (g.contains("t_end")) c.grid.t_end = detail::number_field(g.at("t_end"), "grid.t_end");
    if (g.contains("n_steps")) c.grid.n_steps = detail::count_field(g.at("n_steps"), "grid.n_steps", true);
    if (!(c.grid.t_end > c.grid.t_start)) throw ConfigError("grid.t_end", "must exceed grid.t_start");

    c.paths = detail::count_field(need("paths"), "paths", true);
    c.seed = detail::count_field(need("seed"), "seed", false);
    if (j.contains("penalty_ladder")) c.penalty_ladder = detail::ladder_field(j.at("penalty_ladder"), "penalty_ladder", 0.0, false);
    if (j.contains("p_ladder")) c.p_ladder = detail::ladder_field(j.at("p_ladder"), "p_ladder", 0.0, true);
    if (j.contains("bound_ladder")) c.bound_ladder = detail::ladder_field(j.at("bound_ladder"), "bound_ladder", 0.0, true);
    c.output = detail::string_field(need("output"), "output");
    if (c.output.empty()) throw ConfigError("output", "must not be empty");
    c.format = detail::string_field(need("format"), "format");
    if (c.format != "csv" && c.format != "json") throw ConfigError("format", "expected 'csv' or 'json'");
    if (j.contains("threads")) c.threads = detail::count_field(j.at("threads"), "threads", false);
    return c;
}

}  // namespace pathctrl
