#include "pathctrl/experiments.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace pathctrl;
namespace fs = std::filesystem;

namespace {

std::string field_of(const Json& user, const Json& overrides = Json::object()) {
    try {
        load_config(user, overrides);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "";
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(PATHCTRL_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("pathctrl_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Registry, ListsAllExperiments) {
    const auto& reg = experiment_registry();
    EXPECT_GE(reg.size(), 11u);
    for (const auto& e : reg) {
        EXPECT_FALSE(e.anchor.empty()) << e.name;
        EXPECT_FALSE(e.summary.empty()) << e.name;
        const auto cfg = load_config({{"experiment", e.name}});
        EXPECT_EQ(cfg.experiment, e.name);
    }
    EXPECT_EQ(field_of({{"experiment", "nope"}}), "experiment");
}

TEST(Config, ErrorsNameTheField) {
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"model", "nope"}}), "model");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"colour", 1}}), "colour");
    EXPECT_EQ(field_of({{"experiment", "penalty_ladder"}, {"penalty_ladder", {0, 2, 1}}}), "penalty_ladder");
    EXPECT_EQ(field_of({{"experiment", "penalty_ladder"}, {"penalty_ladder", Json::array()}}), "penalty_ladder");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"paths", 0}}), "paths");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"format", "xml"}}), "format");
    EXPECT_EQ(field_of({{"experiment", "convex_order"}, {"model", "toy1d"}}), "model");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"model", {"toy1d", "transaction"}}}), "model");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"grid", {{"t_start", 1.0}, {"t_end", 0.5}}}}), "grid.t_end");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"grid", {{"dt", 0.1}}}}), "grid.dt");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"model_params", {{"lambda", 0.1}}}}), "model_params.lambda");
    EXPECT_EQ(field_of({{"experiment", "convex_order"}, {"model_params", {{"lambda", -1.0}}}}), "model_params");
    EXPECT_EQ(field_of({{"experiment", "simulate"}, {"seed", -3}}), "seed");
    EXPECT_EQ(field_of(Json::object()), "experiment");
}

TEST(Config, OverridesTakePrecedence) {
    const Json user{{"experiment", "penalty_ladder"}, {"paths", 500}, {"seed", 3}, {"grid", {{"n_steps", 20}}}};
    const auto cfg = load_config(user, {{"seed", 9}, {"penalty_ladder", {0, 4}}});
    EXPECT_EQ(cfg.paths, 500u);
    EXPECT_EQ(cfg.seed, 9u);
    EXPECT_EQ(cfg.grid.n_steps, 20u);
    EXPECT_EQ(cfg.grid.t_end, 1.0);
    EXPECT_EQ(cfg.penalty_ladder, (std::vector<double>{0, 4}));
    EXPECT_EQ(cfg.model(), "toy1d");
    const auto round = load_config(cfg.to_json());
    EXPECT_EQ(round.to_json(), cfg.to_json());
}

TEST(Config, ParamsFilteredPerModel) {
    const auto cfg = load_config({{"experiment", "weak_strong"}, {"model_params", {{"target", 2.0}, {"p", 4.0}}}});
    EXPECT_EQ(cfg.params_for("toy1d"), (ModelParams{{"target", 2.0}}));
    EXPECT_EQ(cfg.params_for("transaction"), (ModelParams{{"p", 4.0}}));
}

TEST(Artifacts, CsvAndManifest) {
    const auto dir = scratch("artifacts");
    auto cfg = load_config({{"experiment", "transaction_demo"}, {"output", dir.string()}, {"paths", 50}});
    const auto r = run_experiment(cfg);
    EXPECT_TRUE(r.passed());
    write_artifacts(cfg, r, 0.5);
    EXPECT_TRUE(fs::exists(dir / "results.csv"));
    const auto m = Json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(m["experiment"], "transaction_demo");
    EXPECT_EQ(m["passed"], true);
    EXPECT_EQ(m["config"]["paths"], 50);
    cfg.format = "json";
    write_artifacts(cfg, r, 0.5);
    EXPECT_TRUE(Json::parse(slurp(dir / "results.json")).contains("rows"));
}

TEST(Cli, RerunIsByteIdentical) {
    const auto a = scratch("rerun_a"), b = scratch("rerun_b");
    ASSERT_EQ(run_cli("run -e transaction_demo --seed 3 -o " + a.string(), a / "log"), 0);
    ASSERT_EQ(run_cli("run -e transaction_demo --seed 3 -o " + b.string(), b / "log"), 0);
    EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
    EXPECT_FALSE(slurp(a / "results.csv").empty());
}

TEST(Cli, ExitCodes) {
    const auto d = scratch("exit");
    EXPECT_EQ(run_cli("run -e simulate --model nope -o " + d.string(), d / "log"), 2);
    EXPECT_NE(slurp(d / "log").find("model"), std::string::npos);
    EXPECT_EQ(run_cli("run -e simulate --bogus-flag", d / "log"), 2);
    EXPECT_EQ(run_cli("run -e penalty_ladder --penalty-ladder 0,1 --paths 2000 --steps 10 -o " + d.string(), d / "log"), 1);
    EXPECT_NE(slurp(d / "log").find("FAIL"), std::string::npos);
    EXPECT_EQ(run_cli("validate -e grid_dp --paths 100", d / "log"), 0);
    EXPECT_EQ(Json::parse(slurp(d / "log"))["paths"], 100);
}

TEST(Cli, ConfigFileAndFlags) {
    const auto d = scratch("config");
    {
        std::ofstream os(d / "cfg.json");
        os << R"({"experiment": "simulate", "paths": 700, "seed": 4})";
    }
    ASSERT_EQ(run_cli("validate -c " + (d / "cfg.json").string() + " --seed 5", d / "log"), 0);
    const auto j = Json::parse(slurp(d / "log"));
    EXPECT_EQ(j["paths"], 700);
    EXPECT_EQ(j["seed"], 5);
}

TEST(Cli, ListShowsEveryExperiment) {
    const auto d = scratch("list");
    ASSERT_EQ(run_cli("list", d / "log"), 0);
    const auto out = slurp(d / "log");
    for (const auto& e : experiment_registry()) EXPECT_NE(out.find(e.name), std::string::npos) << e.name;
    EXPECT_EQ(static_cast<std::size_t>(std::count(out.begin(), out.end(), '\n')), experiment_registry().size());
}

TEST(Defaults, EveryExperimentPassesWithinBudget) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& e : experiment_registry()) {
        const auto r = run_experiment(load_config({{"experiment", e.name}}));
        for (const auto& a : r.assertions) EXPECT_TRUE(a.passed) << e.name << "/" << a.name << ": " << a.detail;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LE(secs, 120.0);
}
