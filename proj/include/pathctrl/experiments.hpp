#pragma once

#include "pathctrl/bsde.hpp"
#include "pathctrl/config.hpp"
#include "pathctrl/control.hpp"
#include "pathctrl/core.hpp"
#include "pathctrl/facelift.hpp"
#include "pathctrl/model.hpp"
#include "pathctrl/parallel.hpp"
#include "pathctrl/pathspace.hpp"
#include "pathctrl/quadrature.hpp"
#include "pathctrl/regression.hpp"
#include "pathctrl/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace pathctrl {

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Rows are JSON arrays aligned with `columns`.
struct ResultTable {
    std::vector<std::string> columns;
    std::vector<Json> rows;
};

struct ExperimentResult {
    std::vector<Assertion> assertions;
    ResultTable table;

    void check(std::string name, bool ok, std::string detail) {
        assertions.push_back({std::move(name), ok, std::move(detail)});
    }
    bool passed() const {
        return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
    }
    const Assertion* find(const std::string& name) const {
        for (const auto& a : assertions)
            if (a.name == name) return &a;
        return nullptr;
    }
};

using ExperimentRunner = std::function<ExperimentResult(const ExperimentConfig&)>;

struct ExperimentInfo {
    std::string name;
    std::string summary;
    /// The result the experiment exercises.
    std::string anchor;
    /// Allowed model keys; empty allows any registered model.
    std::vector<std::string> models;
    bool multi_model = false;
    Json defaults;
    ExperimentRunner run;
    /// Models must carry a perturbation family.
    bool perturbed = false;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v + 0.0);
    return buf;
}

inline TimeGrid time_grid(const ExperimentConfig& c) { return {c.grid.t_start, c.grid.t_end, c.grid.n_steps}; }

inline ModelBundle make_bundle(const ExperimentConfig& c, const std::string& name) {
    try {
        return ModelRegistry::instance().make(name, c.params_for(name));
    } catch (const PreconditionError& e) {
        throw ConfigError("model_params", e.what());
    }
}

inline Vector start_state(const ExperimentConfig& c, const std::string& name, std::size_t dim) {
    const auto p = c.params_for(name);
    if (name == "toy1d") return Vector::Constant(1, param_or(p, "x0", 0.0));
    if (name == "transaction") {
        Vector x(3);
        x << param_or(p, "cash", 1.0), param_or(p, "stock", 1.0), 0.0;
        return x;
    }
    return Vector::Zero(static_cast<Eigen::Index>(dim));
}

inline SimulationPlan plan_for(const ExperimentConfig& c, const Vector& x0, std::uint64_t seed) {
    SimulationPlan plan;
    plan.grid = time_grid(c);
    plan.n_paths = c.paths;
    plan.seed = seed;
    plan.x0 = x0;
    plan.control = ControlSpec::none(static_cast<std::size_t>(x0.size()));
    return plan;
}

/// toy1d with U = −(x_T − target)².
struct Benchmark {
    ModelSpec model;
    TerminalFunctional terminal;
    double target = 1.0;
    double x0 = 0.0;
    double span = 1.0;
};

inline Benchmark benchmark(const ExperimentConfig& c) {
    auto b = make_bundle(c, "toy1d");
    const auto p = c.params_for("toy1d");
    return {b.model, b.terminal, param_or(p, "target", 1.0), param_or(p, "x0", 0.0), c.grid.t_end - c.grid.t_start};
}

/// ĝ(z) = −((z − target)⁺)², the facelift of −(z − target)² for f = 1.
inline double ghat(double z, double target) {
    const double e = std::max(z - target, 0.0);
    return -e * e;
}

/// E[ĝ(x0 + √span ξ)]: the large-penalty limit of the benchmark value.
inline double benchmark_limit(const Benchmark& b) {
    const double target = b.target;
    return gaussian_expectation([target](double z) { return ghat(z, target); }, b.x0, std::sqrt(b.span), {target},
                                1e-13);
}

inline GridDpSpec benchmark_dp(const Benchmark& b) {
    GridDpSpec spec;
    const double w = 3.5 * std::max(1.0, std::sqrt(b.span));
    spec.state_box = {{std::min(b.x0, b.target) - w, std::max(b.x0, b.target) + w}};
    return spec;
}

/// ν = clamp(target − x, 0, bound).
inline ControlSpec toward_target(double target, double bound) {
    return ControlSpec::feedback(
        [target, bound](double, const PathHistory& h) {
            return Vector::Constant(1, std::clamp(target - h.current()[0], 0.0, bound));
        },
        bound, 1);
}

/// Trades towards a fixed fraction of mark-to-market wealth in the stock account:
/// sells (direction 1) above it, buys (direction 2) below it.
inline ControlSpec rebalancing(double fraction, double gain, double bound) {
    return ControlSpec::feedback(
        [fraction, gain, bound](double, const PathHistory& h) {
            const auto x = h.current();
            const double gap = x[1] - fraction * (x[0] + x[1]);
            Vector v = Vector::Zero(3);
            v[0] = std::clamp(gain * gap, 0.0, bound);
            v[1] = std::clamp(-gain * gap, 0.0, bound);
            return v;
        },
        bound, 3);
}

inline ControlSpec bounded_feedback(const std::string& name, const ExperimentConfig& c, std::size_t dim) {
    if (name == "toy1d") return toward_target(param_or(c.params_for(name), "target", 1.0), 2.0);
    if (name == "transaction") return rebalancing(0.5, 2.0, 1.0);
    return ControlSpec::constant(Vector::Constant(static_cast<Eigen::Index>(dim), 0.5));
}

inline const PerturbedModel& require_perturbed(const ModelBundle& b, const std::string& experiment) {
    if (!b.perturbed) throw ConfigError("model", "experiment '" + experiment + "' needs a perturbed model (transaction)");
    return *b.perturbed;
}

inline std::string list_str(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
    return s + "]";
}

// ---------------------------------------------------------------------------
// simulate

inline void primitive_checks(ExperimentResult& r) {
    const double eps = std::numeric_limits<double>::epsilon();
    auto vec = [](std::initializer_list<double> xs) {
        Vector v(static_cast<Eigen::Index>(xs.size()));
        Eigen::Index i = 0;
        for (double x : xs) v[i++] = x;
        return v;
    };

    r.check("rho_examples", rho(vec({1, -2})) == 1.0 && rho(Vector::Zero(2)) == 0.0 && rho(vec({2, 3, -1})) == 5.0,
            "rho(1,-2)=" + fmt(rho(vec({1, -2}))) + " rho(0)=" + fmt(rho(Vector::Zero(2))) +
                " rho(2,3,-1)=" + fmt(rho(vec({2, 3, -1}))));

    const auto id = ConstraintSet::constant(Matrix::Identity(2, 2));
    const auto tc = ConstraintSet::constant(transaction_directions(0.1));
    const bool a = in_constraint_cone(vec({-1, -2}), 0.0, id);
    const bool b = in_constraint_cone(vec({0.1, -1}), 0.0, id);
    const bool c = in_constraint_cone(vec({1, 1, 0}), 0.0, tc);
    r.check("cone_membership_examples", a && !b && c,
            std::string("(-1,-2):") + (a ? "in" : "out") + " (0.1,-1):" + (b ? "in" : "out") +
                " transaction (1,1,0):" + (c ? "in" : "out"));

    const double d0 = support_function(Vector::Zero(2), 0.0, id);
    const double d1 = support_function(vec({1, 2}), 0.0, id);
    const double d2 = support_function(vec({-1, 0}), 0.0, id);
    r.check("delta_examples", d0 == 0.0 && d1 == 0.0 && std::isinf(d2) && d2 > 0.0,
            "delta(0)=" + fmt(d0) + " delta(1,2)=" + fmt(d1) + " delta(-1,0)=" + fmt(d2));

    const double l = liquidation(1.0, -1.0, 0.1);
    r.check("liquidation_example", std::abs(l - (-0.1)) <= 4.0 * eps, "l(1,-1)=" + fmt(l));

    {
        PerturbedModel pm;
        pm.base = constant_1d(0.0, 0.0, 1.0);
        pm.base.dim = 2;
        pm.base.sigma = [](double, const PathHistory&) { return Matrix::Zero(2, 2); };
        pm.eta = constant_scalar(-1.0);
        pm.M = [](double) { return Matrix::Identity(2, 2); };
        const std::vector<double> x0{0.0, 0.0};
        const auto h = PathHistory::at_point(0.0, x0);
        const bool neg_id = perturbed_sigma(pm, 0.0, h) == -Matrix::Identity(2, 2);
        PerturbedModel zero = pm;
        zero.eta = constant_scalar(0.0);
        zero.base.sigma = [](double, const PathHistory&) { return Matrix::Constant(2, 2, 0.3); };
        const bool same = perturbed_sigma(zero, 0.0, h) == Matrix::Constant(2, 2, 0.3);
        r.check("perturbed_sigma_examples", neg_id && same,
                std::string("eta=0 unchanged:") + (same ? "yes" : "no") + " sigma=0,eta=-1,M=I gives -I:" +
                    (neg_id ? "yes" : "no"));
    }

    {
        const TimeGrid g(0.0, 1.0, 4);
        const auto cx = Path::constant(g, Vector::Constant(1, 2.0));
        const auto cy = Path::constant(g, Vector::Constant(1, -5.0));
        const auto joined = concat(cx, cy, 0.5);
        bool constant = true;
        for (std::size_t k = 0; k < joined.grid().n_nodes(); ++k) constant = constant && joined.value(k)[0] == 2.0;
        std::vector<Vector> lin, lin2;
        for (std::size_t k = 0; k <= 4; ++k) {
            lin.push_back(Vector::Constant(1, g.node(k)));
            lin2.push_back(Vector::Constant(1, 2.0 * g.node(k)));
        }
        const Path x(g, lin), y(g, lin2);
        const auto at_end = concat(x, y, 1.0);
        const auto glued = concat(x, y, 0.5);
        const double end_v = at_end.at(1.0)[0], glued_v = glued.at(1.0)[0];
        r.check("concat_examples", constant && end_v == 1.0 && std::abs(glued_v - 1.5) <= 4.0 * eps,
                std::string("constant:") + (constant ? "yes" : "no") + " s=t_end:" + fmt(end_v) +
                    " linear glue at 1:" + fmt(glued_v));
    }

    {
        const TimeGrid g1(0.0, 1.0, 1);
        const Path zero = Path::constant(TimeGrid(0.0, 1.0, 10), Vector::Zero(2));
        const Path two(g1, {Vector(Eigen::Vector2d(1.0, 0.0)), Vector(Eigen::Vector2d(0.0, -3.0))});
        const double s0 = sup_norm(zero, 1.0), s1 = sup_norm(two, 1.0);
        r.check("sup_norm_examples", s0 == 0.0 && s1 == 3.0, "zero:" + fmt(s0) + " (1,0),(0,-3):" + fmt(s1));

        const Path z1 = Path::constant(TimeGrid(0.0, 1.0, 100), Vector::Zero(1));
        const double same = d_infinity(0.5, z1, 0.5, z1);
        const double shifted = d_infinity(0.5, z1, 0.54, z1);
        r.check("d_infinity_examples", same == 0.0 && std::abs(shifted - 0.2) <= 4.0 * eps,
                "identical:" + fmt(same) + " time shift 0.04:" + fmt(shifted));
    }

    {
        const Path ab = interpolate({Vector::Constant(1, 1.0), Vector::Constant(1, 4.0)}, TimeGrid(0.0, 1.0, 1));
        const Path cc = interpolate({Vector::Constant(1, 3.0), Vector::Constant(1, 3.0), Vector::Constant(1, 3.0)},
                                    TimeGrid(0.0, 1.0, 2));
        const Path tri = interpolate({Vector::Constant(1, 0.0), Vector::Constant(1, 1.0), Vector::Constant(1, 0.0)},
                                     TimeGrid(0.0, 1.0, 2));
        const double mid = ab.at(0.5)[0], flat = cc.at(0.3)[0], quarter = tri.at(0.25)[0];
        r.check("interpolate_examples", mid == 2.5 && flat == 3.0 && quarter == 0.5,
                "midpoint:" + fmt(mid) + " constant:" + fmt(flat) + " hat at 0.25:" + fmt(quarter));
    }
}

inline ExperimentResult run_simulate(const ExperimentConfig& c) {
    ExperimentResult r;
    primitive_checks(r);

    const auto& name = c.model();
    const auto b = make_bundle(c, name);
    const std::size_t d = b.model.dim;
    const auto plan = plan_for(c, start_state(c, name, d), c.seed);
    const auto ens = simulate_forward(b.model, plan);
    const std::size_t K = ens.grid.n_steps();

    r.table.columns = {"k", "t", "component", "mean", "sd"};
    std::vector<double> col(ens.n_paths);
    for (std::size_t k = 0; k <= K; ++k)
        for (std::size_t comp = 0; comp < d; ++comp) {
            for (std::size_t j = 0; j < ens.n_paths; ++j) col[j] = ens.value(j, k)[static_cast<Eigen::Index>(comp)];
            const auto ms = mean_se(col);
            r.table.rows.push_back(Json::array({k, ens.grid.node(k), comp, ms.mean, ms.sd}));
        }

    const auto again = simulate_forward(b.model, plan);
    r.check("deterministic_replay", again.values == ens.values, "two runs with seed " + std::to_string(c.seed));

    const std::size_t saved = thread_count();
    set_thread_count(saved == 1 ? 3 : 1);
    const auto other = simulate_forward(b.model, plan);
    set_thread_count(saved);
    r.check("thread_invariance", other.values == ens.values, "thread counts " + std::to_string(saved) + " and " +
                                                                 std::to_string(saved == 1 ? 3 : 1));

    const bool zero_w = std::all_of(ens.log_weights.begin(), ens.log_weights.end(), [](double w) { return w == 0.0; });
    r.check("zero_control_log_weights", zero_w, "all log-weights exactly 0 under the null control");

    if (ens.n_paths >= 2 && K >= 2) {
        const Path p1 = ens.path(0), p2 = ens.path(1);
        const std::size_t k1 = K / 2, k2 = K;
        double sup_scan = 0.0, dist_scan = 0.0;
        for (std::size_t k = 0; k <= K; ++k) {
            if (k <= k1) sup_scan = std::max(sup_scan, p1.value(k).norm());
            dist_scan = std::max(dist_scan, (p1.value(std::min(k, k1)) - p2.value(std::min(k, k2))).norm());
        }
        dist_scan += std::sqrt(ens.grid.node(k2) - ens.grid.node(k1));
        const double sup_fn = sup_norm(p1, ens.grid.node(k1));
        const double dist_fn = d_infinity(ens.grid.node(k1), p1, ens.grid.node(k2), p2);
        r.check("sup_norm_node_scan", sup_fn == sup_scan, fmt(sup_fn) + " vs scan " + fmt(sup_scan));
        r.check("d_infinity_node_scan", std::abs(dist_fn - dist_scan) <= 1e-14 * std::max(1.0, dist_scan),
                fmt(dist_fn) + " vs scan " + fmt(dist_scan));
    }

    if (name == "toy1d") {
        std::vector<double> xt(ens.n_paths);
        for (std::size_t j = 0; j < ens.n_paths; ++j) xt[j] = ens.value(j, K)[0];
        const auto ms = mean_se(xt);
        std::vector<double> c2(ens.n_paths), c4(ens.n_paths);
        for (std::size_t j = 0; j < ens.n_paths; ++j) {
            const double e = xt[j] - ms.mean;
            c2[j] = e * e;
            c4[j] = e * e * e * e;
        }
        const double var = mean_se(c2).mean, m4 = mean_se(c4).mean;
        const double se = std::sqrt(std::max(m4 - var * var, 0.0) / static_cast<double>(ens.n_paths));
        const double expected = ens.grid.span();
        r.check("terminal_variance", std::abs(var - expected) <= 3.0 * se,
                "Var X_T=" + fmt(var) + " expected " + fmt(expected) + " SE " + fmt(se));
    }
    return r;
}

// ---------------------------------------------------------------------------
// weak_strong

inline ExperimentResult run_weak_strong(const ExperimentConfig& c) {
    ExperimentResult r;
    r.table.columns = {"model", "seed", "strong", "strong_se", "weak", "weak_se", "pooled_se", "z", "mean_weight"};
    for (const auto& name : c.models) {
        const auto b = make_bundle(c, name);
        const auto control = bounded_feedback(name, c, b.model.dim);
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto plan = plan_for(c, start_state(c, name, b.model.dim), c.seed + s);
            const auto rep = weak_strong_agreement(b.model, b.terminal, control, plan);
            r.table.rows.push_back(Json::array({name, c.seed + s, rep.strong_estimate, rep.strong_se, rep.weak_estimate,
                                                rep.weak_se, rep.pooled_se, rep.z, rep.mean_weight}));
            r.check(name + "_seed_" + std::to_string(c.seed + s), std::abs(rep.z) < 3.0,
                    "strong " + fmt(rep.strong_estimate) + " weak " + fmt(rep.weak_estimate) + " z " + fmt(rep.z));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// penalty_ladder and grid_dp

inline Ensemble benchmark_ensemble(const ExperimentConfig& c, const Benchmark& b) {
    return simulate_forward(b.model, plan_for(c, Vector::Constant(1, b.x0), c.seed));
}

inline ExperimentResult run_penalty_ladder(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const auto ens = benchmark_ensemble(c, b);
    const auto& ladder = c.penalty_ladder;
    const auto rep = penalty_monotonicity(b.model, b.terminal, ladder, ens, BasisSpec::markovian(32));
    const auto spec = benchmark_dp(b);
    const auto grid = time_grid(c);
    std::vector<double> dp;
    for (double n : ladder) dp.push_back(solve_grid_dp(b.model, b.terminal, n, spec, grid, Vector::Constant(1, b.x0)).estimate.value);

    r.table.columns = {"n", "substeps", "bsde_y0", "bsde_se", "dp_v0", "mean_violation_integral"};
    for (std::size_t i = 0; i < ladder.size(); ++i)
        r.table.rows.push_back(Json::array({ladder[i], bsde_substeps(b.model, ladder[i], grid, {}), rep.y0[i], rep.se[i],
                                            dp[i], rep.violations[i].integral}));

    r.check("bsde_monotone", rep.monotone, "Y0 " + list_str(rep.y0));
    bool dp_mono = true;
    for (std::size_t i = 1; i < dp.size(); ++i) dp_mono = dp_mono && dp[i] >= dp[i - 1];
    r.check("dp_monotone", dp_mono, "v0 " + list_str(dp));

    auto index_of = [&ladder](double v) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < ladder.size(); ++i)
            if (std::abs(ladder[i] - v) <= 1e-12 * std::max(1.0, v)) return i;
        return std::nullopt;
    };
    if (!ladder.empty()) {
        const double top = ladder.back();
        const auto i2 = index_of(top / 2.0), i4 = index_of(top / 4.0);
        if (i2 && i4) {
            const double hi = rep.y0.back() - rep.y0[*i2], lo = rep.y0[*i2] - rep.y0[*i4];
            r.check("saturation", hi <= 0.5 * lo || std::abs(hi) < 0.02,
                    "gap(" + fmt(top) + "," + fmt(top / 2) + ")=" + fmt(hi) + " gap(" + fmt(top / 2) + "," +
                        fmt(top / 4) + ")=" + fmt(lo));
        }
        const double limit = benchmark_limit(b);
        r.check("facelift_limit", std::abs(rep.y0.back() - limit) <= 0.05,
                "Y0(" + fmt(top) + ")=" + fmt(rep.y0.back()) + " oracle " + fmt(limit));
    }
    return r;
}

inline ExperimentResult run_grid_dp(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const auto ens = benchmark_ensemble(c, b);
    const auto spec = benchmark_dp(b);
    const auto grid = time_grid(c);
    const auto basis = BasisSpec::markovian(32);
    r.table.columns = {"n", "substeps", "bsde_y0", "bsde_se", "dp_v0", "difference", "tolerance"};
    for (double n : c.penalty_ladder) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto sol = solve_penalized(b.model, b.terminal, n, ens, basis);
        const auto dp = solve_grid_dp(b.model, b.terminal, n, spec, grid, Vector::Constant(1, b.x0));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double diff = sol.y0 - dp.estimate.value, tol = 3.0 * sol.y0_se + 0.05;
        r.table.rows.push_back(Json::array({n, sol.substeps, sol.y0, sol.y0_se, dp.estimate.value, diff, tol}));
        r.check("n_" + fmt(n), std::abs(diff) <= tol,
                "Y0 " + fmt(sol.y0) + " (SE " + fmt(sol.y0_se) + ") v0 " + fmt(dp.estimate.value));
        r.check("runtime_n_" + fmt(n), secs <= 60.0, fmt(secs) + " s");
    }
    const double exit_rate = boundary_hit_rate(ens, spec.state_box);
    r.check("state_box_exit_rate", exit_rate <= 1e-3, "fraction of uncontrolled paths leaving the box " + fmt(exit_rate));
    return r;
}

// ---------------------------------------------------------------------------
// dpp_residual

inline ExperimentResult run_dpp_residual(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const auto grid = time_grid(c);
    if (grid.n_steps() < 2) throw ConfigError("grid.n_steps", "dpp_residual needs at least 2 steps");
    const double s = grid.node(grid.n_steps() / 2);
    r.table.columns = {"bound", "s", "v_direct", "v_composite", "residual", "residual_refined", "richardson_error", "order"};
    for (double n : c.bound_ladder) {
        const auto rep = dpp_residual(b.model, b.terminal, n, s, benchmark_dp(b), grid, Vector::Constant(1, b.x0));
        r.table.rows.push_back(Json::array(
            {n, s, rep.v_direct, rep.v_composite, rep.residual, rep.residual_refined, rep.richardson_error, rep.order}));
        r.check("below_richardson_bound_" + fmt(n), rep.below_bound,
                "residual " + fmt(rep.residual) + " vs 2 x " + fmt(rep.richardson_error));
        r.check("refinement_order_" + fmt(n), rep.order >= 1.0,
                "residual " + fmt(rep.residual) + " -> " + fmt(rep.residual_refined) + ", order " + fmt(rep.order));
    }
    return r;
}

// ---------------------------------------------------------------------------
// convex_order and degenerate_ladder

inline ScalarFn eta_of(double p) { return constant_scalar(-1.0 / p); }

inline ExperimentResult run_convex_order(const ExperimentConfig& c) {
    ExperimentResult r;
    if (c.p_ladder.size() < 2) throw ConfigError("p_ladder", "convex_order needs at least two entries");
    const auto b = make_bundle(c, c.model());
    const auto& pm = require_perturbed(b, c.experiment);
    auto plan = plan_for(c, start_state(c, c.model(), pm.base.dim), c.seed);
    plan.control = rebalancing(0.5, 2.0, 1.0);

    r.table.columns = {"p", "q", "mean_p", "mean_q", "se_p", "se_q", "se_difference", "z"};
    for (std::size_t i = 0; i + 1 < c.p_ladder.size(); ++i) {
        const double p = c.p_ladder[i], q = c.p_ladder[i + 1];
        const auto rep = convex_order_experiment(pm.base, eta_of(p), eta_of(q), pm.M, b.terminal, plan);
        r.table.rows.push_back(Json::array({p, q, rep.mean_p, rep.mean_q, rep.se_p, rep.se_q, rep.se, rep.z}));
        r.check("ordered_p_" + fmt(p) + "_q_" + fmt(q), rep.ordered,
                "mean_p " + fmt(rep.mean_p) + " mean_q " + fmt(rep.mean_q) + " SE " + fmt(rep.se));
    }
    const double p0 = c.p_ladder.front(), q0 = c.p_ladder.back();
    const auto same = convex_order_experiment(pm.base, eta_of(p0), eta_of(p0), pm.M, b.terminal, plan);
    r.check("identity_p_equals_q", same.paths_identical && same.mean_p == same.mean_q,
            "p = q = " + fmt(p0) + ", max |mean_p - mean_q| " + fmt(std::abs(same.mean_p - same.mean_q)));
    const Matrix zero = Matrix::Zero(static_cast<Eigen::Index>(pm.base.dim), static_cast<Eigen::Index>(pm.base.dim));
    const auto flat = convex_order_experiment(pm.base, eta_of(p0), eta_of(q0), [zero](double) { return zero; },
                                              b.terminal, plan);
    r.check("identity_M_zero", flat.paths_identical && flat.mean_p == flat.mean_q,
            "M = 0 with p " + fmt(p0) + ", q " + fmt(q0) + ", |mean_p - mean_q| " + fmt(std::abs(flat.mean_p - flat.mean_q)));
    return r;
}

inline std::vector<ControlSpec> ladder_candidates() {
    return {ControlSpec::none(3), rebalancing(0.3, 2.0, 1.0), rebalancing(0.5, 2.0, 1.0), rebalancing(0.7, 2.0, 1.0)};
}

inline ExperimentResult run_degenerate_ladder(const ExperimentConfig& c) {
    ExperimentResult r;
    if (c.p_ladder.size() < 2) throw ConfigError("p_ladder", "degenerate_ladder needs at least two entries");
    const auto b = make_bundle(c, c.model());
    const auto& pm = require_perturbed(b, c.experiment);
    const auto candidates = ladder_candidates();
    r.table.columns = {"seed", "p", "value", "se", "best_policy"};
    std::vector<double> mean_gaps(c.p_ladder.size() - 1, 0.0), mean_gap_se(c.p_ladder.size() - 1, 0.0);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto plan = plan_for(c, start_state(c, c.model(), pm.base.dim), c.seed + s);
        const auto rep = degenerate_sup_ladder(pm.base, pm.M, eta_of, b.terminal, c.p_ladder, candidates, plan);
        for (std::size_t i = 0; i < c.p_ladder.size(); ++i)
            r.table.rows.push_back(Json::array({c.seed + s, c.p_ladder[i], rep.values[i], rep.se[i], rep.best_policy[i]}));
        r.check("nondecreasing_seed_" + std::to_string(c.seed + s), rep.nondecreasing, "values " + list_str(rep.values));
        for (std::size_t i = 0; i < rep.gaps.size(); ++i) {
            mean_gaps[i] += rep.gaps[i] / 3.0;
            mean_gap_se[i] += rep.gap_se[i] * rep.gap_se[i] / 9.0;
        }
    }
    if (mean_gaps.size() >= 2) {
        bool shrinking = true;
        for (std::size_t i = 1; i < mean_gaps.size(); ++i) shrinking = shrinking && mean_gaps[i] <= mean_gaps[i - 1];
        r.check("gaps_shrink_on_average", shrinking, "mean gaps over 3 seeds " + list_str(mean_gaps));
    }
    return r;
}

// ---------------------------------------------------------------------------
// facelift and shift_property

inline FaceliftSpec benchmark_facelift(const Benchmark& b) {
    FaceliftSpec spec;
    const double target = b.target;
    spec.payoff = [target](const Vector& x) {
        const double e = x[0] - target;
        return -e * e;
    };
    spec.directions = b.model.f(b.span);
    return spec;
}

inline AuxiliaryBundle benchmark_aux(const ExperimentConfig& c, const Benchmark& b) {
    AuxiliaryBundle aux;
    aux.dp = benchmark_dp(b);
    aux.t_end = c.grid.t_end;
    aux.n_steps = c.grid.n_steps;
    aux.bound_ladder = c.bound_ladder;
    return aux;
}

inline std::vector<Vector> shift_list() {
    std::vector<Vector> out;
    for (double i : {0.0, 0.25, 0.5, 1.0}) out.push_back(Vector::Constant(1, i));
    return out;
}

inline ExperimentResult run_facelift(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const auto spec = benchmark_facelift(b);

    for (double x : {0.0, 2.0}) {
        const auto pt = facelift(spec, Vector::Constant(1, x));
        const double oracle = ghat(x, b.target);
        r.check("ghat_at_" + fmt(x), std::abs(pt.value - oracle) <= 1e-6 && !pt.unbounded,
                "facelift " + fmt(pt.value) + " oracle " + fmt(oracle));
    }

    {
        const double lambda = 0.1;
        FaceliftSpec liq;
        liq.payoff = [lambda](const Vector& x) { return liquidation(x[0], x[1], lambda); };
        liq.directions = transaction_directions(lambda).topLeftCorner(2, 2);
        double worst = 0.0;
        bool below = false, unbounded = false;
        for (int i = 0; i <= 40; ++i)
            for (int j = 0; j <= 40; ++j) {
                const Vector x = Eigen::Vector2d(-2.0 + 0.1 * i, -2.0 + 0.1 * j);
                const auto pt = facelift(liq, x);
                worst = std::max(worst, pt.value - pt.payoff);
                below = below || pt.value < pt.payoff;
                unbounded = unbounded || pt.unbounded;
            }
        r.check("liquidation_own_facelift", worst <= 1e-4 && !below && !unbounded,
                "max (facelift - l) on 41x41 grid " + fmt(worst));
    }

    const auto aux = benchmark_aux(c, b);
    const Vector x0 = Vector::Constant(1, b.x0);
    const auto eq = facelift_equivalence_test(b.model, spec, c.grid.t_start, x0, aux);
    r.table.columns = {"bound", "y_payoff", "y_facelift", "gap"};
    for (std::size_t i = 0; i < eq.bounds.size(); ++i)
        r.table.rows.push_back(Json::array({eq.bounds[i], eq.y_payoff[i], eq.y_facelift[i], eq.gaps[i]}));
    r.check("equivalence_within_tolerance", eq.within_tolerance,
            "gap " + fmt(eq.gaps.back()) + " vs 2 x " + fmt(eq.interpolation_tol) + " (space " + fmt(eq.space_tol) +
                ", time " + fmt(eq.time_tol) + ", bound " + fmt(eq.bound_tol) + ")");
    if (eq.gaps.size() >= 3) r.check("equivalence_gap_shrinks", eq.gap_shrinks, "gaps " + list_str(eq.gaps));

    const auto sh = shift_property_test(b.model, spec, c.grid.t_start, x0, shift_list(), c.bound_ladder.back(), aux,
                                        eq.interpolation_tol);
    r.check("shift_inequality", sh.holds && sh.equality_at_zero,
            "Y " + fmt(sh.y) + " shifted " + list_str(sh.shifted) + " tolerance " + fmt(sh.tolerance));
    return r;
}

inline ExperimentResult run_shift_property(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const auto spec = benchmark_facelift(b);
    const auto aux = benchmark_aux(c, b);
    const Vector x0 = Vector::Constant(1, b.x0);
    const double tol = facelift_equivalence_test(b.model, spec, c.grid.t_start, x0, aux).interpolation_tol;
    const auto iotas = shift_list();
    const auto sh = shift_property_test(b.model, spec, c.grid.t_start, x0, iotas, c.bound_ladder.back(), aux, tol);

    r.table.columns = {"case", "iota", "y", "shifted", "slack"};
    for (std::size_t i = 0; i < iotas.size(); ++i)
        r.table.rows.push_back(Json::array({"benchmark", iotas[i][0], sh.y, sh.shifted[i], sh.y - sh.shifted[i]}));
    r.check("benchmark_inequality", sh.holds, "tolerance " + fmt(tol) + ", shifted " + list_str(sh.shifted));
    r.check("equality_at_zero", sh.equality_at_zero, "Y " + fmt(sh.y));

    // σ = 0 with an already facelifted payoff: the recursion is deterministic
    // and the inequality must hold with zero tolerance.
    const auto still = constant_1d(0.0, 0.0, 1.0, "still");
    FaceliftSpec hat = spec;
    const double target = b.target;
    hat.payoff = [target](const Vector& x) { return ghat(x[0], target); };
    const auto det = shift_property_test(still, hat, c.grid.t_start, x0, iotas, c.bound_ladder.back(), aux, 0.0);
    for (std::size_t i = 0; i < iotas.size(); ++i)
        r.table.rows.push_back(Json::array({"deterministic", iotas[i][0], det.y, det.shifted[i], det.y - det.shifted[i]}));
    r.check("deterministic_exact", det.holds && det.equality_at_zero, "shifted " + list_str(det.shifted));
    return r;
}

// ---------------------------------------------------------------------------
// regularity

inline ExperimentResult run_regularity(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto b = benchmark(c);
    const double target = b.target, T = c.grid.t_end;
    const auto grid = time_grid(c);

    FaceliftSpec hinge;
    hinge.payoff = [target](const Vector& x) { return -std::abs(x[0] - target); };
    hinge.directions = b.model.f(T);
    // The value at T− is the facelift of the terminal reward, so the DP starts there.
    const auto terminal = markov_terminal([hinge](const Vector& x) { return facelift(hinge, x).value; });

    GridDpSpec spec;
    spec.state_box = {{target - 4.5, target + 3.5}};
    spec.n_space = 401;
    const double bound = c.bound_ladder.back();
    spec.control_levels = {Vector::Zero(1), Vector::Constant(1, bound)};
    const std::vector<double> taus{0.01, 0.04, 0.16};
    for (double tau : taus)
        if (!grid.index_of(T - tau) || !(T - tau >= grid.t_start()))
            throw ConfigError("grid.n_steps", "the time offsets 0.01, 0.04, 0.16 before t_end must be grid nodes");
    const Vector x = Vector::Constant(1, target);
    const auto dp = solve_grid_dp(b.model, terminal, bound, spec, grid, x);
    const auto v = dp_value_fn(dp);

    const auto time_rep = regularity_probe(v, T, x, {}, taus);
    const double t_space = T - taus.back();
    std::vector<Vector> hs;
    for (double h : {0.05, 0.1, 0.2}) hs.push_back(Vector::Constant(1, h));
    const auto space_rep = regularity_probe(v, t_space, x, hs, {});

    // Oracle: pushing never helps a nonincreasing terminal, so v(t, y) =
    // E[Û(y + √(T − t) ξ)] with the closed-form facelift Û(z) = −(z − target)⁺.
    const double s = std::sqrt(T - t_space);
    auto oracle = [&](double y) {
        return gaussian_expectation([target](double z) { return -std::max(z - target, 0.0); }, y, s, {target}, 1e-12);
    };
    double lip = 0.0;
    for (int i = 0; i < 600; ++i) {
        const double y = target - 3.0 + 0.01 * i;
        lip = std::max(lip, std::abs(oracle(y + 0.01) - oracle(y)) / 0.01);
    }

    r.table.columns = {"probe", "offset", "difference", "ratio", "oracle"};
    for (std::size_t i = 0; i < taus.size(); ++i)
        r.table.rows.push_back(Json::array({"time", taus[i], time_rep.time_diffs[i], time_rep.time_diffs[i] / std::sqrt(taus[i]),
                                            std::sqrt(taus[i]) * normal_pdf(0.0)}));
    double worst = 0.0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const double h = hs[i][0];
        r.table.rows.push_back(Json::array({"space", h, space_rep.space_diffs[i], space_rep.lipschitz_ratios[i],
                                            std::abs(oracle(target + h) - oracle(target)) / h}));
        worst = std::max(worst, space_rep.lipschitz_ratios[i]);
    }
    r.check("holder_time_exponent", time_rep.holder_exponent >= 0.4 && time_rep.holder_exponent <= 0.6,
            "log-log slope " + fmt(time_rep.holder_exponent));
    r.check("lipschitz_space_ratio", worst <= 1.2 * lip,
            "max ratio " + fmt(worst) + " vs 1.2 x oracle constant " + fmt(lip));
    return r;
}

// ---------------------------------------------------------------------------
// transaction_demo

inline ExperimentResult run_transaction_demo(const ExperimentConfig& c) {
    ExperimentResult r;
    const auto p = c.params_for("transaction");
    const double lambda = param_or(p, "lambda", 0.1), Sigma = param_or(p, "Sigma", 0.2);
    const Matrix f = transaction_directions(lambda), M = transaction_M();
    const NormalStream normals(c.seed);
    const double eps = std::numeric_limits<double>::epsilon();

    r.table.columns = {"p", "states", "max_inverse_error", "max_inverse_f_error", "max_abs_M_sigma"};
    for (double pv : c.p_ladder) {
        TransactionModel tm;
        try {
            tm = build_transaction_model(lambda, constant_scalar(param_or(p, "r", 0.02)),
                                         constant_scalar(param_or(p, "m", 0.05)), constant_scalar(Sigma), pv);
        } catch (const PreconditionError& e) {
            throw ConfigError("model_params", e.what());
        }
        double inv_err = 0.0, f_err = 0.0, msig = 0.0;
        std::vector<double> x(3), z(3);
        for (std::size_t j = 0; j < c.paths; ++j) {
            normals.fill(j, 0, z.data(), 3);
            x = {std::exp(0.5 * z[0]), std::exp(0.5 * z[1]), z[2]};
            const auto h = PathHistory::at_point(0.0, x);
            const Matrix closed = transaction_sigma_p_inverse(Sigma * x[1], pv);
            inv_err = std::max(inv_err, (closed - perturbed_sigma_inverse(tm.model, 0.0, h)).cwiseAbs().maxCoeff());
            f_err = std::max(f_err, (closed * f + pv * f).cwiseAbs().maxCoeff());
            const Matrix s = tm.model.base.sigma(0.0, h);
            msig = std::max(msig, (M * s.transpose() + s * M).cwiseAbs().maxCoeff());
        }
        r.table.rows.push_back(Json::array({pv, c.paths, inv_err, f_err, msig}));
        r.check("closed_form_inverse_p_" + fmt(pv), inv_err <= 1e-10, "max abs error " + fmt(inv_err));
        r.check("inverse_times_f_p_" + fmt(pv), f_err <= 4.0 * eps * pv * (1.0 + lambda),
                "max |(sigma^p)^-1 f + p f| " + fmt(f_err));
        r.check("M_sigma_antisymmetric_p_" + fmt(pv), msig == 0.0, "max |M sigma^T + sigma M| " + fmt(msig));
    }
    return r;
}

inline Json defaults_for(const std::string& name, const std::string& model, std::size_t paths, std::size_t steps,
                         Json extra = Json::object()) {
    Json j;
    j["experiment"] = name;
    j["model"] = model;
    j["model_params"] = Json::object();
    j["grid"] = {{"t_start", 0.0}, {"t_end", 1.0}, {"n_steps", steps}};
    j["paths"] = paths;
    j["seed"] = 7;
    j["penalty_ladder"] = Json::array();
    j["p_ladder"] = Json::array();
    j["bound_ladder"] = Json::array();
    j["output"] = "out/" + name;
    j["format"] = "csv";
    j["threads"] = 0;
    j.merge_patch(extra);
    return j;
}

}  // namespace detail

inline const std::vector<ExperimentInfo>& experiment_registry() {
    using detail::defaults_for;
    static const std::vector<ExperimentInfo> reg{
        {"simulate", "Euler simulation of the uncontrolled model with exactness checks of the path-space primitives",
         "path space, conditioning map and controlled dynamics", {}, false,
         defaults_for("simulate", "toy1d", 10000, 50), detail::run_simulate},
        {"weak_strong", "strong (pushed state) against weak (Girsanov-weighted) estimate of a bounded feedback control",
         "equivalence of the strong and weak formulations", {}, true,
         defaults_for("weak_strong", "toy1d", 20000, 50, {{"model", {"toy1d", "transaction"}}}), detail::run_weak_strong},
        {"penalty_ladder", "penalised BSDE and grid DP values along an increasing penalty ladder on the facelift benchmark",
         "monotone penalisation and its facelift limit", {"toy1d"}, false,
         defaults_for("penalty_ladder", "toy1d", 20000, 50, {{"penalty_ladder", {0, 1, 2, 4, 8, 16}}}),
         detail::run_penalty_ladder},
        {"grid_dp", "LSMC solution of the penalised BSDE against the grid DP value at each penalty",
         "value function as the solution of the penalised BSDE", {"toy1d"}, false,
         defaults_for("grid_dp", "toy1d", 20000, 50, {{"penalty_ladder", {1, 4, 16}}}), detail::run_grid_dp},
        {"dpp_residual", "dynamic programming residual of the grid DP at the midpoint under space refinement",
         "dynamic programming principle of the approximating value", {"toy1d"}, false,
         defaults_for("dpp_residual", "toy1d", 1, 50, {{"bound_ladder", {4}}}), detail::run_dpp_residual},
        {"convex_order", "expected concave utility under two perturbation levels with shared increments",
         "convex ordering of perturbed volatilities", {}, false,
         defaults_for("convex_order", "transaction", 20000, 50, {{"p_ladder", {2, 8}}}), detail::run_convex_order,
         true},
        {"degenerate_ladder", "policy-search values of the perturbed problems along an increasing p ladder, three seeds",
         "degenerate volatility as the supremum over perturbations", {}, false,
         defaults_for("degenerate_ladder", "transaction", 10000, 50, {{"p_ladder", {2, 4, 8, 16}}}),
         detail::run_degenerate_ladder, true},
        {"facelift", "face-lift values, liquidation self-facelift, facelift equivalence and shift inequality",
         "face-lift of the terminal reward", {"toy1d"}, false,
         defaults_for("facelift", "toy1d", 1, 50, {{"bound_ladder", {1, 2, 4, 8, 16}}}), detail::run_facelift},
        {"shift_property", "shift inequality of the auxiliary value, benchmark and deterministic cases",
         "shift property of the auxiliary value", {"toy1d"}, false,
         defaults_for("shift_property", "toy1d", 1, 50, {{"bound_ladder", {4, 8, 16}}}), detail::run_shift_property},
        {"regularity", "time Hoelder exponent and space Lipschitz ratios of the value near the terminal kink",
         "regularity of the value function", {"toy1d"}, false,
         defaults_for("regularity", "toy1d", 1, 200, {{"bound_ladder", {4}}}), detail::run_regularity},
        {"transaction_demo", "closed-form perturbed volatility algebra of the transaction-cost model on random states",
         "utility maximisation under proportional transaction costs", {"transaction"}, false,
         defaults_for("transaction_demo", "transaction", 1000, 50, {{"p_ladder", {2, 4, 8, 16}}}),
         detail::run_transaction_demo},
    };
    return reg;
}

inline const ExperimentInfo& find_experiment(const std::string& name) {
    for (const auto& e : experiment_registry())
        if (e.name == name) return e;
    throw ConfigError("experiment", "unknown experiment '" + name + "'");
}

/// Defaults of the experiment, then `user`, then `overrides` (CLI flags).
inline ExperimentConfig load_config(const Json& user, const Json& overrides = Json::object()) {
    for (const Json* j : {&user, &overrides}) {
        if (j->is_null()) continue;
        if (!j->is_object()) throw ConfigError("config", "expected a JSON object");
        for (const auto& [k, _] : j->items())
            if (!detail::config_fields().count(k)) throw ConfigError(k, "unknown field");
    }
    std::string name;
    for (const Json* j : {&user, &overrides})
        if (j->is_object() && j->contains("experiment")) name = detail::string_field(j->at("experiment"), "experiment");
    if (name.empty()) throw ConfigError("experiment", "missing field");
    const auto& info = find_experiment(name);

    Json merged = info.defaults;
    if (user.is_object()) merged.merge_patch(user);
    if (overrides.is_object()) merged.merge_patch(overrides);
    auto cfg = parse_config(merged);

    if (cfg.models.size() > 1 && !info.multi_model)
        throw ConfigError("model", "experiment '" + name + "' takes a single model key");
    if (!info.models.empty())
        for (const auto& m : cfg.models)
            if (std::find(info.models.begin(), info.models.end(), m) == info.models.end())
                throw ConfigError("model", "experiment '" + name + "' does not support model '" + m + "'");
    for (const auto* field : {"penalty_ladder", "p_ladder", "bound_ladder"}) {
        const auto& def = info.defaults.at(field);
        const auto& got = field == std::string("penalty_ladder") ? cfg.penalty_ladder
                          : field == std::string("p_ladder")     ? cfg.p_ladder
                                                                 : cfg.bound_ladder;
        if (!def.empty() && got.empty()) throw ConfigError(field, "must not be empty for '" + name + "'");
    }
    for (const auto& m : cfg.models) {
        const auto b = detail::make_bundle(cfg, m);
        if (info.perturbed) detail::require_perturbed(b, name);
    }
    return cfg;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    if (cfg.threads > 0) set_thread_count(cfg.threads);
    return find_experiment(cfg.experiment).run(cfg);
}

namespace detail {

inline std::string csv_cell(const Json& v) {
    if (v.is_number_float()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        return buf;
    }
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace detail

inline void write_results_csv(std::ostream& os, const ResultTable& t) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_cell(row[i]);
        os << '\n';
    }
}

inline Json assertions_json(const ExperimentResult& r) {
    Json a = Json::array();
    for (const auto& x : r.assertions) a.push_back({{"name", x.name}, {"passed", x.passed}, {"detail", x.detail}});
    return a;
}

inline Json results_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
    Json j;
    j["experiment"] = cfg.experiment;
    j["columns"] = r.table.columns;
    j["rows"] = r.table.rows;
    j["assertions"] = assertions_json(r);
    j["passed"] = r.passed();
    return j;
}

/// Writes results.csv or results.json and manifest.json into cfg.output.
inline std::filesystem::path write_artifacts(const ExperimentConfig& cfg, const ExperimentResult& r, double wall_seconds) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("output", "cannot create directory '" + cfg.output + "': " + ec.message());
    const fs::path results = dir / (cfg.format == "json" ? "results.json" : "results.csv");
    {
        std::ofstream os(results, std::ios::binary);
        if (!os) throw ConfigError("output", "cannot write '" + results.string() + "'");
        if (cfg.format == "json")
            os << results_json(cfg, r).dump(2) << '\n';
        else
            write_results_csv(os, r.table);
    }
    Json m;
    m["tool"] = "pathctrl";
    m["version"] = kVersion;
    m["experiment"] = cfg.experiment;
    m["config"] = cfg.to_json();
    m["results"] = results.filename().string();
    m["assertions"] = assertions_json(r);
    m["passed"] = r.passed();
    m["wall_time_seconds"] = wall_seconds;
    std::ofstream ms(dir / "manifest.json", std::ios::binary);
    ms << m.dump(2) << '\n';
    return results;
}

}  // namespace pathctrl
