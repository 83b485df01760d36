#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/model.hpp"
#include "pathctrl/parallel.hpp"
#include "pathctrl/quadrature.hpp"
#include "pathctrl/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace pathctrl {

struct ValueEstimate {
    enum class Method { grid_dp, mc_policy, bsde };

    double value = 0.0;
    /// Monte Carlo standard error; 0 for deterministic oracles.
    double se = 0.0;
    Method method = Method::grid_dp;
    std::map<std::string, double> meta;
};

inline const char* method_name(ValueEstimate::Method m) {
    switch (m) {
        case ValueEstimate::Method::grid_dp: return "grid_dp";
        case ValueEstimate::Method::mc_policy: return "mc_policy";
        case ValueEstimate::Method::bsde: return "bsde";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Tensor space grid with multilinear interpolation.

class SpaceGrid {
public:
    SpaceGrid() = default;
    SpaceGrid(std::vector<std::pair<double, double>> box, std::size_t n) : box_(std::move(box)), n_(n) {
        if (box_.empty() || box_.size() > 2) throw PreconditionError("grid DP supports d = 1 or 2");
        if (n_ < 3) throw PreconditionError("grid DP needs at least 3 points per dimension");
        for (const auto& [lo, hi] : box_)
            if (!(hi > lo)) throw PreconditionError("grid DP: empty state box");
        size_ = 1;
        for (std::size_t c = 0; c < box_.size(); ++c) size_ *= n_;
    }

    std::size_t dim() const noexcept { return box_.size(); }
    std::size_t points_per_dim() const noexcept { return n_; }
    std::size_t size() const noexcept { return size_; }
    double step(std::size_t c) const { return (box_[c].second - box_[c].first) / static_cast<double>(n_ - 1); }
    double lo(std::size_t c) const { return box_[c].first; }
    double hi(std::size_t c) const { return box_[c].second; }
    const std::vector<std::pair<double, double>>& box() const noexcept { return box_; }

    /// First coordinate varies fastest.
    Vector point(std::size_t flat) const {
        Vector x(static_cast<Eigen::Index>(dim()));
        for (std::size_t c = 0; c < dim(); ++c) {
            const std::size_t i = flat % n_;
            flat /= n_;
            x[static_cast<Eigen::Index>(c)] = coordinate(c, i);
        }
        return x;
    }

    double coordinate(std::size_t c, std::size_t i) const {
        return i + 1 == n_ ? box_[c].second : box_[c].first + static_cast<double>(i) * step(c);
    }

    bool contains(const Vector& x) const {
        for (std::size_t c = 0; c < dim(); ++c) {
            const double v = x[static_cast<Eigen::Index>(c)];
            if (v < box_[c].first || v > box_[c].second) return false;
        }
        return true;
    }

    /// Multilinear interpolation; constant extension outside the box.
    double interpolate(const std::vector<double>& table, const Vector& x) const {
        std::size_t cell[2] = {0, 0};
        double w[2] = {0.0, 0.0};
        for (std::size_t c = 0; c < dim(); ++c) locate(c, x[static_cast<Eigen::Index>(c)], cell[c], w[c]);
        if (dim() == 1) {
            if (w[0] == 0.0) return table[cell[0]];
            return (1.0 - w[0]) * table[cell[0]] + w[0] * table[cell[0] + 1];
        }
        auto at = [&](std::size_t i, std::size_t j) { return table[i + n_ * j]; };
        const double a = w[0] == 0.0 ? at(cell[0], cell[1]) : (1.0 - w[0]) * at(cell[0], cell[1]) + w[0] * at(cell[0] + 1, cell[1]);
        if (w[1] == 0.0) return a;
        const double b = w[0] == 0.0 ? at(cell[0], cell[1] + 1)
                                     : (1.0 - w[0]) * at(cell[0], cell[1] + 1) + w[0] * at(cell[0] + 1, cell[1] + 1);
        return (1.0 - w[1]) * a + w[1] * b;
    }

    std::size_t nearest(const Vector& x) const {
        std::size_t flat = 0, mul = 1;
        for (std::size_t c = 0; c < dim(); ++c) {
            const double r = (x[static_cast<Eigen::Index>(c)] - box_[c].first) / step(c);
            const auto i = static_cast<std::size_t>(std::clamp(std::round(r), 0.0, static_cast<double>(n_ - 1)));
            flat += i * mul;
            mul *= n_;
        }
        return flat;
    }

private:
    void locate(std::size_t c, double v, std::size_t& cell, double& w) const {
        const double r = (v - box_[c].first) / step(c);
        if (!(r > 0.0)) {
            cell = 0;
            w = 0.0;
            return;
        }
        if (r >= static_cast<double>(n_ - 1)) {
            cell = n_ - 1;
            w = 0.0;
            return;
        }
        const double k = std::round(r);
        if (std::abs(r - k) < 1e-10) {
            cell = static_cast<std::size_t>(k);
            w = 0.0;
            return;
        }
        cell = static_cast<std::size_t>(std::floor(r));
        w = r - static_cast<double>(cell);
    }

    std::vector<std::pair<double, double>> box_;
    std::size_t n_ = 0;
    std::size_t size_ = 0;
};

// ---------------------------------------------------------------------------
// Grid dynamic programming for Markovian models (d <= 2).

struct GridDpSpec {
    std::vector<std::pair<double, double>> state_box{{-3.5, 4.5}};
    std::size_t n_space = 201;
    /// Explicit control levels in [0, n]^d. Empty: the lattice {0, step, 2 step, ...} ∪ {n}
    /// per component, which is nested across bounds that are multiples of the step.
    std::vector<Vector> control_levels;
    double control_step = 0.25;
    int quadrature_nodes = 7;
    /// Reward rate r(t, x, ν) paid as r Δ per step; −∞ marks ν inadmissible.
    std::function<double(double, const Vector&, const Vector&)> running_reward;
};

/// Per-component lattice {0, step, ..., ⌊n/step⌋ step} ∪ {n}, lexicographic order.
inline std::vector<Vector> control_lattice(double n, std::size_t d, double step) {
    if (n < 0.0) throw PreconditionError("control bound must be >= 0");
    std::vector<double> axis{0.0};
    if (n > 0.0) {
        if (!(step > 0.0)) throw PreconditionError("control lattice step must be > 0");
        for (int i = 1; i * step < n - 1e-12 * std::max(1.0, n); ++i) axis.push_back(i * step);
        axis.push_back(n);
    }
    std::vector<Vector> out;
    std::size_t total = 1;
    for (std::size_t c = 0; c < d; ++c) total *= axis.size();
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vector v(static_cast<Eigen::Index>(d));
        std::size_t r = flat;
        for (std::size_t c = d; c-- > 0;) {
            v[static_cast<Eigen::Index>(c)] = axis[r % axis.size()];
            r /= axis.size();
        }
        out.push_back(v);
    }
    return out;
}

struct GridDpResult {
    TimeGrid grid{0.0, 1.0, 1};
    SpaceGrid space;
    std::vector<Vector> levels;
    std::vector<std::vector<double>> tables;  // per node k, values on `space`
    std::vector<std::vector<int>> policy;     // per step k, level index per space point
    ValueEstimate estimate;

    double value_at(std::size_t k, const Vector& x) const { return space.interpolate(tables.at(k), x); }

    /// Level chosen at the space node nearest to x.
    const Vector& control_at(std::size_t k, const Vector& x) const {
        return levels[static_cast<std::size_t>(policy.at(k)[space.nearest(x)])];
    }
};

namespace detail {

struct QuadratureTensor {
    std::vector<Vector> nodes;
    std::vector<double> weights;
};

inline QuadratureTensor quadrature_tensor(int n, std::size_t d) {
    const auto gh = gauss_hermite(n);
    QuadratureTensor q;
    std::size_t total = 1;
    for (std::size_t c = 0; c < d; ++c) total *= gh.nodes.size();
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vector xi(static_cast<Eigen::Index>(d));
        double w = 1.0;
        std::size_t r = flat;
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r % gh.nodes.size();
            r /= gh.nodes.size();
            xi[static_cast<Eigen::Index>(c)] = gh.nodes[i];
            w *= gh.weights[i];
        }
        q.nodes.push_back(xi);
        q.weights.push_back(w);
    }
    return q;
}

}  // namespace detail

/// v_K = U; v_k(x) = max_ν { r(t_k, x, ν) Δ + Σ_q w_q v_{k+1}(x + (μ + fν)Δ + σ√Δ ξ_q) }.
/// Ties go to the first level in lexicographic order (the smaller control).
inline GridDpResult solve_grid_dp(const ModelSpec& model, const TerminalFunctional& terminal, double n_bound,
                                  const GridDpSpec& spec, const TimeGrid& grid, const Vector& x0) {
    if (!model.markovian || !terminal.markovian) throw PreconditionError("grid DP requires a Markovian model and payoff");
    if (model.dim > 2) throw PreconditionError("grid DP supports d <= 2");
    if (spec.state_box.size() != model.dim) throw PreconditionError("grid DP: state box dimension does not match model");
    if (spec.quadrature_nodes < 7) throw PreconditionError("grid DP: use at least 7 quadrature nodes");
    if (static_cast<std::size_t>(x0.size()) != model.dim) throw PreconditionError("grid DP: x0 dimension does not match model");

    GridDpResult res;
    res.grid = grid;
    res.space = SpaceGrid(spec.state_box, spec.n_space);
    if (!res.space.contains(x0)) throw PreconditionError("grid DP: x0 lies outside the state box");
    res.levels = spec.control_levels.empty() ? control_lattice(n_bound, model.dim, spec.control_step) : spec.control_levels;
    if (res.levels.empty() || !res.levels.front().isZero()) throw PreconditionError("grid DP: control levels must start with 0");
    for (const auto& l : res.levels)
        if ((l.array() < 0.0).any() || (l.array() > n_bound).any())
            throw PreconditionError("grid DP: control level outside [0, n]");

    const auto quad = detail::quadrature_tensor(spec.quadrature_nodes, model.dim);
    const std::size_t P = res.space.size(), K = grid.n_steps(), L = res.levels.size();
    const double dt = grid.dt(), sqdt = std::sqrt(dt);

    res.tables.assign(K + 1, std::vector<double>(P));
    res.policy.assign(K, std::vector<int>(P, 0));
    for (std::size_t i = 0; i < P; ++i) res.tables[K][i] = terminal.at_point(res.space.point(i), grid.t_end());

    for (std::size_t k = K; k-- > 0;) {
        const double t = grid.node(k);
        const Matrix f = model.f(t);
        const auto& next = res.tables[k + 1];
        auto& cur = res.tables[k];
        auto& pol = res.policy[k];
        parallel_blocks(P, [&](std::size_t b, std::size_t e, std::size_t) {
            for (std::size_t i = b; i < e; ++i) {
                const Vector x = res.space.point(i);
                const auto h = PathHistory::at_point(t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
                const Vector mu = model.mu(t, h);
                const Matrix sig = model.sigma(t, h);
                std::vector<Vector> shocks;
                shocks.reserve(quad.nodes.size());
                for (const auto& xi : quad.nodes) shocks.push_back(sig * xi * sqdt);
                double best = -std::numeric_limits<double>::infinity();
                int arg = 0;
                for (std::size_t l = 0; l < L; ++l) {
                    double reward = 0.0;
                    if (spec.running_reward) {
                        const double r = spec.running_reward(t, x, res.levels[l]);
                        if (r == -std::numeric_limits<double>::infinity()) continue;
                        reward = r * dt;
                    }
                    const Vector m = x + (mu + f * res.levels[l]) * dt;
                    double s = 0.0;
                    for (std::size_t q = 0; q < shocks.size(); ++q)
                        s += quad.weights[q] * res.space.interpolate(next, m + shocks[q]);
                    s += reward;
                    if (s > best) {
                        best = s;
                        arg = static_cast<int>(l);
                    }
                }
                cur[i] = best;
                pol[i] = arg;
            }
        });
    }

    res.estimate.value = res.value_at(0, x0);
    res.estimate.se = 0.0;
    res.estimate.method = ValueEstimate::Method::grid_dp;
    res.estimate.meta = {{"n_bound", n_bound},
                         {"n_space", static_cast<double>(spec.n_space)},
                         {"n_steps", static_cast<double>(K)},
                         {"control_levels", static_cast<double>(L)},
                         {"quadrature_nodes", static_cast<double>(spec.quadrature_nodes)}};
    return res;
}

/// Feedback control reading the DP policy at the nearest space node.
inline ControlSpec dp_policy(const GridDpResult& dp, double n_bound) {
    const TimeGrid g = dp.grid;
    return ControlSpec::feedback(
        [&dp, g](double t, const PathHistory& h) -> Vector {
            const auto k = static_cast<std::size_t>(std::clamp(std::round((t - g.t_start()) / g.dt()), 0.0,
                                                               static_cast<double>(g.n_steps() - 1)));
            return dp.control_at(k, Vector(h.current()));
        },
        n_bound, dp.space.dim());
}

/// Fraction of paths that leave the box at some node.
inline double boundary_hit_rate(const Ensemble& e, const std::vector<std::pair<double, double>>& box) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < e.n_paths; ++j)
        for (std::size_t k = 0; k < e.n_nodes(); ++k) {
            bool out = false;
            for (std::size_t c = 0; c < e.dim; ++c) {
                const double v = e.value(j, k)[static_cast<Eigen::Index>(c)];
                out = out || v < box[c].first || v > box[c].second;
            }
            if (out) {
                ++hits;
                break;
            }
        }
    return static_cast<double>(hits) / static_cast<double>(e.n_paths);
}

/// Mean and SE of U under the controlled (strong) ensemble: a lower bound on v^n.
inline ValueEstimate estimate_value_mc(const ModelSpec& model, const TerminalFunctional& terminal,
                                       const ControlSpec& policy, SimulationPlan plan) {
    plan.control = policy;
    plan.weak_mode = false;
    const auto ens = simulate_forward(model, plan);
    const auto u = ens.evaluate(terminal);
    const auto ms = mean_se(u);
    ValueEstimate v;
    v.value = ms.mean;
    v.se = ms.se;
    v.method = ValueEstimate::Method::mc_policy;
    v.meta = {{"n_bound", policy.bound}, {"n_paths", static_cast<double>(plan.n_paths)},
              {"n_steps", static_cast<double>(plan.grid.n_steps())}};
    return v;
}

// ---------------------------------------------------------------------------
// Dynamic programming principle residual.

struct DppReport {
    double s = 0.0;
    double v_direct = 0.0;       // one sweep over [t, T] with n_space points
    double v_composite = 0.0;    // sweep over [t, s] on a refined space grid, terminal = table at s
    double residual = 0.0;
    double v_refined = 0.0;      // direct sweep with 2 n_space − 1 points
    double richardson_error = 0.0;
    double residual_refined = 0.0;
    double order = 0.0;
    bool below_bound = false;
};

namespace detail {

inline std::pair<double, double> dpp_level(const ModelSpec& model, const TerminalFunctional& U, double n_bound, double s,
                                           GridDpSpec spec, const TimeGrid& grid, const Vector& x0) {
    const auto ks = grid.index_of(s);
    if (!ks || *ks == 0 || *ks == grid.n_steps()) throw PreconditionError("dpp_residual: s must be an interior grid node");
    const auto direct = solve_grid_dp(model, U, n_bound, spec, grid, x0);
    const SpaceGrid coarse = direct.space;
    const std::vector<double> table_s = direct.tables[*ks];
    const auto mid = markov_terminal([coarse, table_s](const Vector& x) { return coarse.interpolate(table_s, x); });
    const TimeGrid leg(grid.t_start(), s, *ks);
    spec.n_space = 2 * spec.n_space - 1;
    const auto composite = solve_grid_dp(model, mid, n_bound, spec, leg, x0);
    return {direct.estimate.value, composite.estimate.value};
}

}  // namespace detail

/// Compares v^n(t, x) with max_ν E[v^n(s, ·)] where the outer leg is re-solved
/// on a finer space grid. The residual is then pure interpolation error on
/// [t, s] and is checked against twice the Richardson estimate
/// |v_N − v_{2N−1}|·4/3 of the interpolation error of v_N.
inline DppReport dpp_residual(const ModelSpec& model, const TerminalFunctional& U, double n_bound, double s,
                              const GridDpSpec& spec, const TimeGrid& grid, const Vector& x0) {
    if (!(s > grid.t_start() && s < grid.t_end())) throw PreconditionError("dpp_residual: need t < s < T");
    DppReport r;
    r.s = s;
    const auto [v1, c1] = detail::dpp_level(model, U, n_bound, s, spec, grid, x0);
    GridDpSpec fine = spec;
    fine.n_space = 2 * spec.n_space - 1;
    const auto [v2, c2] = detail::dpp_level(model, U, n_bound, s, fine, grid, x0);
    r.v_direct = v1;
    r.v_composite = c1;
    r.residual = std::abs(v1 - c1);
    r.v_refined = v2;
    r.residual_refined = std::abs(v2 - c2);
    r.richardson_error = std::abs(v1 - v2) * 4.0 / 3.0;
    r.order = r.residual_refined > 0.0 ? std::log2(r.residual / r.residual_refined)
                                       : std::numeric_limits<double>::infinity();
    r.below_bound = r.residual <= 2.0 * r.richardson_error;
    return r;
}

// ---------------------------------------------------------------------------
// Convex order of the perturbed chains.

struct ConvexOrderReport {
    double mean_p = 0.0;
    double mean_q = 0.0;
    double se_p = 0.0;
    double se_q = 0.0;
    /// SE of the per-path difference (shared increments).
    double se = 0.0;
    double z = 0.0;
    bool ordered = false;
    bool paths_identical = false;
    std::size_t n_paths = 0;
};

/// Simulates σ^p = η^p M + σ and σ^q = η^q M + σ with shared increments and
/// control and checks E[U(X^p)] <= E[U(X^q)] + 3 SE for concave U.
inline ConvexOrderReport convex_order_experiment(const ModelSpec& base, const ScalarFn& eta_p, const ScalarFn& eta_q,
                                                 const TimeMatrixFn& M, const TerminalFunctional& U,
                                                 const SimulationPlan& plan) {
    PerturbedModel pp{base, eta_p, M, 0.0}, pq{base, eta_q, M, 0.0};
    const auto ep = simulate_forward(pp, plan);
    const auto eq = simulate_forward(pq, plan);

    const std::size_t probe = std::min<std::size_t>(plan.n_paths, 256);
    for (std::size_t j = 0; j < probe; ++j)
        for (std::size_t k = 0; k < ep.grid.n_steps(); ++k) {
            const auto h = ep.history(j, k);
            const double a = eta_p(ep.grid.node(k), h), b = eta_q(ep.grid.node(k), h);
            if (a > b || b > 0.0) {
                std::ostringstream os;
                os << "convex order: need eta_p <= eta_q <= 0, got " << a << " and " << b << " at t=" << ep.grid.node(k);
                throw PreconditionError(os.str());
            }
        }

    auto up = ep.evaluate(U);
    auto uq = eq.evaluate(U);
    std::vector<double> diff(plan.n_paths);
    for (std::size_t j = 0; j < plan.n_paths; ++j) diff[j] = uq[j] - up[j];
    ConvexOrderReport r;
    const auto mp = mean_se(up), mq = mean_se(uq), md = mean_se(diff);
    r.mean_p = mp.mean;
    r.mean_q = mq.mean;
    r.se_p = mp.se;
    r.se_q = mq.se;
    r.se = md.se;
    r.z = md.se > 0.0 ? md.mean / md.se : 0.0;
    r.ordered = r.mean_p <= r.mean_q + 3.0 * r.se;
    r.paths_identical = ep.values == eq.values;
    r.n_paths = plan.n_paths;
    return r;
}

// ---------------------------------------------------------------------------
// Ladder of perturbed problems.

using EtaFamily = std::function<ScalarFn(double p)>;

struct DegenerateLadderReport {
    std::vector<double> p_list;
    std::vector<double> values;
    std::vector<double> se;
    std::vector<std::size_t> best_policy;
    std::vector<double> max_abs_eta;
    /// Per consecutive pair: v^{p_{i+1}} − v^{p_i} and its paired SE.
    std::vector<double> gaps;
    std::vector<double> gap_se;
    std::vector<double> gap_ratios;
    bool nondecreasing = true;
    double extrapolated_limit = 0.0;
};

/// v^p by policy search: the best of `candidates` under common random numbers,
/// for every p. Each estimate is a lower bound on the perturbed value.
inline DegenerateLadderReport degenerate_sup_ladder(const ModelSpec& base, const TimeMatrixFn& M, const EtaFamily& eta,
                                                    const TerminalFunctional& U, const std::vector<double>& p_list,
                                                    const std::vector<ControlSpec>& candidates,
                                                    const SimulationPlan& plan) {
    if (candidates.empty()) throw PreconditionError("degenerate ladder: no candidate policies");
    for (std::size_t i = 1; i < p_list.size(); ++i)
        if (!(p_list[i] > p_list[i - 1])) throw PreconditionError("degenerate ladder: p list must be strictly increasing");

    DegenerateLadderReport r;
    r.p_list = p_list;
    std::vector<std::vector<double>> chosen;
    for (double p : p_list) {
        PerturbedModel pm{base, eta(p), M, p};
        const ModelSpec m = pm.as_model();
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        std::vector<double> best_u;
        double sup_eta = 0.0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            SimulationPlan pl = plan;
            pl.control = candidates[c];
            pl.weak_mode = false;
            const auto ens = simulate_forward(m, pl);
            if (c == 0) {
                const std::size_t probe = std::min<std::size_t>(plan.n_paths, 256);
                for (std::size_t j = 0; j < probe; ++j)
                    for (std::size_t k = 0; k < ens.grid.n_steps(); ++k)
                        sup_eta = std::max(sup_eta, std::abs(pm.eta(ens.grid.node(k), ens.history(j, k))));
            }
            auto u = ens.evaluate(U);
            const double mean = mean_se(u).mean;
            if (mean > best) {
                best = mean;
                arg = c;
                best_u = std::move(u);
            }
        }
        r.values.push_back(best);
        r.se.push_back(mean_se(best_u).se);
        r.best_policy.push_back(arg);
        r.max_abs_eta.push_back(sup_eta);
        chosen.push_back(std::move(best_u));
    }
    for (std::size_t i = 1; i < r.max_abs_eta.size(); ++i)
        if (r.max_abs_eta[i] > r.max_abs_eta[i - 1] + 1e-15)
            throw PreconditionError("degenerate ladder: sup |eta^p| must decrease along the p list");

    for (std::size_t i = 1; i < p_list.size(); ++i) {
        std::vector<double> d(plan.n_paths);
        for (std::size_t j = 0; j < plan.n_paths; ++j) d[j] = chosen[i][j] - chosen[i - 1][j];
        const auto md = mean_se(d);
        r.gaps.push_back(r.values[i] - r.values[i - 1]);
        r.gap_se.push_back(md.se);
        r.nondecreasing = r.nondecreasing && r.gaps.back() >= -3.0 * md.se;
    }
    for (std::size_t i = 1; i < r.gaps.size(); ++i)
        r.gap_ratios.push_back(r.gaps[i - 1] != 0.0 ? r.gaps[i] / r.gaps[i - 1] : 0.0);

    r.extrapolated_limit = r.values.empty() ? 0.0 : r.values.back();
    if (!r.gap_ratios.empty() && !r.gaps.empty()) {
        double q = 0.0;
        for (double x : r.gap_ratios) q += x;
        q /= static_cast<double>(r.gap_ratios.size());
        if (q > 0.0 && q < 1.0) r.extrapolated_limit += r.gaps.back() * q / (1.0 - q);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Regularity probe.

using ValueFn = std::function<double(double t, const Vector& x)>;

struct RegularityReport {
    std::vector<double> h_norms;
    std::vector<double> space_diffs;
    std::vector<double> lipschitz_ratios;
    std::vector<double> tau_list;
    std::vector<double> time_diffs;
    /// Least-squares slope and intercept of log |Δv| on log τ (NaN when a difference is 0).
    double holder_exponent = std::numeric_limits<double>::quiet_NaN();
    double holder_constant = std::numeric_limits<double>::quiet_NaN();
};

/// Space: |v(t, x + h) − v(t, x)| / ‖h‖. Time: |v(t − τ, x) − v(t, x)|, i.e.
/// offsets are taken towards earlier times, so t = T probes the terminal layer.
inline RegularityReport regularity_probe(const ValueFn& v, double t, const Vector& x, const std::vector<Vector>& h_list,
                                         const std::vector<double>& tau_list) {
    RegularityReport r;
    const double base = v(t, x);
    for (const auto& h : h_list) {
        const double d = std::abs(v(t, x + h) - base);
        r.h_norms.push_back(h.norm());
        r.space_diffs.push_back(d);
        r.lipschitz_ratios.push_back(h.norm() > 0.0 ? d / h.norm() : 0.0);
    }
    r.tau_list = tau_list;
    bool positive = !tau_list.empty();
    for (double tau : tau_list) {
        const double d = std::abs(v(t - tau, x) - base);
        r.time_diffs.push_back(d);
        positive = positive && d > 0.0 && tau > 0.0;
    }
    if (positive && tau_list.size() >= 2) {
        const auto n = static_cast<double>(tau_list.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < tau_list.size(); ++i) {
            const double lx = std::log(tau_list[i]), ly = std::log(r.time_diffs[i]);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        r.holder_exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        r.holder_constant = std::exp((sy - r.holder_exponent * sx) / n);
    }
    return r;
}

/// Reads v(t, x) off a DP result; t must be a grid node.
inline ValueFn dp_value_fn(const GridDpResult& dp) {
    return [&dp](double t, const Vector& x) {
        const auto k = dp.grid.index_of(t);
        if (!k) throw GridMismatchError("dp_value_fn: time is not a grid node");
        return dp.value_at(*k, x);
    };
}

/// CSV rows `level,value,se`.
inline void write_ladder_csv(std::ostream& os, const std::vector<double>& levels, const std::vector<double>& values,
                             const std::vector<double>& se) {
    os.precision(17);
    os << "level,value,se\n";
    for (std::size_t i = 0; i < levels.size(); ++i) os << levels[i] << ',' << values[i] << ',' << se[i] << '\n';
}

}  // namespace pathctrl
