#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/model.hpp"
#include "pathctrl/parallel.hpp"
#include "pathctrl/pathspace.hpp"
#include "pathctrl/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace pathctrl {

/// Bounded control rate ν with 0 <= ν_i <= bound.
struct ControlSpec {
    enum class Kind { none, constant, feedback, open_loop_table };

    using Evaluator = std::function<Vector(std::size_t step, double t, const PathHistory& x)>;

    Kind kind = Kind::none;
    double bound = 0.0;
    std::size_t dim = 1;
    Evaluator evaluator;

    static ControlSpec none(std::size_t d) {
        ControlSpec c;
        c.kind = Kind::none;
        c.dim = d;
        c.evaluator = [d](std::size_t, double, const PathHistory&) { return Vector::Zero(static_cast<Eigen::Index>(d)); };
        return c;
    }

    static ControlSpec constant(Vector level) {
        ControlSpec c;
        c.kind = Kind::constant;
        c.dim = static_cast<std::size_t>(level.size());
        c.bound = level.size() ? level.maxCoeff() : 0.0;
        c.evaluator = [level = std::move(level)](std::size_t, double, const PathHistory&) { return level; };
        return c;
    }

    static ControlSpec feedback(std::function<Vector(double, const PathHistory&)> fn, double bound, std::size_t d) {
        ControlSpec c;
        c.kind = Kind::feedback;
        c.dim = d;
        c.bound = bound;
        c.evaluator = [fn = std::move(fn)](std::size_t, double t, const PathHistory& x) { return fn(t, x); };
        return c;
    }

    static ControlSpec open_loop(std::vector<Vector> table) {
        ControlSpec c;
        c.kind = Kind::open_loop_table;
        c.dim = table.empty() ? 1 : static_cast<std::size_t>(table.front().size());
        for (const auto& v : table) c.bound = std::max(c.bound, v.maxCoeff());
        c.evaluator = [table = std::move(table)](std::size_t k, double, const PathHistory&) {
            if (k >= table.size()) throw PreconditionError("open-loop control table shorter than the grid");
            return table[k];
        };
        return c;
    }

    bool is_zero() const { return kind == Kind::none; }

    Vector operator()(std::size_t k, double t, const PathHistory& x) const {
        Vector v = evaluator(k, t, x);
        const double tol = 1e-12 * std::max(1.0, bound);
        if (static_cast<std::size_t>(v.size()) != dim || (v.array() < -tol).any() || (v.array() > bound + tol).any()) {
            std::ostringstream os;
            os << "control value outside [0, " << bound << "] at t=" << t;
            throw PreconditionError(os.str());
        }
        return v;
    }
};

struct SimulationPlan {
    TimeGrid grid{0.0, 1.0, 1};
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    Vector x0 = Vector::Zero(1);
    /// Frozen history up to grid.t_start; when set, its terminal value replaces x0.
    std::optional<Path> initial_segment;
    ControlSpec control = ControlSpec::none(1);
    /// Simulate the uncontrolled SDE and carry the Girsanov log-weight of `control`.
    bool weak_mode = false;

    Vector start() const {
        if (initial_segment) return initial_segment->value(initial_segment->grid().n_steps());
        return x0;
    }
};

/// Simulated paths with their Brownian increments, applied (or weighting)
/// controls and log-weights. Flat row-major storage per path.
struct Ensemble {
    TimeGrid grid{0.0, 1.0, 1};
    std::size_t dim = 1;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;        // n_paths × n_nodes × dim
    std::vector<double> increments;    // n_paths × n_steps × dim
    std::vector<double> controls;      // n_paths × n_steps × dim
    std::vector<double> log_weights;   // n_paths
    std::optional<Path> prefix;

    std::size_t n_nodes() const { return grid.n_nodes(); }

    std::span<const double> path_values(std::size_t j) const {
        return std::span<const double>(values).subspan(j * n_nodes() * dim, n_nodes() * dim);
    }

    /// History of path j up to (and including) node k.
    PathHistory history(std::size_t j, std::size_t k) const {
        return PathHistory(grid.t_start(), grid.dt(), dim, path_values(j).first((k + 1) * dim),
                           prefix ? &*prefix : nullptr);
    }

    Eigen::Map<const Vector> value(std::size_t j, std::size_t k) const {
        return Eigen::Map<const Vector>(values.data() + (j * n_nodes() + k) * dim, static_cast<Eigen::Index>(dim));
    }

    Eigen::Map<const Vector> increment(std::size_t j, std::size_t k) const {
        return Eigen::Map<const Vector>(increments.data() + (j * grid.n_steps() + k) * dim,
                                        static_cast<Eigen::Index>(dim));
    }

    Eigen::Map<const Vector> control(std::size_t j, std::size_t k) const {
        return Eigen::Map<const Vector>(controls.data() + (j * grid.n_steps() + k) * dim,
                                        static_cast<Eigen::Index>(dim));
    }

    Path path(std::size_t j) const {
        auto v = path_values(j);
        return Path(grid, dim, std::vector<double>(v.begin(), v.end()));
    }

    /// Terminal functional per path (on the concatenated history).
    std::vector<double> evaluate(const TerminalFunctional& U) const {
        std::vector<double> out(n_paths);
        parallel_blocks(n_paths, [&](std::size_t b, std::size_t e, std::size_t) {
            for (std::size_t j = b; j < e; ++j) out[j] = U(history(j, grid.n_steps()));
        });
        return out;
    }
};

namespace detail {

inline std::string at_path_step(std::size_t j, std::size_t k, const std::string& what) {
    std::ostringstream os;
    os << "path " << j << ", step " << k << ": " << what;
    return os.str();
}

}  // namespace detail

/// Euler–Maruyama on the grid. Coefficients are evaluated on the interpolated
/// history (initial segment ⊗ simulated nodes). Increment k of path j comes
/// from the counter (seed, j, k) only.
inline Ensemble simulate_forward(const ModelSpec& model, const SimulationPlan& plan) {
    const std::size_t d = model.dim;
    if (static_cast<std::size_t>(plan.start().size()) != d)
        throw PreconditionError("simulate_forward: initial state dimension does not match model");
    if (plan.control.dim != d) throw PreconditionError("simulate_forward: control dimension does not match model");
    if (plan.n_paths == 0) throw PreconditionError("simulate_forward: n_paths must be >= 1");
    if (plan.initial_segment) {
        const auto& g = plan.initial_segment->grid();
        if (std::abs(g.t_end() - plan.grid.t_start()) > 1e-12 * std::max(1.0, g.span()))
            throw GridMismatchError("simulate_forward: initial segment must end at grid.t_start");
        if (plan.initial_segment->dim() != d) throw GridMismatchError("simulate_forward: initial segment dimension");
    }

    Ensemble ens;
    ens.grid = plan.grid;
    ens.dim = d;
    ens.n_paths = plan.n_paths;
    ens.seed = plan.seed;
    ens.prefix = plan.initial_segment;
    const std::size_t K = plan.grid.n_steps();
    const std::size_t N = plan.grid.n_nodes();
    ens.values.assign(plan.n_paths * N * d, 0.0);
    ens.increments.assign(plan.n_paths * K * d, 0.0);
    ens.controls.assign(plan.n_paths * K * d, 0.0);
    ens.log_weights.assign(plan.n_paths, 0.0);

    const NormalStream normals(plan.seed);
    const double dt = plan.grid.dt();
    const double sqdt = std::sqrt(dt);
    const Vector x0 = plan.start();
    const bool zero_control = plan.control.is_zero();

    parallel_blocks(plan.n_paths, [&](std::size_t begin, std::size_t end, std::size_t) {
        std::vector<double> z(d);
        for (std::size_t j = begin; j < end; ++j) {
            double* xs = ens.values.data() + j * N * d;
            std::copy(x0.data(), x0.data() + d, xs);
            double logw = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                const double t = plan.grid.node(k);
                const PathHistory h(plan.grid.t_start(), dt, d, std::span<const double>(xs, (k + 1) * d),
                                    ens.prefix ? &*ens.prefix : nullptr);
                normals.fill(j, static_cast<std::uint32_t>(k), z.data(), d);
                double* db = ens.increments.data() + (j * K + k) * d;
                for (std::size_t c = 0; c < d; ++c) db[c] = sqdt * z[c];
                const Eigen::Map<const Vector> dB(db, static_cast<Eigen::Index>(d));
                try {
                    const Vector mu = model.mu(t, h);
                    const Matrix sig = model.sigma(t, h);
                    Vector drift = mu;
                    if (!zero_control) {
                        const Vector nu = plan.control(k, t, h);
                        std::copy(nu.data(), nu.data() + d, ens.controls.data() + (j * K + k) * d);
                        const Vector push = model.f(t) * nu;
                        if (plan.weak_mode) {
                            Eigen::FullPivLU<Matrix> lu(sig);
                            if (!lu.isInvertible()) throw SingularVolatilityError("volatility is singular");
                            const Vector theta = lu.solve(push);
                            logw += theta.dot(dB) - 0.5 * theta.squaredNorm() * dt;
                        } else {
                            drift += push;
                        }
                    }
                    Eigen::Map<const Vector> xk(xs + k * d, static_cast<Eigen::Index>(d));
                    const Vector next = xk + drift * dt + sig * dB;
                    std::copy(next.data(), next.data() + d, xs + (k + 1) * d);
                } catch (const SingularVolatilityError& e) {
                    throw SingularVolatilityError(detail::at_path_step(j, k, e.what()));
                } catch (const PreconditionError& e) {
                    throw PreconditionError(detail::at_path_step(j, k, e.what()));
                } catch (const std::exception& e) {
                    throw Error(detail::at_path_step(j, k, e.what()));
                }
            }
            ens.log_weights[j] = logw;
        }
    });
    return ens;
}

inline Ensemble simulate_forward(const PerturbedModel& model, const SimulationPlan& plan) {
    return simulate_forward(model.as_model(), plan);
}

/// log dℙ^ν/dℙ₀ along the uncontrolled simulation: Σ_k θ_k·ΔB_k − ½‖θ_k‖²Δ,
/// θ_k = σ⁻¹(X̄_k) f ν_k.
inline std::vector<double> girsanov_weights(const ModelSpec& model, SimulationPlan plan, const ControlSpec& control) {
    plan.control = control;
    plan.weak_mode = true;
    return simulate_forward(model, plan).log_weights;
}

struct WeakStrongReport {
    double strong_estimate = 0.0;
    double strong_se = 0.0;
    double weak_estimate = 0.0;
    double weak_se = 0.0;
    /// SE of the per-path difference (the arms share increments).
    double pooled_se = 0.0;
    double z = 0.0;
    double mean_weight = 0.0;
    double mean_weight_se = 0.0;
};

/// Strong arm: controlled SDE, mean of U. Weak arm: uncontrolled SDE, mean of
/// exp(logw)·U. Both arms use the same seed.
inline WeakStrongReport weak_strong_agreement(const ModelSpec& model, const TerminalFunctional& U,
                                              const ControlSpec& control, SimulationPlan plan) {
    plan.control = control;
    plan.weak_mode = false;
    const Ensemble strong = simulate_forward(model, plan);
    plan.weak_mode = true;
    const Ensemble weak = simulate_forward(model, plan);

    const auto us = strong.evaluate(U);
    auto uw = weak.evaluate(U);
    std::vector<double> w(plan.n_paths), diff(plan.n_paths);
    for (std::size_t j = 0; j < plan.n_paths; ++j) {
        w[j] = std::exp(weak.log_weights[j]);
        uw[j] *= w[j];
        diff[j] = us[j] - uw[j];
    }
    WeakStrongReport r;
    const auto ms = mean_se(us), mw = mean_se(uw), md = mean_se(diff), mwt = mean_se(w);
    r.strong_estimate = ms.mean;
    r.strong_se = ms.se;
    r.weak_estimate = mw.mean;
    r.weak_se = mw.se;
    r.pooled_se = md.se;
    r.z = md.se > 0.0 ? md.mean / md.se : 0.0;
    r.mean_weight = mwt.mean;
    r.mean_weight_se = mwt.se;
    return r;
}

// ---------------------------------------------------------------------------
// Moment diagnostics: empirical left-hand sides of the SDE moment estimates
// against the shape of their right-hand sides. The ratio is the implied C_p.

struct MomentLine {
    int p = 2;
    double lhs = 0.0;
    double rhs_shape = 0.0;
    double implied_C = 0.0;
    bool violated = false;
};

struct MomentReport {
    std::vector<MomentLine> initial;  // E sup_s ‖X_s − x(t)‖^p
    std::vector<MomentLine> growth;   // E sup_s ‖X_s‖^p
    bool any_violation = false;
};

namespace detail {

/// K_T − K_t = Σ_k ν_k Δ for path j.
inline Vector total_push(const Ensemble& e, std::size_t j) {
    Vector K = Vector::Zero(static_cast<Eigen::Index>(e.dim));
    for (std::size_t k = 0; k < e.grid.n_steps(); ++k) K += e.control(j, k) * e.grid.dt();
    return K;
}

}  // namespace detail

/// `declared_C` maps p to a calibrated constant C_p; lines whose implied
/// constant exceeds it are flagged. Missing entries are reported only.
inline MomentReport moment_diagnostics(const Ensemble& e, const ModelSpec&, const std::map<int, double>& declared_C = {}) {
    MomentReport rep;
    const double span = e.grid.span();
    const double x_norm = e.prefix ? sup_norm(*e.prefix, e.grid.t_start()) : e.value(0, 0).norm();
    const Vector x_t = e.value(0, 0);
    for (int p : {2, 4}) {
        std::vector<double> a(e.n_paths), b(e.n_paths), kp(e.n_paths);
        for (std::size_t j = 0; j < e.n_paths; ++j) {
            double s0 = 0.0, s1 = 0.0;
            for (std::size_t k = 0; k < e.n_nodes(); ++k) {
                s0 = std::max(s0, (e.value(j, k) - x_t).norm());
                s1 = std::max(s1, e.value(j, k).norm());
            }
            a[j] = std::pow(s0, p);
            b[j] = std::pow(s1, p);
            kp[j] = std::pow(detail::total_push(e, j).norm(), p);
        }
        const double EK = mean_se(kp).mean;
        MomentLine li{p, mean_se(a).mean, std::sqrt(span) * (1.0 + std::pow(x_norm, p)) + (1.0 + std::sqrt(span)) * EK};
        MomentLine lg{p, mean_se(b).mean, 1.0 + std::pow(x_norm, p) + EK};
        for (auto* l : {&li, &lg}) {
            l->implied_C = l->rhs_shape > 0.0 ? l->lhs / l->rhs_shape : 0.0;
            if (auto it = declared_C.find(p); it != declared_C.end()) l->violated = l->implied_C > it->second;
            rep.any_violation = rep.any_violation || l->violated;
        }
        rep.initial.push_back(li);
        rep.growth.push_back(lg);
    }
    return rep;
}

/// E sup‖X − X'‖^p against ‖x − x'‖^p_{∞,t} + E‖K_T − K'_T‖^p for two
/// ensembles sharing grid and increments.
inline MomentLine moment_delta(const Ensemble& a, const Ensemble& b, int p) {
    if (!(a.grid == b.grid) || a.n_paths != b.n_paths || a.dim != b.dim)
        throw GridMismatchError("moment_delta: ensembles are not aligned");
    std::vector<double> lhs(a.n_paths), kp(a.n_paths);
    for (std::size_t j = 0; j < a.n_paths; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.n_nodes(); ++k) s = std::max(s, (a.value(j, k) - b.value(j, k)).norm());
        lhs[j] = std::pow(s, p);
        kp[j] = std::pow((detail::total_push(a, j) - detail::total_push(b, j)).norm(), p);
    }
    MomentLine l;
    l.p = p;
    l.lhs = mean_se(lhs).mean;
    l.rhs_shape = std::pow((a.value(0, 0) - b.value(0, 0)).norm(), p) + mean_se(kp).mean;
    l.implied_C = l.rhs_shape > 0.0 ? l.lhs / l.rhs_shape : 0.0;
    return l;
}

// ---------------------------------------------------------------------------
// Export.

/// CSV rows `path_id,k,t,x1..xd,logw`.
inline void write_ensemble_csv(std::ostream& os, const Ensemble& e) {
    os.precision(17);
    os << "path_id,k,t";
    for (std::size_t c = 0; c < e.dim; ++c) os << ",x" << (c + 1);
    os << ",logw\n";
    for (std::size_t j = 0; j < e.n_paths; ++j)
        for (std::size_t k = 0; k < e.n_nodes(); ++k) {
            os << j << ',' << k << ',' << e.grid.node(k);
            for (std::size_t c = 0; c < e.dim; ++c) os << ',' << e.value(j, k)[static_cast<Eigen::Index>(c)];
            os << ',' << e.log_weights[j] << '\n';
        }
}

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("ensemble binary: truncated input");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline constexpr char kEnsembleMagic[5] = {'P', 'C', 'T', 'L', '1'};

/// Binary layout (little-endian): "PCTL1", u32 dim, u64 n_paths, u64 n_steps,
/// f64 t_start, f64 t_end, u64 seed, f64 values[n_paths][n_steps+1][dim],
/// f64 log_weights[n_paths].
inline void write_ensemble_binary(std::ostream& os, const Ensemble& e) {
    os.write(kEnsembleMagic, 5);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.dim));
    detail::put_le<std::uint64_t>(os, e.n_paths);
    detail::put_le<std::uint64_t>(os, e.grid.n_steps());
    detail::put_le<double>(os, e.grid.t_start());
    detail::put_le<double>(os, e.grid.t_end());
    detail::put_le<std::uint64_t>(os, e.seed);
    for (double v : e.values) detail::put_le<double>(os, v);
    for (double v : e.log_weights) detail::put_le<double>(os, v);
}

/// Reads paths and weights back; increments and controls are not stored.
inline Ensemble read_ensemble_binary(std::istream& is) {
    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, kEnsembleMagic, 5) != 0) throw Error("ensemble binary: bad magic");
    Ensemble e;
    e.dim = detail::get_le<std::uint32_t>(is);
    e.n_paths = detail::get_le<std::uint64_t>(is);
    const auto n_steps = detail::get_le<std::uint64_t>(is);
    const double t0 = detail::get_le<double>(is);
    const double t1 = detail::get_le<double>(is);
    e.seed = detail::get_le<std::uint64_t>(is);
    e.grid = TimeGrid(t0, t1, n_steps);
    e.values.resize(e.n_paths * e.grid.n_nodes() * e.dim);
    for (auto& v : e.values) v = detail::get_le<double>(is);
    e.log_weights.resize(e.n_paths);
    for (auto& v : e.log_weights) v = detail::get_le<double>(is);
    return e;
}

}  // namespace pathctrl
