#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/pathspace.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace pathctrl {

using DriftFn = std::function<Vector(double t, const PathHistory& x)>;
using VolFn = std::function<Matrix(double t, const PathHistory& x)>;
using ScalarFn = std::function<double(double t, const PathHistory& x)>;
using TimeMatrixFn = std::function<Matrix(double t)>;

/// Coefficients of dX = (μ_t(X) + f_t ν_t) dt + σ_t(X) dB. All functionals are
/// non-anticipative by construction: they only receive the history up to t.
struct ModelSpec {
    std::string name;
    std::size_t dim = 1;
    DriftFn mu;
    VolFn sigma;
    TimeMatrixFn f;
    double lipschitz_C = 1.0;
    bool markovian = true;

    Vector drift(double t, const PathHistory& x) const { return mu(t, x); }
    Matrix vol(double t, const PathHistory& x) const { return sigma(t, x); }
    Matrix directions(double t) const { return f(t); }
};

/// σ^p_t(x) = η^p_t(x) M_t + σ_t(x), the invertible perturbation of a degenerate model.
struct PerturbedModel {
    ModelSpec base;
    ScalarFn eta;
    TimeMatrixFn M;
    double p = 1.0;

    /// Base model with σ replaced by σ^p.
    ModelSpec as_model() const {
        ModelSpec m = base;
        m.name = base.name + "[p=" + format_p() + "]";
        m.sigma = [base_sigma = base.sigma, eta = eta, M = M](double t, const PathHistory& x) -> Matrix {
            return eta(t, x) * M(t) + base_sigma(t, x);
        };
        return m;
    }

    std::string format_p() const {
        std::ostringstream os;
        os << p;
        return os.str();
    }
};

/// Markovian or path-dependent terminal reward U.
struct TerminalFunctional {
    std::function<double(const PathHistory&)> U;
    double growth_r = 0.0;
    double lipschitz_C = 1.0;
    bool markovian = true;

    double operator()(const PathHistory& x) const { return U(x); }

    /// U evaluated on the single-node history x at time t (Markovian use only).
    double at_point(const Vector& x, double t) const {
        return U(PathHistory::at_point(t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size()))));
    }
};

/// 𝔎_t = {q : (f_tᵀ q)_i <= 0 for all i}.
struct ConstraintSet {
    TimeMatrixFn f;
    std::size_t dim = 1;

    static ConstraintSet from_model(const ModelSpec& m) { return {m.f, m.dim}; }
    static ConstraintSet constant(Matrix f) {
        const auto d = static_cast<std::size_t>(f.rows());
        return {[f = std::move(f)](double) { return f; }, d};
    }
};

/// ρ(q) = q⁺ · 1.
inline double rho(const Vector& q) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) s += std::max(q[i], 0.0);
    return s;
}

inline bool in_constraint_cone(const Vector& q, double t, const ConstraintSet& cs) {
    const Vector fq = cs.f(t).transpose() * q;
    return (fq.array() <= 0.0).all();
}

namespace detail {

/// Lawson–Hanson non-negative least squares: min ‖A a − b‖ over a >= 0.
inline Vector nnls(const Matrix& A, const Vector& b, int max_iter = 200) {
    const Eigen::Index n = A.cols();
    Vector x = Vector::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    const double tol = 1e-12 * std::max(1.0, A.norm() * b.norm());
    for (int it = 0; it < max_iter; ++it) {
        const Vector w = A.transpose() * (b - A * x);
        Eigen::Index best = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w[j] > wmax) { wmax = w[j]; best = j; }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;
        for (int inner = 0; inner < max_iter; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index j = 0; j < n; ++j) if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
            Matrix Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
            const Vector zp = Ap.colPivHouseholderQr().solve(b);
            Vector z = Vector::Zero(n);
            for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
            bool feasible = true;
            for (auto j : idx) if (z[j] <= 0.0) feasible = false;
            if (feasible) { x = z; break; }
            double alpha = 1.0;
            for (auto j : idx)
                if (z[j] <= 0.0) alpha = std::min(alpha, x[j] / (x[j] - z[j]));
            x += alpha * (z - x);
            for (auto j : idx)
                if (x[j] <= 1e-15) { x[j] = 0.0; passive[static_cast<std::size_t>(j)] = false; }
        }
    }
    return x;
}

}  // namespace detail

/// Whether u lies in the polar cone of 𝔎_t, i.e. u = f_t a for some a >= 0
/// (the cone generated by the push directions).
inline bool in_polar_cone(const Vector& u, double t, const ConstraintSet& cs, double tol = 1e-10) {
    const Matrix f = cs.f(t);
    const double scale = std::max(1.0, u.norm());
    if (u.norm() == 0.0) return true;
    Eigen::FullPivLU<Matrix> lu(f);
    if (lu.isInvertible()) {
        const Vector a = lu.solve(u);
        return (a.array() >= -tol * scale).all();
    }
    const Vector a = detail::nnls(f, u);
    return (f * a - u).norm() <= tol * scale;
}

/// δ_t(u) = sup{k·u : k ∈ 𝔎_t}: 0 on the polar cone, +∞ elsewhere.
inline double support_function(const Vector& u, double t, const ConstraintSet& cs) {
    return in_polar_cone(u, t, cs) ? 0.0 : std::numeric_limits<double>::infinity();
}

inline Matrix perturbed_sigma(const PerturbedModel& pm, double t, const PathHistory& x) {
    return pm.eta(t, x) * pm.M(t) + pm.base.sigma(t, x);
}

inline Matrix perturbed_sigma_inverse(const PerturbedModel& pm, double t, const PathHistory& x) {
    const Matrix s = perturbed_sigma(pm, t, x);
    Eigen::FullPivLU<Matrix> lu(s);
    if (!lu.isInvertible()) {
        std::ostringstream os;
        os << "perturbed volatility is singular at t=" << t << " for p=" << pm.p;
        throw PerturbationError(os.str());
    }
    return lu.inverse();
}

// ---------------------------------------------------------------------------
// Transaction-cost model (two accounts driven by a third, Brownian, factor).

/// ℓ(x, y) = x + y⁺/(1+λ) − (1+λ) y⁻.
inline double liquidation(double x, double y, double lambda) {
    return x + std::max(y, 0.0) / (1.0 + lambda) - (1.0 + lambda) * std::max(-y, 0.0);
}

inline Matrix transaction_directions(double lambda) {
    Matrix f = Matrix::Zero(3, 3);
    f << 1.0, -(1.0 + lambda), 0.0,
         -(1.0 + lambda), 1.0, 0.0,
         0.0, 0.0, 0.0;
    return f;
}

inline Matrix transaction_M() {
    Matrix M = Matrix::Zero(3, 3);
    M(0, 0) = 1.0;
    M(1, 1) = 1.0;
    return M;
}

/// Closed-form inverse of σ^p for the transaction model with η^p = −1/p:
/// [[−p,0,0],[0,−p,pΣx²],[0,0,1]].
inline Matrix transaction_sigma_p_inverse(double sigma_times_x2, double p) {
    Matrix inv = Matrix::Zero(3, 3);
    inv(0, 0) = -p;
    inv(1, 1) = -p;
    inv(1, 2) = p * sigma_times_x2;
    inv(2, 2) = 1.0;
    return inv;
}

/// Utility of terminal wealth; receives the full path (for the factor x³) and ℓ.
using UtilityFn = std::function<double(const PathHistory& x, double wealth)>;

inline UtilityFn exponential_utility() {
    return [](const PathHistory&, double w) { return -std::exp(-w); };
}

struct TransactionModel {
    PerturbedModel model;
    TerminalFunctional terminal;
    double lambda = 0.0;
};

inline ScalarFn constant_scalar(double c) {
    return [c](double, const PathHistory&) { return c; };
}

/// Builds f, μ, σ, M, η^p = −1/p and U = 𝒰(x³, ℓ(x¹_T, x²_T)).
inline TransactionModel build_transaction_model(double lambda_tc, ScalarFn r_fn, ScalarFn m_fn,
                                                ScalarFn Sigma_fn, double p,
                                                UtilityFn utility = exponential_utility()) {
    if (!(lambda_tc >= 0.0)) throw PreconditionError("transaction model: lambda must be >= 0");
    if (!(p > 0.0)) throw PreconditionError("transaction model: p must be > 0");

    ModelSpec base;
    base.name = "transaction";
    base.dim = 3;
    base.markovian = false;
    base.lipschitz_C = 1.0;
    base.mu = [r_fn, m_fn](double t, const PathHistory& x) -> Vector {
        const auto cur = x.current();
        Vector v(3);
        v << r_fn(t, x) * cur[0], m_fn(t, x) * cur[1], 0.0;
        return v;
    };
    base.sigma = [Sigma_fn](double t, const PathHistory& x) -> Matrix {
        Matrix s = Matrix::Zero(3, 3);
        s(1, 2) = Sigma_fn(t, x) * x.current()[1];
        s(2, 2) = 1.0;
        return s;
    };
    const Matrix f = transaction_directions(lambda_tc);
    base.f = [f](double) { return f; };

    PerturbedModel pm;
    pm.base = std::move(base);
    pm.eta = [p](double, const PathHistory&) { return -1.0 / p; };
    const Matrix M = transaction_M();
    pm.M = [M](double) { return M; };
    pm.p = p;

    TerminalFunctional U;
    U.markovian = false;
    U.growth_r = 1.0;
    U.U = [lambda_tc, utility = std::move(utility)](const PathHistory& x) {
        const auto xT = x.current();
        return utility(x, liquidation(xT[0], xT[1], lambda_tc));
    };
    return {std::move(pm), std::move(U), lambda_tc};
}

// ---------------------------------------------------------------------------
// Model zoo.

/// d = 1, μ = 0, σ = 1, f = 1.
inline ModelSpec toy1d() {
    ModelSpec m;
    m.name = "toy1d";
    m.dim = 1;
    m.mu = [](double, const PathHistory&) { return Vector::Zero(1); };
    m.sigma = [](double, const PathHistory&) { return Matrix::Identity(1, 1); };
    m.f = [](double) { return Matrix::Identity(1, 1); };
    m.lipschitz_C = 1.0;
    m.markovian = true;
    return m;
}

/// One-dimensional model with constant coefficients.
inline ModelSpec constant_1d(double mu, double sigma, double f, std::string name = "const1d") {
    ModelSpec m;
    m.name = std::move(name);
    m.dim = 1;
    m.mu = [mu](double, const PathHistory&) { return Vector::Constant(1, mu); };
    m.sigma = [sigma](double, const PathHistory&) { return Matrix::Constant(1, 1, sigma); };
    m.f = [f](double) { return Matrix::Constant(1, 1, f); };
    m.lipschitz_C = std::max({std::abs(mu), std::abs(sigma), 1.0});
    return m;
}

/// Markovian terminal U(x_T) from a function of the terminal state.
inline TerminalFunctional markov_terminal(std::function<double(const Vector&)> g, double lipschitz_C = 1.0,
                                          double growth_r = 0.0) {
    TerminalFunctional U;
    U.U = [g = std::move(g)](const PathHistory& x) { return g(Vector(x.current())); };
    U.markovian = true;
    U.lipschitz_C = lipschitz_C;
    U.growth_r = growth_r;
    return U;
}

/// Parameters passed to registered model factories.
using ModelParams = std::map<std::string, double>;

struct ModelBundle {
    ModelSpec model;
    TerminalFunctional terminal;
    std::optional<PerturbedModel> perturbed;
};

using ModelFactory = std::function<ModelBundle(const ModelParams&)>;

inline double param_or(const ModelParams& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

/// Name → factory registry. `toy1d` and `transaction` are built in; `custom`
/// and any other name can be registered from code.
class ModelRegistry {
public:
    static ModelRegistry& instance() {
        static ModelRegistry reg;
        return reg;
    }

    void add(const std::string& name, ModelFactory factory) { factories_[name] = std::move(factory); }
    bool contains(const std::string& name) const { return factories_.count(name) != 0; }

    ModelBundle make(const std::string& name, const ModelParams& params = {}) const {
        auto it = factories_.find(name);
        if (it == factories_.end()) throw ConfigError("model", "unknown model key '" + name + "'");
        return it->second(params);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, _] : factories_) out.push_back(k);
        return out;
    }

private:
    ModelRegistry() {
        add("toy1d", [](const ModelParams& p) {
            const double target = param_or(p, "target", 1.0);
            ModelBundle b{toy1d(), markov_terminal([target](const Vector& x) {
                              const double e = x[0] - target;
                              return -e * e;
                          }, 2.0, 1.0), std::nullopt};
            return b;
        });
        add("transaction", [](const ModelParams& p) {
            auto tm = build_transaction_model(param_or(p, "lambda", 0.1), constant_scalar(param_or(p, "r", 0.02)),
                                              constant_scalar(param_or(p, "m", 0.05)),
                                              constant_scalar(param_or(p, "Sigma", 0.2)), param_or(p, "p", 2.0));
            ModelBundle b{tm.model.as_model(), tm.terminal, tm.model};
            return b;
        });
    }

    std::map<std::string, ModelFactory> factories_;
};

// ---------------------------------------------------------------------------
// Statistical verification of declared model properties on sample histories.

/// Max over samples of |φ(s, x) − φ(s, x')| where x' agrees with x up to node
/// `k_cut` and is arbitrary afterwards; zero for a non-anticipative model.
inline double non_anticipativity_defect(const ModelSpec& m, const Path& x, const Path& x_future_modified,
                                        std::size_t k_cut) {
    if (!(x.grid() == x_future_modified.grid())) throw GridMismatchError("non_anticipativity_defect: grids differ");
    double defect = 0.0;
    const auto& g = x.grid();
    for (std::size_t k = 0; k <= k_cut; ++k) {
        const PathHistory ha(g.t_start(), g.dt(), m.dim, x.raw().first((k + 1) * m.dim));
        const PathHistory hb(g.t_start(), g.dt(), m.dim, x_future_modified.raw().first((k + 1) * m.dim));
        const double t = g.node(k);
        defect = std::max(defect, (m.mu(t, ha) - m.mu(t, hb)).norm());
        defect = std::max(defect, (m.sigma(t, ha) - m.sigma(t, hb)).norm());
    }
    return defect;
}

/// Ratio (‖μ‖ + ‖σ‖) / (1 + ‖x‖_{∞,t}) at node k; declared growth holds when <= C.
inline double growth_ratio(const ModelSpec& m, const PathHistory& h) {
    const double t = h.time();
    const double lhs = m.mu(t, h).norm() + m.sigma(t, h).operatorNorm();
    return lhs / (1.0 + h.sup_norm());
}

/// Checks of the perturbation family on a sample history: η <= 0, σ^p
/// invertible, (σ^p)⁻¹ f bounded by `bound`, M σᵀ + σ M negative semidefinite.
struct PerturbationCheck {
    bool eta_nonpositive = true;
    bool invertible = true;
    double inv_f_norm = 0.0;
    double max_eig_M_sigma = 0.0;
};

inline PerturbationCheck check_perturbation(const PerturbedModel& pm, const PathHistory& h) {
    PerturbationCheck c;
    const double t = h.time();
    c.eta_nonpositive = pm.eta(t, h) <= 0.0;
    const Matrix sp = perturbed_sigma(pm, t, h);
    Eigen::FullPivLU<Matrix> lu(sp);
    c.invertible = lu.isInvertible();
    if (c.invertible) c.inv_f_norm = (lu.inverse() * pm.base.f(t)).operatorNorm();
    const Matrix s = pm.base.sigma(t, h);
    const Matrix sym = pm.M(t) * s.transpose() + s * pm.M(t);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()));
    c.max_eig_M_sigma = es.eigenvalues().maxCoeff();
    return c;
}

}  // namespace pathctrl
