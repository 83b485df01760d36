#pragma once

#include "pathctrl/control.hpp"
#include "pathctrl/core.hpp"
#include "pathctrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

namespace pathctrl {

/// Û(x) = sup { U(x + w) − δ(w) : w = f_T a, a >= 0 }. Displacements range over
/// the cone spanned by the columns of f_T, where δ vanishes.
struct FaceliftSpec {
    std::function<double(const Vector&)> payoff;
    Matrix directions = Matrix::Identity(1, 1);
    /// δ on displacements. Unset: the support function of {q : fᵀq <= 0}.
    std::function<double(const Vector&)> delta;
    /// Coefficients a are searched in [0, search_radius]^m.
    double search_radius = 4.0;
    /// Grid points per direction (a 2-d search uses the square root, at least 41).
    std::size_t search_points = 401;
    double refine_tol = 1e-12;

    double delta_at(const Vector& w) const {
        if (delta) return delta(w);
        return support_function(w, 0.0, ConstraintSet::constant(directions));
    }
};

struct FaceliftPoint {
    double value = 0.0;
    double payoff = 0.0;
    /// Maximising coefficients a (one per column of f_T).
    Vector argmax;
    /// Maximum still increasing at the edge of the search box.
    bool unbounded = false;
};

namespace detail {

inline std::vector<Eigen::Index> active_columns(const Matrix& f) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < f.cols(); ++j)
        if (f.col(j).squaredNorm() > 0.0) cols.push_back(j);
    return cols;
}

/// Golden-section maximisation of a unimodal-on-bracket function.
inline std::pair<double, double> golden_max(const std::function<double(double)>& g, double lo, double hi, double tol) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double gc = g(c), gd = g(d);
    for (int it = 0; it < 200 && b - a > tol; ++it) {
        if (gc >= gd) {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    return gc >= gd ? std::pair{c, gc} : std::pair{d, gd};
}

}  // namespace detail

inline FaceliftPoint facelift(const FaceliftSpec& spec, const Vector& x) {
    const Matrix& f = spec.directions;
    if (f.rows() != x.size()) throw PreconditionError("facelift: direction matrix does not match the state");
    const auto cols = detail::active_columns(f);
    FaceliftPoint out;
    out.payoff = spec.payoff(x);
    out.value = out.payoff - spec.delta_at(Vector::Zero(x.size()));
    out.argmax = Vector::Zero(f.cols());
    if (cols.empty()) return out;
    if (cols.size() > 2) throw PreconditionError("facelift: at most two push directions are searched");

    auto objective = [&](const Vector& a) {
        const Vector w = f * a;
        const double dl = spec.delta_at(w);
        if (dl == std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
        return spec.payoff(x + w) - dl;
    };
    auto improve = [&](const Vector& a, double v) {
        if (v > out.value) {
            out.value = v;
            out.argmax = a;
        }
    };

    const double R = spec.search_radius;
    if (cols.size() == 1) {
        const std::size_t n = std::max<std::size_t>(spec.search_points, 3);
        const double h = R / static_cast<double>(n - 1);
        std::vector<double> vals(n);
        std::size_t best = 0;
        Vector a = Vector::Zero(f.cols());
        for (std::size_t i = 0; i < n; ++i) {
            a[cols[0]] = static_cast<double>(i) * h;
            vals[i] = objective(a);
            if (vals[i] > vals[best]) best = i;
        }
        a[cols[0]] = static_cast<double>(best) * h;
        improve(a, vals[best]);
        const double lo = best == 0 ? 0.0 : (best - 1) * h, hi = std::min(R, (best + 1) * h);
        const auto [s, v] = detail::golden_max(
            [&](double t) {
                Vector b = Vector::Zero(f.cols());
                b[cols[0]] = t;
                return objective(b);
            },
            lo, hi, spec.refine_tol);
        a[cols[0]] = s;
        improve(a, v);
        out.unbounded = best == n - 1 && vals[n - 1] > vals[n - 2];
        return out;
    }

    const auto n = std::max<std::size_t>(41, static_cast<std::size_t>(std::sqrt(static_cast<double>(spec.search_points)) * 4));
    const double h = R / static_cast<double>(n - 1);
    std::size_t bi = 0, bj = 0;
    double bv = -std::numeric_limits<double>::infinity();
    std::vector<double> vals(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            Vector a = Vector::Zero(f.cols());
            a[cols[0]] = static_cast<double>(i) * h;
            a[cols[1]] = static_cast<double>(j) * h;
            vals[i * n + j] = objective(a);
            if (vals[i * n + j] > bv) {
                bv = vals[i * n + j];
                bi = i;
                bj = j;
            }
        }
    Vector a = Vector::Zero(f.cols());
    a[cols[0]] = static_cast<double>(bi) * h;
    a[cols[1]] = static_cast<double>(bj) * h;
    improve(a, bv);
    // Alternating golden-section refinement inside the neighbouring cells.
    for (int round = 0; round < 4; ++round)
        for (int c = 0; c < 2; ++c) {
            const Eigen::Index col = cols[static_cast<std::size_t>(c)];
            const double centre = out.argmax[col];
            const double lo = std::max(0.0, centre - h), hi = std::min(R, centre + h);
            const auto [s, v] = detail::golden_max(
                [&](double t) {
                    Vector b = out.argmax;
                    b[col] = t;
                    return objective(b);
                },
                lo, hi, spec.refine_tol);
            Vector b = out.argmax;
            b[col] = s;
            improve(b, v);
        }
    const bool edge_i = bi == n - 1 && vals[bi * n + bj] > vals[(bi - 1) * n + bj];
    const bool edge_j = bj == n - 1 && vals[bi * n + bj] > vals[bi * n + bj - 1];
    out.unbounded = edge_i || edge_j;
    return out;
}

/// CSV rows `x1..xd,U,U_hat,argmax_u` (argmax_u1.. when f_T has several columns).
inline void write_facelift_csv(std::ostream& os, const FaceliftSpec& spec, const std::vector<Vector>& points) {
    os.precision(17);
    const auto d = points.empty() ? 1 : points.front().size();
    for (Eigen::Index c = 0; c < d; ++c) os << 'x' << (c + 1) << ',';
    os << "U,U_hat";
    if (spec.directions.cols() == 1) {
        os << ",argmax_u";
    } else {
        for (Eigen::Index c = 0; c < spec.directions.cols(); ++c) os << ",argmax_u" << (c + 1);
    }
    os << '\n';
    for (const auto& x : points) {
        const auto fp = facelift(spec, x);
        for (Eigen::Index c = 0; c < d; ++c) os << x[c] << ',';
        os << fp.payoff << ',' << fp.value;
        for (Eigen::Index c = 0; c < fp.argmax.size(); ++c) os << ',' << fp.argmax[c];
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Auxiliary problem Y^x with bounded push rates and running cost δ.

struct AuxiliaryBundle {
    GridDpSpec dp;
    double t_end = 1.0;
    std::size_t n_steps = 50;
    /// Bounds tried in order; the ladder stops once two consecutive changes are below `tolerance`.
    std::vector<double> bound_ladder{1.0, 2.0, 4.0, 8.0, 16.0};
    double tolerance = 1e-3;
};

struct AuxiliaryResult {
    ValueEstimate estimate;
    std::vector<double> bounds;
    std::vector<double> values;
    bool converged = false;
    std::optional<GridDpResult> last;
};

namespace detail {

inline GridDpSpec with_delta_cost(GridDpSpec dp, const FaceliftSpec& spec, const ModelSpec& model) {
    dp.running_reward = [&spec, f = model.f](double t, const Vector&, const Vector& a) {
        return -spec.delta_at(f(t) * a);
    };
    return dp;
}

inline TerminalFunctional payoff_terminal(const std::function<double(const Vector&)>& g) {
    return markov_terminal(g);
}

inline GridDpResult aux_solve(const ModelSpec& model, const FaceliftSpec& spec, const std::function<double(const Vector&)>& g,
                              double t, const Vector& x, double bound, const AuxiliaryBundle& b,
                              std::size_t n_space = 0, std::size_t n_steps = 0) {
    GridDpSpec dp = with_delta_cost(b.dp, spec, model);
    if (n_space) dp.n_space = n_space;
    return solve_grid_dp(model, payoff_terminal(g), bound, dp, TimeGrid(t, b.t_end, n_steps ? n_steps : b.n_steps), x);
}

}  // namespace detail

inline AuxiliaryResult auxiliary_value_Y(const ModelSpec& model, const FaceliftSpec& spec, double t, const Vector& x,
                                         const AuxiliaryBundle& b) {
    if (!model.markovian) throw PreconditionError("auxiliary problem requires a Markovian model");
    if (spec.delta_at(Vector::Zero(x.size())) != 0.0) throw PreconditionError("auxiliary problem: delta(0) must be 0");
    for (std::size_t i = 1; i < b.bound_ladder.size(); ++i)
        if (!(b.bound_ladder[i] > b.bound_ladder[i - 1])) throw PreconditionError("bound ladder must be strictly increasing");
    AuxiliaryResult r;
    for (double n : b.bound_ladder) {
        r.last = detail::aux_solve(model, spec, spec.payoff, t, x, n, b);
        r.bounds.push_back(n);
        r.values.push_back(r.last->estimate.value);
        const std::size_t m = r.values.size();
        if (m >= 3 && std::abs(r.values[m - 1] - r.values[m - 2]) < b.tolerance &&
            std::abs(r.values[m - 2] - r.values[m - 3]) < b.tolerance) {
            r.converged = true;
            break;
        }
    }
    r.estimate = r.last->estimate;
    r.estimate.meta["converged"] = r.converged ? 1.0 : 0.0;
    return r;
}

struct FaceliftEquivalenceReport {
    std::vector<double> bounds;
    std::vector<double> y_payoff;
    std::vector<double> y_facelift;
    std::vector<double> gaps;
    /// Error estimates of the DP at the largest bound, max over both arms:
    /// space (|Y_N − Y_{2N−1}|·4/3), time (|Y_K − Y_{2K}|) and bound
    /// truncation (change over the last ladder step).
    double space_tol = 0.0;
    double time_tol = 0.0;
    double bound_tol = 0.0;
    /// space_tol + time_tol + bound_tol.
    double interpolation_tol = 0.0;
    bool tables_identical = false;
    bool within_tolerance = false;
    /// Gaps nonincreasing over the last three bounds.
    bool gap_shrinks = false;
};

/// Y with terminal U against Y with terminal Û on identical DP settings, for
/// every bound in the ladder. At a finite bound and step the arms differ by
/// the discretisation error of the DP, which the tolerance estimates.
inline FaceliftEquivalenceReport facelift_equivalence_test(const ModelSpec& model, const FaceliftSpec& spec, double t,
                                                           const Vector& x, const AuxiliaryBundle& b) {
    if (!(t < b.t_end)) throw PreconditionError("facelift equivalence: need t < T");
    const auto hat = [&spec](const Vector& y) { return facelift(spec, y).value; };
    FaceliftEquivalenceReport r;
    r.tables_identical = true;
    for (double n : b.bound_ladder) {
        const auto a = detail::aux_solve(model, spec, spec.payoff, t, x, n, b);
        const auto h = detail::aux_solve(model, spec, hat, t, x, n, b);
        r.bounds.push_back(n);
        r.y_payoff.push_back(a.estimate.value);
        r.y_facelift.push_back(h.estimate.value);
        r.gaps.push_back(std::abs(a.estimate.value - h.estimate.value));
        r.tables_identical = r.tables_identical && a.tables == h.tables;
    }
    if (!b.bound_ladder.empty()) {
        const std::size_t m = b.bound_ladder.size();
        const double n = b.bound_ladder.back();
        const std::size_t fine = 2 * b.dp.n_space - 1;
        const double ya = detail::aux_solve(model, spec, spec.payoff, t, x, n, b, fine).estimate.value;
        const double yh = detail::aux_solve(model, spec, hat, t, x, n, b, fine).estimate.value;
        r.space_tol = std::max(std::abs(r.y_payoff.back() - ya), std::abs(r.y_facelift.back() - yh)) * 4.0 / 3.0;
        const double ta = detail::aux_solve(model, spec, spec.payoff, t, x, n, b, 0, 2 * b.n_steps).estimate.value;
        const double th = detail::aux_solve(model, spec, hat, t, x, n, b, 0, 2 * b.n_steps).estimate.value;
        r.time_tol = std::max(std::abs(r.y_payoff.back() - ta), std::abs(r.y_facelift.back() - th));
        if (m >= 2)
            r.bound_tol = std::max(std::abs(r.y_payoff[m - 1] - r.y_payoff[m - 2]),
                                   std::abs(r.y_facelift[m - 1] - r.y_facelift[m - 2]));
        r.interpolation_tol = r.space_tol + r.time_tol + r.bound_tol;
        r.within_tolerance = r.gaps.back() <= 2.0 * r.interpolation_tol;
        r.gap_shrinks = m >= 3 && r.gaps[m - 1] <= r.gaps[m - 2] && r.gaps[m - 2] <= r.gaps[m - 3];
    }
    return r;
}

struct ShiftReport {
    double y = 0.0;
    std::vector<double> shifted;  // Y^{x + fι} − δ(fι)
    double tolerance = 0.0;
    bool holds = false;
    bool equality_at_zero = false;
};

/// Y^x >= Y^{x + fι} − δ(fι) − tol for every ι in the list, read off one DP table.
inline ShiftReport shift_property_test(const ModelSpec& model, const FaceliftSpec& spec, double t, const Vector& x,
                                       const std::vector<Vector>& iota_list, double bound, const AuxiliaryBundle& b,
                                       double tolerance) {
    const auto dp = detail::aux_solve(model, spec, spec.payoff, t, x, bound, b);
    const Matrix f = model.f(t);
    ShiftReport r;
    r.y = dp.estimate.value;
    r.tolerance = tolerance;
    r.holds = true;
    r.equality_at_zero = true;
    for (const auto& iota : iota_list) {
        const Vector w = f * iota;
        const double dl = spec.delta_at(w);
        if (!std::isfinite(dl)) throw PreconditionError("shift property: delta must be finite at every shift");
        const double s = dp.value_at(0, x + w) - dl;
        r.shifted.push_back(s);
        r.holds = r.holds && r.y >= s - tolerance;
        if (iota.isZero()) r.equality_at_zero = r.equality_at_zero && s == r.y;
    }
    return r;
}

}  // namespace pathctrl
