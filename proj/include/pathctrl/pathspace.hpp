#pragma once

#include "pathctrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace pathctrl {

/// Uniform partition t_k = t_start + k * (t_end - t_start) / n_steps.
class TimeGrid {
public:
    TimeGrid(double t_start, double t_end, std::size_t n_steps)
        : t_start_(t_start), t_end_(t_end), n_steps_(n_steps) {
        if (!(t_start < t_end)) throw GridMismatchError("TimeGrid: t_start must be < t_end");
        if (n_steps == 0) throw GridMismatchError("TimeGrid: n_steps must be >= 1");
    }

    double t_start() const noexcept { return t_start_; }
    double t_end() const noexcept { return t_end_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
    double dt() const noexcept { return (t_end_ - t_start_) / static_cast<double>(n_steps_); }
    double span() const noexcept { return t_end_ - t_start_; }

    double node(std::size_t k) const noexcept {
        if (k == n_steps_) return t_end_;
        return t_start_ + static_cast<double>(k) * dt();
    }

    /// Index of the node equal to `t` (relative tolerance 1e-9 of the step), if any.
    std::optional<std::size_t> index_of(double t) const noexcept {
        const double h = dt();
        const double r = (t - t_start_) / h;
        const double k = std::round(r);
        if (std::abs(r - k) > 1e-9 || k < 0.0 || k > static_cast<double>(n_steps_)) return std::nullopt;
        return static_cast<std::size_t>(k);
    }

    bool same_spacing(const TimeGrid& other) const noexcept {
        return std::abs(dt() - other.dt()) <= 1e-12 * std::max(1.0, std::abs(dt()));
    }

    bool operator==(const TimeGrid& o) const noexcept {
        return n_steps_ == o.n_steps_ && t_start_ == o.t_start_ && t_end_ == o.t_end_;
    }

private:
    double t_start_;
    double t_end_;
    std::size_t n_steps_;
};

/// A continuous d-dimensional path represented by its values at the nodes of a
/// uniform grid; between nodes it is the piecewise-linear interpolant.
class Path {
public:
    Path(TimeGrid grid, std::size_t dim, std::vector<double> values)
        : grid_(grid), dim_(dim), values_(std::move(values)) {
        if (dim_ == 0) throw GridMismatchError("Path: dimension must be >= 1");
        if (values_.size() != grid_.n_nodes() * dim_)
            throw GridMismatchError("Path: expected " + std::to_string(grid_.n_nodes()) +
                                    " nodes of dimension " + std::to_string(dim_));
    }

    Path(TimeGrid grid, const std::vector<Vector>& points) : grid_(grid), dim_(0) {
        if (points.size() != grid_.n_nodes())
            throw GridMismatchError("Path: point count " + std::to_string(points.size()) +
                                    " != node count " + std::to_string(grid_.n_nodes()));
        dim_ = static_cast<std::size_t>(points.front().size());
        if (dim_ == 0) throw GridMismatchError("Path: dimension must be >= 1");
        values_.reserve(points.size() * dim_);
        for (const auto& p : points) {
            if (static_cast<std::size_t>(p.size()) != dim_)
                throw GridMismatchError("Path: inconsistent point dimension");
            values_.insert(values_.end(), p.data(), p.data() + dim_);
        }
    }

    /// Constant path equal to `x` on `grid`.
    static Path constant(TimeGrid grid, const Vector& x) {
        std::vector<double> v;
        v.reserve(grid.n_nodes() * static_cast<std::size_t>(x.size()));
        for (std::size_t k = 0; k < grid.n_nodes(); ++k) v.insert(v.end(), x.data(), x.data() + x.size());
        return Path(grid, static_cast<std::size_t>(x.size()), std::move(v));
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const double> raw() const noexcept { return values_; }

    Eigen::Map<const Vector> value(std::size_t k) const {
        return Eigen::Map<const Vector>(values_.data() + k * dim_, static_cast<Eigen::Index>(dim_));
    }

    /// Piecewise-linear evaluation; constant extension outside the grid span.
    Vector at(double t) const {
        if (t <= grid_.t_start()) return value(0);
        if (t >= grid_.t_end()) return value(grid_.n_steps());
        const double r = (t - grid_.t_start()) / grid_.dt();
        auto k = static_cast<std::size_t>(std::floor(r));
        if (k >= grid_.n_steps()) k = grid_.n_steps() - 1;
        const double w = r - static_cast<double>(k);
        return value(k) + w * (value(k + 1) - value(k));
    }

    bool operator==(const Path& o) const noexcept {
        return grid_ == o.grid_ && dim_ == o.dim_ && values_ == o.values_;
    }

private:
    TimeGrid grid_;
    std::size_t dim_;
    std::vector<double> values_;
};

/// Non-owning view of a path up to its current node: an optional prefix (the
/// frozen history before the simulation start, whose last node coincides with
/// the first simulated node) followed by simulated nodes on a uniform clock.
/// Functionals of the past only ever see nodes up to the current one.
class PathHistory {
public:
    PathHistory(double t0, double dt, std::size_t dim, std::span<const double> nodes,
                const Path* prefix = nullptr)
        : t0_(t0), dt_(dt), dim_(dim), nodes_(nodes), prefix_(prefix) {
        if (dim_ == 0 || nodes_.size() < dim_ || nodes_.size() % dim_ != 0)
            throw GridMismatchError("PathHistory: node buffer does not match dimension");
        prefix_count_ = prefix_ ? prefix_->grid().n_nodes() - 1 : 0;
    }

    /// History consisting of a single state at time `t` (Markovian evaluation).
    static PathHistory at_point(double t, std::span<const double> x) {
        return PathHistory(t, 0.0, x.size(), x);
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return prefix_count_ + nodes_.size() / dim_; }
    double time() const noexcept { return node_time(size() - 1); }

    double node_time(std::size_t i) const noexcept {
        if (i < prefix_count_) return prefix_->grid().node(i);
        return t0_ + static_cast<double>(i - prefix_count_) * dt_;
    }

    Eigen::Map<const Vector> node(std::size_t i) const {
        if (i < prefix_count_) return prefix_->value(i);
        return Eigen::Map<const Vector>(nodes_.data() + (i - prefix_count_) * dim_,
                                        static_cast<Eigen::Index>(dim_));
    }

    Eigen::Map<const Vector> current() const { return node(size() - 1); }

    double running_max(std::size_t c) const {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < size(); ++i) m = std::max(m, node(i)[c]);
        return m;
    }

    double running_min(std::size_t c) const {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < size(); ++i) m = std::min(m, node(i)[c]);
        return m;
    }

    /// Integral of the piecewise-linear path component over its whole span.
    double running_integral(std::size_t c) const {
        double s = 0.0;
        for (std::size_t i = 1; i < size(); ++i)
            s += 0.5 * (node(i - 1)[c] + node(i)[c]) * (node_time(i) - node_time(i - 1));
        return s;
    }

    /// Max over nodes of the Euclidean norm.
    double sup_norm() const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i) m = std::max(m, node(i).norm());
        return m;
    }

private:
    double t0_;
    double dt_;
    std::size_t dim_;
    std::span<const double> nodes_;
    const Path* prefix_;
    std::size_t prefix_count_ = 0;
};

/// x ⊗_s x': x up to s, then the increments of x' after s glued on at x(s).
inline Path concat(const Path& x, const Path& x_prime, double s) {
    if (x.dim() != x_prime.dim()) throw GridMismatchError("concat: dimension mismatch");
    if (!x.grid().same_spacing(x_prime.grid())) throw GridMismatchError("concat: grid spacing differs");
    const auto ks = x.grid().index_of(s);
    const auto ks_prime = x_prime.grid().index_of(s);
    if (!ks || !ks_prime) throw GridMismatchError("concat: s is not a node of both paths");

    const std::size_t n_after = x_prime.grid().n_steps() - *ks_prime;
    const TimeGrid out_grid(x.grid().t_start(), x_prime.grid().t_end(), *ks + n_after);
    const std::size_t d = x.dim();
    std::vector<double> v;
    v.reserve(out_grid.n_nodes() * d);
    for (std::size_t k = 0; k <= *ks; ++k) {
        auto xk = x.value(k);
        v.insert(v.end(), xk.data(), xk.data() + d);
    }
    const Vector shift = x.value(*ks) - x_prime.value(*ks_prime);
    for (std::size_t k = *ks_prime + 1; k <= x_prime.grid().n_steps(); ++k) {
        const Vector y = x_prime.value(k) + shift;
        v.insert(v.end(), y.data(), y.data() + d);
    }
    return Path(out_grid, d, std::move(v));
}

/// ‖x‖_{∞,s}: max over nodes t_k <= s of the Euclidean norm.
inline double sup_norm(const Path& x, double s) {
    double m = 0.0;
    const double eps = 1e-9 * x.grid().dt();
    for (std::size_t k = 0; k < x.grid().n_nodes(); ++k) {
        if (x.grid().node(k) > s + eps) break;
        m = std::max(m, x.value(k).norm());
    }
    return m;
}

/// √|t2 − t1| + sup_r ‖x1(r ∧ t1) − x2(r ∧ t2)‖. Paths are constant-extended
/// outside their spans; the sup is taken over the union of both node sets and
/// the two stopping times, where the piecewise-linear difference attains it.
inline double d_infinity(double t1, const Path& x1, double t2, const Path& x2) {
    if (x1.dim() != x2.dim()) throw GridMismatchError("d_infinity: dimension mismatch");
    std::vector<double> clock;
    clock.reserve(x1.grid().n_nodes() + x2.grid().n_nodes() + 2);
    for (std::size_t k = 0; k < x1.grid().n_nodes(); ++k) clock.push_back(x1.grid().node(k));
    for (std::size_t k = 0; k < x2.grid().n_nodes(); ++k) clock.push_back(x2.grid().node(k));
    clock.push_back(t1);
    clock.push_back(t2);
    double sup = 0.0;
    for (double r : clock) sup = std::max(sup, (x1.at(std::min(r, t1)) - x2.at(std::min(r, t2))).norm());
    return std::sqrt(std::abs(t2 - t1)) + sup;
}

/// Piecewise-linear path through `points` at the nodes of `grid`.
inline Path interpolate(const std::vector<Vector>& points, const TimeGrid& grid) {
    return Path(grid, points);
}

inline void write_path_csv(std::ostream& os, const Path& p) {
    os.precision(17);
    os << 't';
    for (std::size_t c = 0; c < p.dim(); ++c) os << ",x" << (c + 1);
    os << '\n';
    for (std::size_t k = 0; k < p.grid().n_nodes(); ++k) {
        os << p.grid().node(k);
        for (std::size_t c = 0; c < p.dim(); ++c) os << ',' << p.value(k)[static_cast<Eigen::Index>(c)];
        os << '\n';
    }
}

/// Reads the `t,x1,...,xd` format; the time column must be a uniform grid.
inline Path read_path_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw GridMismatchError("read_path_csv: empty input");
    const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (dim == 0 || line.rfind("t,", 0) != 0) throw GridMismatchError("read_path_csv: bad header");
    std::vector<double> times;
    std::vector<double> vals;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            const double v = std::stod(cell);
            if (col == 0) times.push_back(v); else vals.push_back(v);
            ++col;
        }
        if (col != dim + 1) throw GridMismatchError("read_path_csv: ragged row");
    }
    if (times.size() < 2) throw GridMismatchError("read_path_csv: need at least two nodes");
    TimeGrid grid(times.front(), times.back(), times.size() - 1);
    for (std::size_t k = 0; k < times.size(); ++k)
        if (std::abs(times[k] - grid.node(k)) > 1e-9 * std::max(1.0, grid.span()))
            throw GridMismatchError("read_path_csv: time column is not uniform");
    return Path(grid, dim, std::move(vals));
}

}  // namespace pathctrl
