#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/parallel.hpp"
#include "pathctrl/pathspace.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace pathctrl {

/// Path features available to the regression basis. All are non-anticipative.
enum class Feature { current, running_max, running_min, running_integral };

struct BasisSpec {
    enum class Family { polynomial, local_bins };

    Family family = Family::local_bins;
    /// Total degree for the polynomial family.
    int degree = 3;
    /// Intervals per feature for the local-bins family (piecewise-linear hats).
    int bins = 32;
    /// Features per state component.
    std::vector<Feature> features{Feature::current};
    /// Replaces `features` when set: returns the feature vector of a history.
    std::function<std::vector<double>(const PathHistory&)> custom;
    std::size_t custom_count = 0;

    static BasisSpec markovian(int bins = 32) {
        BasisSpec b;
        b.bins = bins;
        return b;
    }

    static BasisSpec path_dependent(int degree = 2) {
        BasisSpec b;
        b.family = Family::polynomial;
        b.degree = degree;
        b.features = {Feature::current, Feature::running_max, Feature::running_integral};
        return b;
    }

    std::size_t feature_count(std::size_t dim) const {
        return custom ? custom_count : features.size() * dim;
    }

    void features_of(const PathHistory& h, double* out) const {
        if (custom) {
            const auto v = custom(h);
            std::copy(v.begin(), v.end(), out);
            return;
        }
        std::size_t i = 0;
        for (Feature f : features)
            for (std::size_t c = 0; c < h.dim(); ++c) {
                switch (f) {
                    case Feature::current: out[i++] = h.current()[static_cast<Eigen::Index>(c)]; break;
                    case Feature::running_max: out[i++] = h.running_max(c); break;
                    case Feature::running_min: out[i++] = h.running_min(c); break;
                    case Feature::running_integral: out[i++] = h.running_integral(c); break;
                }
            }
    }

    /// Features at a state `x` reached `elapsed` time units after the last node
    /// of a history whose features are `node_feats` and whose last value is `x0`
    /// (linear segment in between). Custom features are kept at the node.
    void features_at_substep(const double* node_feats, const double* x0, const double* x, std::size_t d,
                             double elapsed, double* out) const {
        const std::size_t m = feature_count(d);
        std::copy(node_feats, node_feats + m, out);
        if (custom) return;
        std::size_t i = 0;
        for (Feature f : features)
            for (std::size_t c = 0; c < d; ++c, ++i) {
                const std::size_t ci = c;
                switch (f) {
                    case Feature::current: out[i] = x[ci]; break;
                    case Feature::running_max: out[i] = std::max(out[i], x[ci]); break;
                    case Feature::running_min: out[i] = std::min(out[i], x[ci]); break;
                    case Feature::running_integral: out[i] += 0.5 * (x0[ci] + x[ci]) * elapsed; break;
                }
            }
    }
};

/// Least-squares projection onto a basis of the cross-sectional features at
/// one time step. The Gram matrix is factored once; any number of responses
/// can then be projected. Rank deficiency triggers a fallback to a smaller
/// basis (lower degree or fewer bins), recorded in `note`.
class StepRegression {
public:
    /// Rows used to place the hat knots.
    static constexpr std::size_t kKnotSample = 16384;

    /// `features` is row-major N × m.
    StepRegression(const BasisSpec& spec, std::span<const double> features, std::size_t m)
        : n_(m ? features.size() / m : 0), m_(m) {
        if (m_ == 0 || features.size() % m_ != 0) throw PreconditionError("StepRegression: bad feature matrix");
        prepare_features(features);
        int degree = spec.degree;
        int bins = spec.bins;
        const bool poly = spec.family == BasisSpec::Family::polynomial;
        for (;;) {
            if (poly) build_polynomial(degree); else build_hats(bins);
            if (factor()) break;
            fell_back_ = true;
            if (poly && degree > 0) {
                --degree;
            } else if (!poly && bins > 1) {
                bins /= 2;
            } else {
                throw PreconditionError("StepRegression: singular even for the constant basis");
            }
        }
        if (fell_back_) {
            note_ = poly ? "rank-deficient design; polynomial degree lowered to " + std::to_string(degree)
                         : "rank-deficient design; bin count lowered to " + std::to_string(bins);
        }
    }

    std::size_t basis_size() const noexcept { return p_; }
    bool fell_back() const noexcept { return fell_back_; }
    double rcond() const noexcept { return rcond_; }
    const std::string& note() const noexcept { return note_; }

    /// Fitted values of the projection of `y` (length N).
    std::vector<double> project(std::span<const double> y) const {
        const std::size_t n_blocks = (n_ + kBlockSize - 1) / kBlockSize;
        std::vector<Vector> partial(n_blocks, Vector::Zero(static_cast<Eigen::Index>(p_)));
        parallel_blocks(n_, [&](std::size_t b, std::size_t e, std::size_t blk) {
            Vector& acc = partial[blk];
            for (std::size_t i = b; i < e; ++i)
                for (std::size_t r = 0; r < stride_; ++r) acc[idx_[i * stride_ + r]] += val_[i * stride_ + r] * y[i];
        });
        Vector rhs = Vector::Zero(static_cast<Eigen::Index>(p_));
        for (const auto& v : partial) rhs += v;
        const Vector coef = ldlt_.solve(rhs);
        std::vector<double> out(n_);
        parallel_blocks(n_, [&](std::size_t b, std::size_t e, std::size_t) {
            for (std::size_t i = b; i < e; ++i) {
                double s = 0.0;
                for (std::size_t r = 0; r < stride_; ++r) s += val_[i * stride_ + r] * coef[idx_[i * stride_ + r]];
                out[i] = s;
            }
        });
        return out;
    }

private:
    void prepare_features(std::span<const double> features) {
        lo_.assign(m_, 0.0);
        hi_.assign(m_, 0.0);
        mean_.assign(m_, 0.0);
        sd_.assign(m_, 0.0);
        active_.clear();
        for (std::size_t c = 0; c < m_; ++c) {
            std::vector<double> col(n_);
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < n_; ++i) {
                col[i] = features[i * m_ + c];
                lo = std::min(lo, col[i]);
                hi = std::max(hi, col[i]);
            }
            const auto ms = mean_se(col);
            lo_[c] = lo;
            hi_[c] = hi;
            mean_[c] = ms.mean;
            sd_[c] = ms.sd;
            if (hi - lo > 1e-12 * std::max(1.0, std::abs(hi))) active_.push_back(c);
        }
        feats_.assign(features.begin(), features.end());
    }

    void build_polynomial(int degree) {
        // Exponent tuples of total degree <= degree over the active features.
        std::vector<std::vector<int>> terms{std::vector<int>(active_.size(), 0)};
        for (int deg = 1; deg <= degree; ++deg) {
            std::vector<int> e(active_.size(), 0);
            enumerate(terms, e, 0, deg);
        }
        p_ = terms.size();
        stride_ = p_;
        idx_.assign(n_ * stride_, 0);
        val_.assign(n_ * stride_, 0.0);
        std::vector<double> z(active_.size());
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t a = 0; a < active_.size(); ++a) {
                const std::size_t c = active_[a];
                z[a] = (feats_[i * m_ + c] - mean_[c]) / sd_[c];
            }
            for (std::size_t t = 0; t < p_; ++t) {
                double v = 1.0;
                for (std::size_t a = 0; a < active_.size(); ++a)
                    for (int q = 0; q < terms[t][a]; ++q) v *= z[a];
                idx_[i * stride_ + t] = static_cast<int>(t);
                val_[i * stride_ + t] = v;
            }
        }
    }

    void enumerate(std::vector<std::vector<int>>& out, std::vector<int>& e, std::size_t pos, int remaining) {
        if (pos + 1 == e.size()) {
            e[pos] = remaining;
            out.push_back(e);
            e[pos] = 0;
            return;
        }
        if (e.empty()) return;
        for (int k = remaining; k >= 0; --k) {
            e[pos] = k;
            enumerate(out, e, pos + 1, remaining - k);
        }
        e[pos] = 0;
    }

    /// Piecewise-linear hats on knots at the empirical quantiles i/bins of each
    /// feature, so every interval carries about N/bins samples.
    void build_hats(int bins) {
        const std::size_t a_count = active_.size();
        // Keep the tensor basis small enough for a dense Gram matrix.
        while (a_count > 0 && bins > 1 && std::pow(bins + 1.0, static_cast<double>(a_count)) > 1024.0) bins /= 2;
        std::vector<std::vector<double>> knots(a_count);
        std::vector<std::size_t> per(a_count);
        p_ = 1;
        for (std::size_t a = 0; a < a_count; ++a) {
            const std::size_t c = active_[a];
            // Quantiles from every `step`-th row; the extremes come from the full column.
            const std::size_t step = std::max<std::size_t>(1, n_ / kKnotSample);
            std::vector<double> col;
            col.reserve(n_ / step + 1);
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < n_; ++i) {
                const double v = feats_[i * m_ + c];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                if (i % step == 0) col.push_back(v);
            }
            const std::size_t ns = col.size();
            std::vector<std::size_t> pos(static_cast<std::size_t>(bins) + 1);
            for (int q = 0; q <= bins; ++q)
                pos[static_cast<std::size_t>(q)] =
                    static_cast<std::size_t>(std::llround(static_cast<double>(q) * static_cast<double>(ns - 1) / bins));
            select_ranks(col, pos, 0, pos.size(), 0, col.size());
            auto& k = knots[a];
            col[pos.front()] = lo;
            col[pos.back()] = hi;
            for (std::size_t r : pos)
                if (k.empty() || col[r] > k.back()) k.push_back(col[r]);
            per[a] = k.size();
            p_ *= per[a];
        }
        stride_ = std::size_t{1} << a_count;
        idx_.assign(n_ * stride_, 0);
        val_.assign(n_ * stride_, 0.0);
        std::vector<std::size_t> cell(a_count);
        std::vector<double> w(a_count);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t a = 0; a < a_count; ++a) {
                const auto& k = knots[a];
                const double x = feats_[i * m_ + active_[a]];
                // Branchless search for the last knot <= x.
                std::size_t j = 0, len = k.size();
                while (len > 1) {
                    const std::size_t half = len / 2;
                    j = k[j + half] <= x ? j + half : j;
                    len -= half;
                }
                j = std::min(j, k.size() - 2);
                cell[a] = j;
                w[a] = std::clamp((x - k[j]) / (k[j + 1] - k[j]), 0.0, 1.0);
            }
            for (std::size_t corner = 0; corner < stride_; ++corner) {
                std::size_t index = 0;
                double weight = 1.0;
                for (std::size_t a = a_count; a-- > 0;) {
                    const bool upper = (corner >> a) & 1u;
                    index = index * per[a] + cell[a] + (upper ? 1 : 0);
                    weight *= upper ? w[a] : 1.0 - w[a];
                }
                idx_[i * stride_ + corner] = static_cast<int>(index);
                val_[i * stride_ + corner] = weight;
            }
        }
    }

    /// Places the order statistics at ranks pos[lo, hi) (sorted) within col[b, e).
    static void select_ranks(std::vector<double>& col, const std::vector<std::size_t>& pos, std::size_t lo,
                             std::size_t hi, std::size_t b, std::size_t e) {
        if (lo >= hi) return;
        const std::size_t mid = lo + (hi - lo) / 2;
        const std::size_t r = pos[mid];
        const auto first = col.begin();
        std::nth_element(first + static_cast<std::ptrdiff_t>(b), first + static_cast<std::ptrdiff_t>(r),
                         first + static_cast<std::ptrdiff_t>(e));
        std::size_t left = mid;
        while (left > lo && pos[left - 1] == r) --left;
        std::size_t right = mid + 1;
        while (right < hi && pos[right] == r) ++right;
        select_ranks(col, pos, lo, left, b, r);
        select_ranks(col, pos, right, hi, r + 1, e);
    }

    bool factor() {
        const std::size_t n_blocks = (n_ + kBlockSize - 1) / kBlockSize;
        std::vector<Matrix> partial(n_blocks);
        parallel_blocks(n_, [&](std::size_t b, std::size_t e, std::size_t blk) {
            Matrix G = Matrix::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
            for (std::size_t i = b; i < e; ++i)
                for (std::size_t r = 0; r < stride_; ++r) {
                    const double vr = val_[i * stride_ + r];
                    if (vr == 0.0) continue;
                    for (std::size_t s = 0; s < stride_; ++s)
                        G(idx_[i * stride_ + r], idx_[i * stride_ + s]) += vr * val_[i * stride_ + s];
                }
            partial[blk] = std::move(G);
        });
        Matrix G = Matrix::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
        for (const auto& g : partial) G += g;
        Eigen::ColPivHouseholderQR<Matrix> qr(G);
        qr.setThreshold(1e-11);
        if (qr.rank() < static_cast<Eigen::Index>(p_)) return false;
        ldlt_.compute(G);
        rcond_ = ldlt_.rcond();
        return ldlt_.info() == Eigen::Success && rcond_ > 1e-14;
    }

    std::size_t n_;
    std::size_t m_;
    std::vector<double> feats_;
    std::vector<double> lo_, hi_, mean_, sd_;
    std::vector<std::size_t> active_;
    std::size_t p_ = 0;
    std::size_t stride_ = 0;
    std::vector<int> idx_;
    std::vector<double> val_;
    Eigen::LDLT<Matrix> ldlt_;
    double rcond_ = 0.0;
    bool fell_back_ = false;
    std::string note_;
};

}  // namespace pathctrl
