#pragma once

#include "pathctrl/core.hpp"
#include "pathctrl/model.hpp"
#include "pathctrl/parallel.hpp"
#include "pathctrl/regression.hpp"
#include "pathctrl/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace pathctrl {

struct RegressionStepReport {
    std::size_t step = 0;
    std::size_t basis_size = 0;
    double rcond = 0.0;
    bool fell_back = false;
    std::string note;
};

/// Discrete (Y, Z) of the penalised BSDE on an ensemble.
struct BsdeSolution {
    TimeGrid grid{0.0, 1.0, 1};
    double penalty_n = 0.0;
    std::size_t n_paths = 0;
    std::size_t dim = 1;
    std::vector<double> y;          // n_paths × n_nodes
    std::vector<double> z;          // n_paths × n_steps × dim
    std::vector<double> violation;  // n_paths × n_steps: ρ(fᵀ(σᵀ)⁻¹ Z)
    std::vector<RegressionStepReport> regression_report;
    /// Sub-steps per ensemble step used by the sweep.
    std::size_t substeps = 1;

    /// Mean of Y at t_start and the SE of the pathwise estimator
    /// U + Σ_k Δ n ρ_k, whose mean equals it exactly.
    double y0 = 0.0;
    double y0_se = 0.0;
    /// Cross-sectional std of Y at t_start.
    double y0_spread = 0.0;

    double Y(std::size_t j, std::size_t k) const { return y[j * grid.n_nodes() + k]; }
    Eigen::Map<const Vector> Z(std::size_t j, std::size_t k) const {
        return Eigen::Map<const Vector>(z.data() + (j * grid.n_steps() + k) * dim, static_cast<Eigen::Index>(dim));
    }
};

/// Time refinement of the backward sweep. Each Euler step of the ensemble is
/// split into J sub-steps along a Brownian bridge of its increment, with J the
/// smallest count giving n Δ ‖f‖ / J <= max_push_per_step (capped at
/// max_substeps). The coarse step is reproduced exactly at the last sub-node.
struct BsdeOptions {
    double max_push_per_step = 0.02;
    std::size_t max_substeps = 64;
    std::uint64_t bridge_seed_salt = 0x9E3779B97F4A7C15ull;
};

inline std::size_t bsde_substeps(const ModelSpec& model, double penalty_n, const TimeGrid& grid, const BsdeOptions& o) {
    if (penalty_n == 0.0 || !(o.max_push_per_step > 0.0)) return 1;
    const double push = penalty_n * grid.dt() * model.f(grid.t_start()).cwiseAbs().rowwise().sum().maxCoeff();
    const auto J = static_cast<std::size_t>(std::ceil(push / o.max_push_per_step - 1e-12));
    return std::clamp<std::size_t>(J, 1, std::max<std::size_t>(1, o.max_substeps));
}

/// Explicit least-squares Monte Carlo scheme, backward over the (sub-)steps:
///   Z_i = E[(Y_{i+1} − E[Y_{i+1}|F_i]) ΔB_i | F_i] / Δ_i
///   Y_i = E[Y_{i+1}|F_i] + Δ_i n ρ(f_iᵀ (σ_iᵀ)⁻¹ Z_i),   Y_end = U.
/// Conditional expectations are projections on `basis` evaluated on the path
/// histories. The ensemble must be uncontrolled.
namespace detail {

/// Writes (σᵀ)⁻¹ column-major into `out`; closed form for d ≤ 2.
inline void inverse_transpose(const Matrix& s, double* out, std::size_t path, std::size_t step) {
    const auto d = s.rows();
    auto singular = [&] { throw SingularVolatilityError(at_path_step(path, step, "volatility is singular")); };
    const double scale = s.cwiseAbs().maxCoeff();
    if (d == 1) {
        if (!(std::abs(s(0, 0)) > 0.0)) singular();
        out[0] = 1.0 / s(0, 0);
        return;
    }
    if (d == 2) {
        const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
        if (!(std::abs(det) > 1e-13 * scale * scale)) singular();
        // inverse of sᵀ = [[s00, s10], [s01, s11]], stored column-major
        out[0] = s(1, 1) / det;
        out[1] = -s(0, 1) / det;
        out[2] = -s(1, 0) / det;
        out[3] = s(0, 0) / det;
        return;
    }
    Eigen::FullPivLU<Matrix> lu(s.transpose());
    if (!lu.isInvertible()) singular();
    const Matrix inv_t = lu.inverse();
    std::copy(inv_t.data(), inv_t.data() + d * d, out);
}

}  // namespace detail

inline BsdeSolution solve_penalized(const ModelSpec& model, const TerminalFunctional& U, double penalty_n,
                                    const Ensemble& ens, const BasisSpec& basis, const BsdeOptions& opts = {}) {
    if (penalty_n < 0.0) throw PreconditionError("solve_penalized: penalty must be >= 0");
    if (ens.dim != model.dim) throw PreconditionError("solve_penalized: ensemble dimension does not match model");
    for (double c : ens.controls)
        if (c != 0.0) throw PreconditionError("solve_penalized: ensemble must be simulated with zero control");
    {
        const Matrix s0 = model.sigma(ens.grid.t_start(), ens.history(0, 0));
        if (!Eigen::FullPivLU<Matrix>(s0).isInvertible())
            throw SingularVolatilityError("solve_penalized: volatility is degenerate; pass the perturbed model");
    }

    const std::size_t N = ens.n_paths, K = ens.grid.n_steps(), d = ens.dim;
    const std::size_t J = bsde_substeps(model, penalty_n, ens.grid, opts);
    const double dt = ens.grid.dt(), ds = dt / static_cast<double>(J);
    BsdeSolution sol;
    sol.grid = ens.grid;
    sol.penalty_n = penalty_n;
    sol.n_paths = N;
    sol.dim = d;
    sol.substeps = J;
    sol.y.assign(N * (K + 1), 0.0);
    sol.z.assign(N * K * d, 0.0);
    sol.violation.assign(N * K, 0.0);

    std::vector<double> next = ens.evaluate(U);
    std::vector<double> accumulated = next;
    for (std::size_t j = 0; j < N; ++j) sol.y[j * (K + 1) + K] = next[j];

    const std::size_t m = basis.feature_count(d);
    const NormalStream bridge(ens.seed ^ opts.bridge_seed_salt);
    std::vector<double> feats(N * m), base_feats(N * m);
    std::vector<double> work(N), rho_i(N);
    std::vector<double> drift(N * d), sig_inv_t(N * d * d), vol(N * d * d);
    std::vector<double> bpart(J > 1 ? N * (J + 1) * d : 0);  // bridge partial sums B_{k,i}
    std::vector<double> xsub(N * d), dbsub(N * d);

    for (std::size_t kk = K; kk-- > 0;) {
        const double t = ens.grid.node(kk);
        const Matrix f = model.f(t);
        parallel_blocks(N, [&](std::size_t b, std::size_t e, std::size_t) {
            std::vector<double> eps(J * d);
            for (std::size_t j = b; j < e; ++j) {
                const auto h = ens.history(j, kk);
                basis.features_of(h, base_feats.data() + j * m);
                const Matrix s = model.sigma(t, h);
                detail::inverse_transpose(s, sig_inv_t.data() + j * d * d, j, kk);
                if (J == 1) continue;
                std::copy(s.data(), s.data() + d * d, vol.data() + j * d * d);
                const Vector mu = model.mu(t, h);
                std::copy(mu.data(), mu.data() + d, drift.data() + j * d);
                bridge.fill(j, static_cast<std::uint32_t>(kk), eps.data(), J * d);
                const auto dB = ens.increment(j, kk);
                double* bp = bpart.data() + j * (J + 1) * d;
                for (std::size_t c = 0; c < d; ++c) {
                    double mean = 0.0;
                    for (std::size_t i = 0; i < J; ++i) mean += eps[i * d + c];
                    mean /= static_cast<double>(J);
                    const double shift = dB[static_cast<Eigen::Index>(c)] / static_cast<double>(J);
                    const double sq = std::sqrt(ds);
                    bp[c] = 0.0;
                    for (std::size_t i = 0; i < J; ++i) bp[(i + 1) * d + c] = bp[i * d + c] + sq * (eps[i * d + c] - mean) + shift;
                    bp[J * d + c] = dB[static_cast<Eigen::Index>(c)];
                }
            }
        });

        std::fill(rho_i.begin(), rho_i.end(), 0.0);
        for (std::size_t ii = J; ii-- > 0;) {
            // Sub-node states, increments and features.
            if (ii == 0) {
                std::copy(base_feats.begin(), base_feats.end(), feats.begin());
            }
            parallel_blocks(N, [&](std::size_t b, std::size_t e, std::size_t) {
                for (std::size_t j = b; j < e; ++j) {
                    const double* x0 = ens.values.data() + (j * (K + 1) + kk) * d;
                    if (J == 1) {
                        for (std::size_t c = 0; c < d; ++c) dbsub[j * d + c] = ens.increments[(j * K + kk) * d + c];
                        continue;
                    }
                    const double* bp = bpart.data() + j * (J + 1) * d;
                    const double* s = vol.data() + j * d * d;  // column-major
                    const double* mu = drift.data() + j * d;
                    const double elapsed = static_cast<double>(ii) * ds;
                    double* x = xsub.data() + j * d;
                    for (std::size_t r = 0; r < d; ++r) {
                        double v = x0[r] + mu[r] * elapsed;
                        for (std::size_t c = 0; c < d; ++c) v += s[c * d + r] * bp[ii * d + c];
                        x[r] = v;
                    }
                    for (std::size_t c = 0; c < d; ++c) dbsub[j * d + c] = bp[(ii + 1) * d + c] - bp[ii * d + c];
                    if (ii > 0)
                        basis.features_at_substep(base_feats.data() + j * m, x0, x, d, elapsed,
                                                  feats.data() + j * m);
                }
            });

            const StepRegression reg(basis, feats, m);
            if (ii == 0) sol.regression_report.push_back({kk, reg.basis_size(), reg.rcond(), reg.fell_back(), reg.note()});

            // Z from the centred response, refitted with the first-pass Z(ΔBΔBᵀ/Δ − I) as a
            // control variate; then E[Y_{i+1}|F_i] from Y_{i+1} − Z_i·ΔB_i. Both control
            // terms have zero conditional mean and remove most of the fit noise.
            const std::vector<double> centre = reg.project(next);
            std::vector<std::vector<double>> zc(d);
            for (std::size_t c = 0; c < d; ++c) {
                for (std::size_t j = 0; j < N; ++j) work[j] = (next[j] - centre[j]) * dbsub[j * d + c] / ds;
                zc[c] = reg.project(work);
            }
            {
                std::vector<std::vector<double>> refit(d);
                for (std::size_t c = 0; c < d; ++c) {
                    for (std::size_t j = 0; j < N; ++j) {
                        double r = (next[j] - centre[j]) * dbsub[j * d + c] / ds;
                        for (std::size_t e = 0; e < d; ++e)
                            r -= zc[e][j] * (dbsub[j * d + e] * dbsub[j * d + c] / ds - (e == c ? 1.0 : 0.0));
                        work[j] = r;
                    }
                    refit[c] = reg.project(work);
                }
                zc = std::move(refit);
            }
            for (std::size_t j = 0; j < N; ++j) {
                double zdb = 0.0;
                for (std::size_t c = 0; c < d; ++c) zdb += zc[c][j] * dbsub[j * d + c];
                work[j] = next[j] - zdb;
            }
            const std::vector<double> cond = reg.project(work);

            parallel_blocks(N, [&](std::size_t b, std::size_t e, std::size_t) {
                std::vector<double> w(d);
                for (std::size_t j = b; j < e; ++j) {
                    if (ii == 0)
                        for (std::size_t c = 0; c < d; ++c) sol.z[(j * K + kk) * d + c] = zc[c][j];
                    // v = ρ(fᵀ (σᵀ)⁻¹ z)
                    const double* inv_t = sig_inv_t.data() + j * d * d;  // column-major
                    for (std::size_t r = 0; r < d; ++r) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < d; ++c) acc += inv_t[c * d + r] * zc[c][j];
                        w[r] = acc;
                    }
                    double v = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        double q = 0.0;
                        for (std::size_t r = 0; r < d; ++r) q += f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * w[r];
                        v += std::max(q, 0.0);
                    }
                    rho_i[j] += v / static_cast<double>(J);
                    const double drv = ds * penalty_n * v;
                    next[j] = cond[j] + drv;
                    accumulated[j] += drv;
                }
            });
        }
        for (std::size_t j = 0; j < N; ++j) {
            sol.violation[j * K + kk] = rho_i[j];
            sol.y[j * (K + 1) + kk] = next[j];
        }
    }

    const auto y0 = mean_se(next);
    sol.y0 = y0.mean;
    sol.y0_spread = y0.sd;
    sol.y0_se = mean_se(accumulated).se;
    return sol;
}

/// Per-step mean of ρ(f_kᵀ(σ_kᵀ)⁻¹ Z_k); `penalty_paid` = n Σ_k mean_k Δ.
struct ViolationSeries {
    std::vector<double> mean_per_step;
    double integral = 0.0;
    double penalty_paid = 0.0;
};

inline ViolationSeries constraint_violation(const BsdeSolution& sol) {
    ViolationSeries vs;
    const std::size_t K = sol.grid.n_steps();
    vs.mean_per_step.resize(K);
    std::vector<double> col(sol.n_paths);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < sol.n_paths; ++j) col[j] = sol.violation[j * K + k];
        vs.mean_per_step[k] = mean_se(col).mean;
        vs.integral += vs.mean_per_step[k] * sol.grid.dt();
    }
    vs.penalty_paid = sol.penalty_n * vs.integral;
    return vs;
}

struct PenaltyLadderReport {
    std::vector<double> levels;
    std::vector<double> y0;
    std::vector<double> se;
    /// Y0(n_{i+1}) >= Y0(n_i) − 3 SE for every consecutive pair.
    bool monotone = true;
    std::vector<bool> pair_ok;
    /// Y0(n_max) − Y0(n_max / 2), when n_max/2 is on the ladder (else NaN).
    double saturation_gap = std::numeric_limits<double>::quiet_NaN();
    std::vector<ViolationSeries> violations;
};

/// Solves the penalised BSDE along an increasing ladder on one shared ensemble.
inline PenaltyLadderReport penalty_monotonicity(const ModelSpec& model, const TerminalFunctional& U,
                                                const std::vector<double>& n_list, const Ensemble& ens,
                                                const BasisSpec& basis) {
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (!(n_list[i] > n_list[i - 1])) throw PreconditionError("penalty_monotonicity: ladder must be strictly increasing");
    PenaltyLadderReport r;
    r.levels = n_list;
    for (double n : n_list) {
        const auto sol = solve_penalized(model, U, n, ens, basis);
        r.y0.push_back(sol.y0);
        r.se.push_back(sol.y0_se);
        r.violations.push_back(constraint_violation(sol));
    }
    for (std::size_t i = 1; i < n_list.size(); ++i) {
        const double se = std::max(r.se[i], r.se[i - 1]);
        const bool ok = r.y0[i] >= r.y0[i - 1] - 3.0 * se;
        r.pair_ok.push_back(ok);
        r.monotone = r.monotone && ok;
    }
    if (!n_list.empty()) {
        const double half = n_list.back() / 2.0;
        for (std::size_t i = 0; i + 1 < n_list.size(); ++i)
            if (std::abs(n_list[i] - half) < 1e-12 * std::max(1.0, half)) r.saturation_gap = r.y0.back() - r.y0[i];
    }
    return r;
}

/// CSV rows `k,t,mean_Y,se_Y,mean_rho_violation`.
inline void write_bsde_csv(std::ostream& os, const BsdeSolution& sol) {
    os.precision(17);
    os << "k,t,mean_Y,se_Y,mean_rho_violation\n";
    const std::size_t K = sol.grid.n_steps();
    const auto vs = constraint_violation(sol);
    std::vector<double> col(sol.n_paths);
    for (std::size_t k = 0; k <= K; ++k) {
        for (std::size_t j = 0; j < sol.n_paths; ++j) col[j] = sol.Y(j, k);
        const auto ms = mean_se(col);
        os << k << ',' << sol.grid.node(k) << ',' << ms.mean << ',' << ms.se << ','
           << (k < K ? vs.mean_per_step[k] : 0.0) << '\n';
    }
}

}  // namespace pathctrl
