#include "pathctrl/control.hpp"
#include "pathctrl/quadrature.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pathctrl;

namespace {

TerminalFunctional quadratic(double target) {
    return markov_terminal([target](const Vector& x) { return -(x[0] - target) * (x[0] - target); });
}

const TimeGrid kGrid(0.0, 1.0, 50);
const Vector kX0 = Vector::Zero(1);

double ghat_oracle() {
    return gaussian_expectation([](double z) {
        const double e = std::max(z - 1.0, 0.0);
        return -e * e;
    }, 0.0, 1.0, {1.0}, 1e-13);
}

}  // namespace

TEST(GridDp, NoControlMatchesExpectation) {
    const auto dp = solve_grid_dp(toy1d(), quadratic(1.0), 0.0, GridDpSpec{}, kGrid, kX0);
    EXPECT_NEAR(dp.estimate.value, -2.0, 0.005);
    EXPECT_EQ(dp.levels.size(), 1u);
}

TEST(GridDp, NoiselessIncreasingPayoffPushesAtMax) {
    const auto m = constant_1d(0.0, 0.0, 1.0);
    const auto dp = solve_grid_dp(m, markov_terminal([](const Vector& x) { return x[0]; }), 2.0, GridDpSpec{}, kGrid, kX0);
    for (double x : {-1.0, 0.0, 1.0})
        for (std::size_t k : {0u, 25u, 49u}) EXPECT_EQ(dp.control_at(k, Vector::Constant(1, x))[0], 2.0);
    EXPECT_NEAR(dp.estimate.value, 2.0, 1e-9);
}

TEST(GridDp, LadderIncreasesTowardFaceliftLimit) {
    const double oracle = ghat_oracle();
    EXPECT_NEAR(oracle, -0.07533978334377075, 1e-10);
    double prev = -1e9;
    double last = 0.0;
    for (double n : {1.0, 4.0, 16.0}) {
        last = solve_grid_dp(toy1d(), quadratic(1.0), n, GridDpSpec{}, kGrid, kX0).estimate.value;
        EXPECT_GE(last, prev);
        prev = last;
    }
    EXPECT_LE(last, oracle + 1e-3);
    EXPECT_NEAR(last, oracle, 0.03);
}

TEST(GridDp, Preconditions) {
    GridDpSpec s;
    s.quadrature_nodes = 5;
    EXPECT_THROW(solve_grid_dp(toy1d(), quadratic(1.0), 1.0, s, kGrid, kX0), PreconditionError);
    auto path_dep = toy1d();
    path_dep.markovian = false;
    EXPECT_THROW(solve_grid_dp(path_dep, quadratic(1.0), 1.0, GridDpSpec{}, kGrid, kX0), PreconditionError);
}

TEST(MonteCarlo, PoliciesBoundTheDpValue) {
    SimulationPlan p;
    p.grid = kGrid;
    p.n_paths = 20000;
    p.seed = 5;
    p.x0 = kX0;
    const auto zero = estimate_value_mc(toy1d(), quadratic(1.0), ControlSpec::none(1), p);
    EXPECT_LE(std::abs(zero.value + 2.0), 3.0 * zero.se);

    const double n = 4.0;
    const auto dp = solve_grid_dp(toy1d(), quadratic(1.0), n, GridDpSpec{}, kGrid, kX0);
    const auto replay = estimate_value_mc(toy1d(), quadratic(1.0), dp_policy(dp, n), p);
    EXPECT_LE(replay.value, dp.estimate.value + 3.0 * replay.se + 0.01);
    EXPECT_GE(replay.value, dp.estimate.value - 3.0 * replay.se - 0.02);

    const auto bang = ControlSpec::feedback(
        [](double, const PathHistory& h) { return Vector::Constant(1, h.current()[0] < 1.0 ? 4.0 : 0.0); }, n, 1);
    const auto bb = estimate_value_mc(toy1d(), quadratic(1.0), bang, p);
    EXPECT_LE(bb.value, dp.estimate.value + 3.0 * bb.se + 0.01);
    EXPECT_GT(bb.value, zero.value);
}

TEST(MonteCarlo, BoxExitRate) {
    SimulationPlan p;
    p.grid = kGrid;
    p.n_paths = 5000;
    p.x0 = kX0;
    const auto e = simulate_forward(toy1d(), p);
    EXPECT_EQ(boundary_hit_rate(e, {{-100.0, 100.0}}), 0.0);
    EXPECT_EQ(boundary_hit_rate(e, {{0.5, 1.0}}), 1.0);
}

TEST(Dpp, NoiselessResidualVanishes) {
    const auto m = constant_1d(0.0, 0.0, 1.0);
    const auto r = dpp_residual(m, markov_terminal([](const Vector& x) { return x[0]; }), 1.0, 0.5, GridDpSpec{}, kGrid, kX0);
    EXPECT_NEAR(r.residual, 0.0, 1e-10);
}

TEST(Dpp, MidpointResidualBelowRichardsonBound) {
    const auto r = dpp_residual(toy1d(), quadratic(1.0), 4.0, 0.5, GridDpSpec{}, kGrid, kX0);
    EXPECT_TRUE(r.below_bound) << r.residual << " vs " << r.richardson_error;
    EXPECT_LT(r.residual_refined, r.residual);
    EXPECT_THROW(dpp_residual(toy1d(), quadratic(1.0), 4.0, 0.0, GridDpSpec{}, kGrid, kX0), PreconditionError);
}

TEST(ConvexOrder, Identities) {
    auto tm = build_transaction_model(0.1, constant_scalar(0.02), constant_scalar(0.05), constant_scalar(0.2), 2.0);
    SimulationPlan p;
    p.grid = TimeGrid(0.0, 1.0, 20);
    p.n_paths = 500;
    p.x0 = Eigen::Vector3d(1.0, 1.0, 0.0);
    p.control = ControlSpec::none(3);
    const auto same = convex_order_experiment(tm.model.base, constant_scalar(-0.25), constant_scalar(-0.25), tm.model.M,
                                              tm.terminal, p);
    EXPECT_TRUE(same.paths_identical);
    EXPECT_EQ(same.mean_p, same.mean_q);
    const auto zero_M = convex_order_experiment(tm.model.base, constant_scalar(-0.5), constant_scalar(-0.125),
                                                [](double) { return Matrix::Zero(3, 3); }, tm.terminal, p);
    EXPECT_TRUE(zero_M.paths_identical);
    EXPECT_THROW(convex_order_experiment(tm.model.base, constant_scalar(-0.1), constant_scalar(-0.5), tm.model.M,
                                         tm.terminal, p),
                 PreconditionError);
}

TEST(DegenerateLadder, FlatWhenEtaVanishes) {
    auto tm = build_transaction_model(0.1, constant_scalar(0.02), constant_scalar(0.05), constant_scalar(0.2), 2.0);
    SimulationPlan p;
    p.grid = TimeGrid(0.0, 1.0, 20);
    p.n_paths = 500;
    p.x0 = Eigen::Vector3d(1.0, 1.0, 0.0);
    p.control = ControlSpec::none(3);
    const auto r = degenerate_sup_ladder(tm.model.base, tm.model.M, [](double) { return constant_scalar(0.0); },
                                         tm.terminal, {2.0, 4.0, 8.0}, {ControlSpec::none(3)}, p);
    ASSERT_EQ(r.gaps.size(), 2u);
    for (double g : r.gaps) EXPECT_EQ(g, 0.0);
    EXPECT_TRUE(r.nondecreasing);
    EXPECT_THROW(degenerate_sup_ladder(tm.model.base, tm.model.M, [](double) { return constant_scalar(0.0); },
                                       tm.terminal, {2.0, 4.0}, {}, p),
                 PreconditionError);
}

TEST(Regularity, ConstantAndLinearFunctions) {
    const auto c = regularity_probe([](double, const Vector&) { return 5.0; }, 1.0, kX0,
                                    {Vector::Constant(1, 0.1)}, {0.01, 0.04});
    EXPECT_EQ(c.space_diffs[0], 0.0);
    EXPECT_TRUE(std::isnan(c.holder_exponent));
    const auto l = regularity_probe([](double t, const Vector& x) { return 2.0 * x[0] + std::sqrt(t); }, 1.0, kX0,
                                    {Vector::Constant(1, 0.1), Vector::Constant(1, 0.2)}, {0.01, 0.04, 0.16});
    for (double r : l.lipschitz_ratios) EXPECT_NEAR(r, 2.0, 1e-12);
    EXPECT_GT(l.holder_exponent, 0.5);
}

TEST(ControlLattice, Levels) {
    const auto a = control_lattice(0.6, 1, 0.25);
    ASSERT_EQ(a.size(), 4u);
    EXPECT_EQ(a.back()[0], 0.6);
    EXPECT_EQ(control_lattice(1.0, 2, 0.5).size(), 9u);
    EXPECT_EQ(control_lattice(0.0, 2, 0.25).size(), 1u);
    EXPECT_THROW(control_lattice(-1.0, 1, 0.25), PreconditionError);
}
