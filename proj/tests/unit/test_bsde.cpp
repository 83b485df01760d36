#include "pathctrl/bsde.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace pathctrl;

namespace {

Ensemble zero_control(const ModelSpec& m, std::size_t n_paths, std::size_t steps, double x0 = 0.0) {
    SimulationPlan p;
    p.grid = TimeGrid(0.0, 1.0, steps);
    p.n_paths = n_paths;
    p.seed = 11;
    p.x0 = Vector::Constant(1, x0);
    return simulate_forward(m, p);
}

TerminalFunctional quadratic(double target) {
    return markov_terminal([target](const Vector& x) { return -(x[0] - target) * (x[0] - target); });
}

}  // namespace

TEST(Bsde, ConstantPayoff) {
    BasisSpec b;
    b.family = BasisSpec::Family::polynomial;
    b.degree = 0;
    const auto ens = zero_control(toy1d(), 2000, 10);
    const auto sol = solve_penalized(toy1d(), markov_terminal([](const Vector&) { return 3.0; }), 4.0, ens, b);
    for (double y : sol.y) EXPECT_NEAR(y, 3.0, 1e-12);
    for (double z : sol.z) EXPECT_NEAR(z, 0.0, 1e-12);
    EXPECT_NEAR(sol.y0, 3.0, 1e-12);
}

TEST(Bsde, LinearPayoffGainsFullPush) {
    const double n = 2.0;
    const auto ens = zero_control(toy1d(), 5000, 20, 0.5);
    const auto sol = solve_penalized(toy1d(), markov_terminal([](const Vector& x) { return x[0]; }), n, ens,
                                     BasisSpec::markovian(16));
    EXPECT_NEAR(sol.y0, 0.5 + n, 0.05);
    const auto vs = constraint_violation(sol);
    ASSERT_EQ(vs.mean_per_step.size(), 20u);
    for (double v : vs.mean_per_step) EXPECT_NEAR(v, 1.0, 0.05);
    EXPECT_NEAR(vs.integral, 1.0, 0.05);
}

TEST(Bsde, ZeroPenaltyIsExpectation) {
    const auto ens = zero_control(toy1d(), 20000, 20);
    const auto sol = solve_penalized(toy1d(), quadratic(1.0), 0.0, ens, BasisSpec::markovian(32));
    EXPECT_LE(std::abs(sol.y0 + 2.0), 3.0 * sol.y0_se + 1e-3);
}

TEST(Bsde, LadderIsMonotone) {
    const auto ens = zero_control(toy1d(), 5000, 20);
    const auto rep = penalty_monotonicity(toy1d(), quadratic(1.0), {0.0, 1.0, 2.0, 4.0}, ens, BasisSpec::markovian(32));
    EXPECT_TRUE(rep.monotone);
    EXPECT_FALSE(std::isnan(rep.saturation_gap));
    EXPECT_LT(rep.y0.front(), rep.y0.back());
    EXPECT_THROW(penalty_monotonicity(toy1d(), quadratic(1.0), {1.0, 1.0}, ens, BasisSpec::markovian(32)),
                 PreconditionError);
}

TEST(Bsde, SubstepCount) {
    const TimeGrid g(0.0, 1.0, 50);
    EXPECT_EQ(bsde_substeps(toy1d(), 16.0, g, {}), 16u);
    EXPECT_EQ(bsde_substeps(toy1d(), 0.0, g, {}), 1u);
    EXPECT_EQ(bsde_substeps(toy1d(), 1e6, g, {}), BsdeOptions{}.max_substeps);
}

TEST(Bsde, RejectsDegenerateOrControlledInput) {
    const auto flat = constant_1d(0.0, 0.0, 1.0);
    EXPECT_THROW(solve_penalized(flat, quadratic(1.0), 1.0, zero_control(flat, 10, 5), BasisSpec::markovian()),
                 SingularVolatilityError);
    SimulationPlan p;
    p.grid = TimeGrid(0.0, 1.0, 5);
    p.n_paths = 10;
    p.control = ControlSpec::constant(Vector::Constant(1, 1.0));
    EXPECT_THROW(solve_penalized(toy1d(), quadratic(1.0), 1.0, simulate_forward(toy1d(), p), BasisSpec::markovian()),
                 PreconditionError);
    EXPECT_THROW(solve_penalized(toy1d(), quadratic(1.0), -1.0, zero_control(toy1d(), 10, 5), BasisSpec::markovian()),
                 PreconditionError);
}

TEST(Bsde, CsvHeader) {
    const auto sol = solve_penalized(toy1d(), quadratic(1.0), 1.0, zero_control(toy1d(), 200, 5), BasisSpec::markovian(8));
    std::stringstream ss;
    write_bsde_csv(ss, sol);
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line, "k,t,mean_Y,se_Y,mean_rho_violation");
    std::size_t rows = 0;
    while (std::getline(ss, line)) ++rows;
    EXPECT_EQ(rows, 6u);
}

TEST(Regression, ProjectsLinearFunctionExactly) {
    const auto ens = zero_control(toy1d(), 4000, 4);
    BasisSpec b;
    b.family = BasisSpec::Family::polynomial;
    b.degree = 2;
    std::vector<double> feat, y;
    for (std::size_t j = 0; j < ens.n_paths; ++j) {
        const double x = ens.value(j, 2)[0];
        feat.push_back(x);
        y.push_back(1.0 + 2.0 * x - 0.5 * x * x);
    }
    StepRegression reg(b, feat, 1);
    const auto fit = reg.project(y);
    for (std::size_t j = 0; j < y.size(); ++j) EXPECT_NEAR(fit[j], y[j], 1e-9);
}
