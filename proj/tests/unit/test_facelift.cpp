#include "pathctrl/facelift.hpp"
#include "pathctrl/quadrature.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace pathctrl;

namespace {

FaceliftSpec quadratic_spec() {
    FaceliftSpec s;
    s.payoff = [](const Vector& x) { return -(x[0] - 1.0) * (x[0] - 1.0); };
    return s;
}

double ghat(double z) {
    const double e = std::max(z - 1.0, 0.0);
    return -e * e;
}

AuxiliaryBundle small_bundle(std::vector<double> ladder) {
    AuxiliaryBundle b;
    b.dp.state_box = {{-3.5, 4.5}};
    b.dp.n_space = 161;
    b.n_steps = 25;
    b.bound_ladder = std::move(ladder);
    return b;
}

}  // namespace

TEST(Facelift, ZeroDirectionsLeavePayoff) {
    auto s = quadratic_spec();
    s.directions = Matrix::Zero(1, 1);
    for (double x : {-1.0, 0.0, 2.5}) {
        const auto p = facelift(s, Vector::Constant(1, x));
        EXPECT_EQ(p.value, p.payoff);
    }
}

TEST(Facelift, QuadraticOracle) {
    const auto s = quadratic_spec();
    const auto a = facelift(s, Vector::Constant(1, 0.0));
    EXPECT_NEAR(a.value, 0.0, 1e-6);
    EXPECT_NEAR(a.argmax[0], 1.0, 1e-4);
    EXPECT_FALSE(a.unbounded);
    const auto b = facelift(s, Vector::Constant(1, 2.0));
    EXPECT_NEAR(b.value, -1.0, 1e-12);
    EXPECT_NEAR(b.argmax[0], 0.0, 1e-6);
    for (double z = -3.0; z <= 3.0; z += 0.37) EXPECT_NEAR(facelift(s, Vector::Constant(1, z)).value, ghat(z), 1e-6);
}

TEST(Facelift, IncreasingPayoffIsUnbounded) {
    FaceliftSpec s;
    s.payoff = [](const Vector& x) { return x[0]; };
    EXPECT_TRUE(facelift(s, Vector::Zero(1)).unbounded);
}

TEST(Facelift, LiquidationIsItsOwnFacelift) {
    const double lambda = 0.1;
    FaceliftSpec s;
    s.payoff = [lambda](const Vector& x) { return liquidation(x[0], x[1], lambda); };
    s.directions = transaction_directions(lambda).topLeftCorner(2, 2);
    for (double a = -2.0; a <= 2.0; a += 0.5)
        for (double b = -2.0; b <= 2.0; b += 0.5) {
            const auto p = facelift(s, Eigen::Vector2d(a, b));
            EXPECT_GE(p.value, p.payoff);
            EXPECT_LE(p.value - p.payoff, 1e-4);
        }
}

TEST(Facelift, DeltaInfiniteOffTheCone) {
    const auto s = quadratic_spec();
    EXPECT_EQ(s.delta_at(Vector::Constant(1, 1.0)), 0.0);
    EXPECT_EQ(s.delta_at(Vector::Constant(1, -1.0)), std::numeric_limits<double>::infinity());
}

TEST(Auxiliary, DominatesZeroControlAndApproachesOracle) {
    const auto s = quadratic_spec();
    auto b = small_bundle({1.0, 2.0, 4.0, 8.0, 16.0});
    const auto r = auxiliary_value_Y(toy1d(), s, 0.0, Vector::Zero(1), b);
    EXPECT_GE(r.values.front(), -2.0 - 1e-3);
    for (std::size_t i = 1; i < r.values.size(); ++i) EXPECT_GE(r.values[i], r.values[i - 1] - 1e-9);
    const double oracle = gaussian_expectation(ghat, 0.0, 1.0, {1.0}, 1e-13);
    EXPECT_NEAR(r.values.back(), oracle, 0.05);
    b.bound_ladder = {2.0, 1.0};
    EXPECT_THROW(auxiliary_value_Y(toy1d(), s, 0.0, Vector::Zero(1), b), PreconditionError);
}

TEST(Auxiliary, FaceliftedPayoffGivesIdenticalTables) {
    FaceliftSpec s;
    s.payoff = [](const Vector& x) { return ghat(x[0]); };
    const auto r = facelift_equivalence_test(toy1d(), s, 0.0, Vector::Zero(1), small_bundle({1.0, 2.0}));
    EXPECT_TRUE(r.tables_identical);
    for (double g : r.gaps) EXPECT_EQ(g, 0.0);
}

TEST(Auxiliary, EquivalenceGapShrinks) {
    const auto r = facelift_equivalence_test(toy1d(), quadratic_spec(), 0.0, Vector::Zero(1), small_bundle({1.0, 2.0, 4.0, 8.0}));
    EXPECT_TRUE(r.gap_shrinks);
    EXPECT_TRUE(r.within_tolerance) << r.gaps.back() << " vs " << r.interpolation_tol;
    EXPECT_NEAR(r.interpolation_tol, r.space_tol + r.time_tol + r.bound_tol, 1e-15);
}

TEST(Auxiliary, ShiftProperty) {
    const std::vector<Vector> iotas{Vector::Zero(1), Vector::Constant(1, 0.5), Vector::Constant(1, 1.0)};
    FaceliftSpec hat;
    hat.payoff = [](const Vector& x) { return ghat(x[0]); };
    const auto det = shift_property_test(constant_1d(0.0, 0.0, 1.0), hat, 0.0, Vector::Zero(1), iotas, 4.0,
                                         small_bundle({4.0}), 0.0);
    EXPECT_TRUE(det.holds);
    EXPECT_TRUE(det.equality_at_zero);
    const auto noisy = shift_property_test(toy1d(), quadratic_spec(), 0.0, Vector::Zero(1), iotas, 4.0,
                                           small_bundle({4.0}), 0.05);
    EXPECT_TRUE(noisy.holds);
    EXPECT_TRUE(noisy.equality_at_zero);
    FaceliftSpec bad = quadratic_spec();
    EXPECT_THROW(shift_property_test(toy1d(), bad, 0.0, Vector::Zero(1), {Vector::Constant(1, -1.0)}, 4.0,
                                     small_bundle({4.0}), 0.0),
                 PreconditionError);
}
