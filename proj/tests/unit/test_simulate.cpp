#include "pathctrl/parallel.hpp"
#include "pathctrl/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace pathctrl;

namespace {

SimulationPlan plan(std::size_t n_paths, std::size_t steps, std::uint64_t seed = 7) {
    SimulationPlan p;
    p.grid = TimeGrid(0.0, 1.0, steps);
    p.n_paths = n_paths;
    p.seed = seed;
    p.x0 = Vector::Zero(1);
    return p;
}

std::vector<double> terminal(const Ensemble& e) {
    std::vector<double> out;
    for (std::size_t j = 0; j < e.n_paths; ++j) out.push_back(e.value(j, e.grid.n_steps())[0]);
    return out;
}

}  // namespace

TEST(Simulate, ZeroCoefficientsGiveConstantPaths) {
    auto p = plan(16, 20);
    p.x0 = Vector::Constant(1, 2.5);
    const auto e = simulate_forward(constant_1d(0.0, 0.0, 1.0), p);
    for (std::size_t j = 0; j < e.n_paths; ++j)
        for (std::size_t k = 0; k < e.n_nodes(); ++k) EXPECT_EQ(e.value(j, k)[0], 2.5);
}

TEST(Simulate, ConstantControlIsExactWithoutNoise) {
    auto p = plan(4, 64);
    p.control = ControlSpec::constant(Vector::Constant(1, 0.75));
    const auto e = simulate_forward(constant_1d(0.0, 0.0, 1.0), p);
    EXPECT_NEAR(e.value(0, 64)[0], 0.75, 1e-14);
    EXPECT_NEAR(e.value(0, 32)[0], 0.375, 1e-14);
}

TEST(Simulate, TerminalVarianceIsSpan) {
    const auto e = simulate_forward(toy1d(), plan(20000, 50));
    const auto x = terminal(e);
    const auto ms = mean_se(x);
    EXPECT_LE(std::abs(ms.mean), 3.0 * ms.se);
    const double var = ms.sd * ms.sd;
    EXPECT_LE(std::abs(var - 1.0), 3.0 * std::sqrt(2.0 / 20000.0));
}

TEST(Simulate, PrefixReplacesStart) {
    auto p = plan(3, 10);
    p.grid = TimeGrid(0.5, 1.0, 5);
    p.initial_segment = Path::constant(TimeGrid(0.0, 0.5, 5), Vector::Constant(1, 4.0));
    const auto e = simulate_forward(constant_1d(0.0, 0.0, 1.0), p);
    EXPECT_EQ(e.value(2, 5)[0], 4.0);
    EXPECT_EQ(e.history(0, 2).size(), 8u);
}

TEST(Simulate, ControlBoundViolationThrows) {
    auto p = plan(2, 4);
    p.control = ControlSpec::feedback([](double, const PathHistory&) { return Vector::Constant(1, 3.0); }, 1.0, 1);
    EXPECT_THROW(simulate_forward(toy1d(), p), PreconditionError);
}

TEST(LogWeights, ZeroUnderZeroControl) {
    const auto w = girsanov_weights(toy1d(), plan(100, 20), ControlSpec::none(1));
    for (double v : w) EXPECT_EQ(v, 0.0);
}

TEST(LogWeights, ClosedFormForConstantTheta) {
    const double c = 0.6;
    const auto p = plan(50, 25);
    const auto w = girsanov_weights(toy1d(), p, ControlSpec::constant(Vector::Constant(1, c)));
    const auto e = simulate_forward(toy1d(), p);
    for (std::size_t j = 0; j < p.n_paths; ++j) {
        const double bT = e.value(j, 25)[0];
        EXPECT_NEAR(w[j], c * bT - 0.5 * c * c, 1e-12);
    }
}

TEST(WeakStrong, IdenticalUnderZeroControl) {
    const auto U = markov_terminal([](const Vector& x) { return std::sin(x[0]); });
    const auto r = weak_strong_agreement(toy1d(), U, ControlSpec::none(1), plan(500, 20));
    EXPECT_EQ(r.strong_estimate, r.weak_estimate);
    EXPECT_EQ(r.z, 0.0);
}

TEST(WeakStrong, LinearPayoffUnderUnitPush) {
    const auto U = markov_terminal([](const Vector& x) { return x[0]; });
    auto p = plan(40000, 20);
    p.x0 = Vector::Constant(1, 0.3);
    const auto r = weak_strong_agreement(toy1d(), U, ControlSpec::constant(Vector::Constant(1, 1.0)), p);
    EXPECT_LE(std::abs(r.strong_estimate - 1.3), 4.0 * r.strong_se);
    EXPECT_LE(std::abs(r.weak_estimate - 1.3), 4.0 * r.weak_se);
    EXPECT_LT(std::abs(r.z), 3.0);
}

TEST(Simulate, Deterministic) {
    const auto a = simulate_forward(toy1d(), plan(300, 30, 42));
    const auto b = simulate_forward(toy1d(), plan(300, 30, 42));
    const auto c = simulate_forward(toy1d(), plan(300, 30, 43));
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, c.values);
}

TEST(Simulate, PathPrefixIndependentOfCount) {
    const auto a = simulate_forward(toy1d(), plan(100, 30));
    const auto b = simulate_forward(toy1d(), plan(5000, 30));
    for (std::size_t j = 0; j < 100; ++j) EXPECT_EQ(a.path(j), b.path(j));
}

TEST(Simulate, ThreadCountInvariant) {
    const std::size_t saved = thread_count();
    set_thread_count(1);
    const auto a = simulate_forward(toy1d(), plan(5000, 20));
    set_thread_count(4);
    const auto b = simulate_forward(toy1d(), plan(5000, 20));
    set_thread_count(saved);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.log_weights, b.log_weights);
}

TEST(Simulate, BinaryRoundTrip) {
    auto p = plan(20, 10);
    p.control = ControlSpec::constant(Vector::Constant(1, 0.5));
    const auto e = simulate_forward(toy1d(), p);
    std::stringstream ss;
    write_ensemble_binary(ss, e);
    const auto r = read_ensemble_binary(ss);
    EXPECT_EQ(r.values, e.values);
    EXPECT_EQ(r.log_weights, e.log_weights);
    EXPECT_EQ(r.grid, e.grid);
    std::stringstream bad("XXXXX");
    EXPECT_THROW(read_ensemble_binary(bad), Error);
}

TEST(Moments, IdenticalEnsemblesHaveZeroDelta) {
    const auto e = simulate_forward(toy1d(), plan(200, 20));
    const auto l = moment_delta(e, e, 2);
    EXPECT_EQ(l.lhs, 0.0);
    EXPECT_EQ(l.implied_C, 0.0);
}

TEST(Moments, StartShiftScales) {
    auto p = plan(200, 20);
    const auto a = simulate_forward(toy1d(), p);
    p.x0 = Vector::Constant(1, 0.5);
    const auto b = simulate_forward(toy1d(), p);
    const auto l2 = moment_delta(a, b, 2), l4 = moment_delta(a, b, 4);
    EXPECT_NEAR(l2.lhs, 0.25, 1e-12);
    EXPECT_NEAR(l4.lhs, 0.0625, 1e-12);
    EXPECT_NEAR(l2.implied_C, 1.0, 1e-12);
}

TEST(Moments, DiagnosticsWithinDeclaredConstants) {
    const auto e = simulate_forward(toy1d(), plan(5000, 50));
    const auto rep = moment_diagnostics(e, toy1d());
    ASSERT_EQ(rep.initial.size(), 2u);
    EXPECT_FALSE(rep.any_violation);
    for (const auto& l : rep.initial) EXPECT_GT(l.lhs, 0.0);
}
