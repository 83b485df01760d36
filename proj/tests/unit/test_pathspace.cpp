#include "pathctrl/pathspace.hpp"
#include "pathctrl/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace pathctrl;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

Path linear(const TimeGrid& g, double slope) {
    std::vector<Vector> pts;
    for (std::size_t k = 0; k < g.n_nodes(); ++k) pts.push_back(v1(slope * g.node(k)));
    return Path(g, pts);
}

Path brownian(const TimeGrid& g, std::size_t d, std::uint64_t seed) {
    NormalStream ns(seed);
    std::vector<double> v(g.n_nodes() * d, 0.0), z(d);
    for (std::size_t k = 1; k < g.n_nodes(); ++k) {
        ns.fill(0, static_cast<std::uint32_t>(k), z.data(), d);
        for (std::size_t c = 0; c < d; ++c) v[k * d + c] = v[(k - 1) * d + c] + std::sqrt(g.dt()) * z[c];
    }
    return Path(g, d, v);
}

}  // namespace

TEST(TimeGrid, NodesAndLookup) {
    const TimeGrid g(0.0, 1.0, 4);
    EXPECT_EQ(g.n_nodes(), 5u);
    EXPECT_DOUBLE_EQ(g.dt(), 0.25);
    EXPECT_EQ(g.node(4), 1.0);
    EXPECT_EQ(g.index_of(0.5).value(), 2u);
    EXPECT_FALSE(g.index_of(0.3).has_value());
    EXPECT_THROW(TimeGrid(1.0, 0.0, 4), GridMismatchError);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 0), GridMismatchError);
}

TEST(Concat, ConstantsCancel) {
    const TimeGrid g(0.0, 1.0, 10);
    const auto x = concat(Path::constant(g, v1(2.0)), Path::constant(g, v1(-7.0)), 0.3);
    for (std::size_t k = 0; k < x.grid().n_nodes(); ++k) EXPECT_EQ(x.value(k)[0], 2.0);
}

TEST(Concat, ContinuousAtEnd) {
    const TimeGrid g(0.0, 1.0, 4);
    const auto x = linear(g, 1.0), y = linear(g, -3.0);
    EXPECT_EQ(concat(x, y, 1.0).at(1.0)[0], x.at(1.0)[0]);
}

TEST(Concat, LinearGlue) {
    const TimeGrid g(0.0, 1.0, 4);
    const auto out = concat(linear(g, 1.0), linear(g, 2.0), 0.5);
    EXPECT_NEAR(out.at(1.0)[0], 1.5, 1e-15);
    EXPECT_NEAR(out.at(0.5)[0], 0.5, 1e-15);
}

TEST(Concat, RejectsMisalignedGrids) {
    const auto x = Path::constant(TimeGrid(0.0, 1.0, 4), v1(0.0));
    const auto y = Path::constant(TimeGrid(0.0, 1.0, 5), v1(0.0));
    EXPECT_THROW(concat(x, y, 0.5), GridMismatchError);
    EXPECT_THROW(concat(x, x, 0.3), GridMismatchError);
}

TEST(SupNorm, Examples) {
    EXPECT_EQ(sup_norm(Path::constant(TimeGrid(0.0, 1.0, 8), Vector::Zero(2)), 1.0), 0.0);
    const Path p(TimeGrid(0.0, 1.0, 1), {Vector(Eigen::Vector2d(1.0, 0.0)), Vector(Eigen::Vector2d(0.0, -3.0))});
    EXPECT_EQ(sup_norm(p, 1.0), 3.0);
    EXPECT_EQ(sup_norm(p, 0.5), 1.0);
}

TEST(SupNorm, MatchesNodeScan) {
    const TimeGrid g(0.0, 2.0, 200);
    const auto p = brownian(g, 3, 11);
    for (std::size_t ks : {0u, 17u, 100u, 200u}) {
        double scan = 0.0;
        for (std::size_t k = 0; k <= ks; ++k) scan = std::max(scan, p.value(k).norm());
        EXPECT_EQ(sup_norm(p, g.node(ks)), scan);
    }
}

TEST(DInfinity, Examples) {
    const auto z = Path::constant(TimeGrid(0.0, 1.0, 100), Vector::Zero(1));
    EXPECT_EQ(d_infinity(0.3, z, 0.3, z), 0.0);
    EXPECT_NEAR(d_infinity(0.5, z, 0.54, z), 0.2, 1e-15);
}

TEST(DInfinity, MatchesNodeScan) {
    const TimeGrid g(0.0, 1.0, 100);
    const auto a = brownian(g, 2, 3), b = brownian(g, 2, 4);
    for (auto [k1, k2] : {std::pair<std::size_t, std::size_t>{30, 70}, {100, 100}, {55, 20}}) {
        double scan = 0.0;
        for (std::size_t k = 0; k <= 100; ++k)
            scan = std::max(scan, (a.value(std::min(k, k1)) - b.value(std::min(k, k2))).norm());
        scan += std::sqrt(std::abs(g.node(k2) - g.node(k1)));
        EXPECT_NEAR(d_infinity(g.node(k1), a, g.node(k2), b), scan, 1e-14);
    }
}

TEST(DInfinity, Symmetric) {
    const TimeGrid g(0.0, 1.0, 50);
    const auto a = brownian(g, 1, 5), b = brownian(g, 1, 6);
    EXPECT_DOUBLE_EQ(d_infinity(0.2, a, 0.8, b), d_infinity(0.8, b, 0.2, a));
}

TEST(Interpolate, Examples) {
    EXPECT_EQ(interpolate({v1(1.0), v1(4.0)}, TimeGrid(0.0, 1.0, 1)).at(0.5)[0], 2.5);
    const auto c = interpolate({v1(3.0), v1(3.0), v1(3.0)}, TimeGrid(0.0, 1.0, 2));
    for (double t : {0.0, 0.1, 0.5, 0.77, 1.0}) EXPECT_EQ(c.at(t)[0], 3.0);
    EXPECT_EQ(interpolate({v1(0.0), v1(1.0), v1(0.0)}, TimeGrid(0.0, 1.0, 2)).at(0.25)[0], 0.5);
    EXPECT_THROW(interpolate({v1(0.0)}, TimeGrid(0.0, 1.0, 2)), GridMismatchError);
}

TEST(PathCsv, RoundTrip) {
    const auto p = brownian(TimeGrid(0.0, 1.0, 20), 2, 9);
    std::stringstream ss;
    write_path_csv(ss, p);
    EXPECT_EQ(read_path_csv(ss), p);
}
