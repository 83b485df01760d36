#pragma once

#include "pathctrl/core.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace pathctrl {

/// Nodes and weights of E[φ(ξ)], ξ ~ N(0,1): Σ w_i φ(ξ_i), Σ w_i = 1.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials (off-diagonal √k). Exact for polynomials of degree < 2n.
inline GaussHermite gauss_hermite(int n) {
    if (n < 1) throw PreconditionError("gauss_hermite: need at least one node");
    Matrix J = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    GaussHermite gh;
    gh.nodes.resize(static_cast<std::size_t>(n));
    gh.weights.resize(static_cast<std::size_t>(n));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        gh.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
        const double v = es.eigenvectors()(0, i);
        gh.weights[static_cast<std::size_t>(i)] = v * v;
        total += v * v;
    }
    for (auto& w : gh.weights) w /= total;
    // Exact symmetry keeps odd moments at zero to the last bit.
    for (int i = 0; i < n / 2; ++i) {
        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(n - 1 - i);
        const double x = 0.5 * (gh.nodes[b] - gh.nodes[a]);
        gh.nodes[a] = -x;
        gh.nodes[b] = x;
        const double w = 0.5 * (gh.weights[a] + gh.weights[b]);
        gh.weights[a] = gh.weights[b] = w;
    }
    if (n % 2 == 1) gh.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    return gh;
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// E[g(m + s ξ)], ξ ~ N(0,1), by adaptive Gauss–Kronrod on the real line.
/// `kinks` are points where g is not smooth; the line is split there.
inline double gaussian_expectation(const std::function<double(double)>& g, double m = 0.0, double s = 1.0,
                                   std::vector<double> kinks = {}, double tol = 1e-12) {
    using boost::math::quadrature::gauss_kronrod;
    if (s == 0.0) return g(m);
    auto integrand = [&](double z) { return g(m + s * z) * normal_pdf(z); };
    std::vector<double> cuts;
    for (double k : kinks) cuts.push_back((k - m) / s);
    std::sort(cuts.begin(), cuts.end());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> edges{-inf};
    edges.insert(edges.end(), cuts.begin(), cuts.end());
    edges.push_back(inf);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        if (edges[i] == edges[i + 1]) continue;
        total += gauss_kronrod<double, 61>::integrate(integrand, edges[i], edges[i + 1], 15, tol);
    }
    return total;
}

}  // namespace pathctrl
