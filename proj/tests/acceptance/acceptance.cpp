#include "pathctrl/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

using namespace pathctrl;

namespace {

struct Criterion {
    int id;
    std::string title;
    Json overrides;
};

constexpr double kFrozenOracle = -0.07533978334377075;

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "representation: LSMC Y0 against grid DP on the benchmark",
         {{"experiment", "grid_dp"}, {"paths", 100000}, {"threads", 4}}},
        {2, "monotone penalization and facelift limit",
         {{"experiment", "penalty_ladder"}, {"paths", 100000}, {"threads", 4}}},
        {3, "strong/weak equivalence under a bounded feedback control",
         {{"experiment", "weak_strong"}, {"paths", 100000}, {"threads", 4}}},
        {4, "convex order of the perturbed chains",
         {{"experiment", "convex_order"}, {"paths", 100000}, {"threads", 4}}},
        {5, "degenerate ladder over p",
         {{"experiment", "degenerate_ladder"}, {"paths", 20000}, {"threads", 4}}},
        {6, "transaction-model algebra", {{"experiment", "transaction_demo"}, {"threads", 4}}},
        {7, "facelift suite", {{"experiment", "facelift"}, {"threads", 4}}},
        {8, "regularity in time and space", {{"experiment", "regularity"}, {"threads", 4}}},
        {9, "unit exactness of the primitives", {{"experiment", "simulate"}, {"threads", 4}}},
        {10, "DPP residual at the midpoint",
         {{"experiment", "dpp_residual"}, {"bound_ladder", {1, 4, 16}}, {"threads", 4}}},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        std::string detail;
        try {
            const auto cfg = load_config(Json::object(), c.overrides);
            auto r = run_experiment(cfg);
            if (c.id == 2) {
                const double limit = detail::benchmark_limit(detail::benchmark(cfg));
                r.check("frozen_oracle", std::abs(limit - kFrozenOracle) <= 1e-8,
                        "quadrature " + detail::fmt(limit) + " frozen " + detail::fmt(kFrozenOracle));
            }
            ok = r.passed();
            for (const auto& a : r.assertions)
                if (!a.passed) detail += (detail.empty() ? "" : "; ") + a.name + ": " + a.detail;
            if (ok) detail = std::to_string(r.assertions.size()) + " checks";
        } catch (const std::exception& e) {
            detail = std::string("error: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %d: %s (%s, %.1f s)\n", ok ? "PASS" : "FAIL", c.id, c.title.c_str(), detail.c_str(), secs);
        std::fflush(stdout);
        failed += ok ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
