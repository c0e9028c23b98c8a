// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "support/random_markets.hpp"

using namespace fisher;
using namespace fisher::testing;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 20 nested markets, rho cycling through {-2, -0.5, 0.5, 0.9}, n and m in [2, 6].
std::vector<Market> nested_markets() {
    const double rhos[] = {-2.0, -0.5, 0.5, 0.9};
    std::vector<Market> out;
    for (std::uint64_t s = 1; s <= 20; ++s) out.push_back(random_nested(s, 2 + s % 5, 2 + (s * 3) % 5, rhos[s % 4]));
    return out;
}

std::vector<Market> leontief_markets() {
    std::vector<Market> out;
    for (std::uint64_t s = 1; s <= 10; ++s) out.push_back(random_leontief(s, 3 + s % 4, 2 + s % 4));
    return out;
}

std::vector<Market> ces_markets() {
    std::vector<Market> out;
    for (std::uint64_t s = 1; s <= 10; ++s) out.push_back(random_ces(s, 2 + s % 5, 2 + (s * 2) % 5, s % 2 ? 0.5 : -0.5));
    return out;
}

std::vector<Market> resource_markets() {
    std::vector<Market> out;
    for (std::uint64_t s = 1; s <= 5; ++s) out.push_back(random_resource_allocation(s, 3, 4, 2 + s % 2));
    return out;
}

std::vector<Market> cobb_douglas_markets() {
    std::vector<Market> out;
    for (std::uint64_t s = 1; s <= 10; ++s) out.push_back(random_cobb_douglas(s, 1 + s % 4, 2 + s % 5));
    return out;
}

// Five price points per market, drawn from a fixed stream.
std::vector<PriceVector> price_points(const Market& mk, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PriceVector> ps;
    for (int k = 0; k < 5; ++k) ps.push_back(random_prices(rng, mk.m()));
    return ps;
}

Outcome gradient_identity() {
    double worst = 0;
    auto markets = nested_markets();
    for (std::size_t i = 0; i < markets.size(); ++i)
        for (const auto& p : price_points(markets[i], 100 + i)) {
            const Market& mk = markets[i];
            Vector fd = finite_difference_gradient([&](const PriceVector& q) { return phi(mk, q); }, p, 1e-6);
            Vector g = grad_phi(mk, p);
            worst = std::max(worst, (fd - g).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff());
        }
    return {worst <= 1e-4, fmt("max relative error %.3e over 100 points (limit 1e-4)", worst)};
}

Outcome hessian_correctness() {
    double worst = 0;
    auto markets = nested_markets();
    for (std::size_t i = 0; i < markets.size(); ++i)
        for (const auto& p : price_points(markets[i], 100 + i)) {
            const Market& mk = markets[i];
            Matrix fd = finite_difference_jacobian([&](const PriceVector& q) { return grad_phi(mk, q); }, p, 1e-6);
            Matrix H = hessian_phi(mk, p);
            // structural zeros have no scale of their own; measure them against the largest entry
            const double floor = 1e-6 * H.cwiseAbs().maxCoeff();
            for (Eigen::Index j = 0; j < H.rows(); ++j)
                for (Eigen::Index l = 0; l < H.cols(); ++l)
                    worst = std::max(worst, std::abs(fd(j, l) - H(j, l)) / std::max(std::abs(H(j, l)), floor));
        }
    return {worst <= 1e-3, fmt("max entrywise relative error %.3e (limit 1e-3)", worst)};
}

Outcome dual_cross_check() {
    double worst = 0;
    auto markets = nested_markets();
    for (std::size_t i = 0; i < markets.size(); ++i)
        for (const auto& p : price_points(markets[i], 100 + i))
            worst = std::max(worst, std::abs(phi_closed_form(markets[i], p) - phi(markets[i], p)));
    return {worst <= 1e-9, fmt("max |closed form - maximizer route| %.3e (limit 1e-9)", worst)};
}

Outcome simplex_invariance() {
    std::vector<std::pair<Market, std::optional<double>>> cases{
        {random_nested(3, 4, 5, 0.9), std::nullopt},
        {random_nested(4, 5, 3, -2.0), 0.3},
        {random_ces(5, 4, 4, 0.5), 0.45},
        {random_leontief(6, 5, 4), std::nullopt},
        {random_cobb_douglas(7, 3, 6), 0.9},
    };
    double worst = 0;
    std::size_t rounds = 0;
    for (auto& [mk, eps] : cases) {
        RunConfig cfg;
        cfg.epsilon = eps;
        cfg.delta = 1e-300;
        cfg.max_iters = 100000;
        cfg.divergence_window = cfg.max_iters + 1;
        auto out = run(mk, cfg);
        rounds += out.trace.size();
        for (std::size_t t = 0; t < out.trace.size(); ++t) worst = std::max(worst, std::abs(out.trace.prices(t).sum() - 1));
    }
    return {worst <= 1e-10, fmt("max |sum p - 1| %.3e over %zu rounds on 5 markets (limit 1e-10)", worst, rounds)};
}

Outcome cobb_douglas_one_step() {
    double worst = 0;
    for (const Market& mk : cobb_douglas_markets()) {
        PriceVector want = Vector::Zero(static_cast<Eigen::Index>(mk.m()));
        for (const auto& ag : mk.agents)
            for (const auto& o : ag.utility.objects) want[static_cast<Eigen::Index>(o.a[0].good)] += ag.budget * o.c;
        RunConfig cfg;
        cfg.epsilon = 1.0;
        cfg.delta = 1e-300;
        cfg.max_iters = 1;
        auto out = run(mk, cfg);
        worst = std::max(worst, (out.trace.prices(1) - want).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-12, fmt("max |p1 - p*| %.3e on 10 markets (limit 1e-12)", worst)};
}

struct ConvergenceRun {
    const Market* market;
    std::string label;
    RunOutput out;
    EquilibriumReport ref;
};

std::vector<ConvergenceRun> convergence_runs(const std::vector<Market>& nested, const std::vector<Market>& leontief) {
    std::vector<ConvergenceRun> runs;
    auto add = [&](const Market& mk, std::string label) {
        RunConfig cfg;
        cfg.delta = 1e-2;
        cfg.max_iters = 1000000;
        runs.push_back({&mk, std::move(label), run(mk, cfg), solve_equilibrium(mk)});
    };
    for (std::size_t i = 0; i < nested.size(); ++i) add(nested[i], "nested #" + std::to_string(i + 1));
    for (std::size_t i = 0; i < leontief.size(); ++i) add(leontief[i], "leontief #" + std::to_string(i + 1));
    return runs;
}

Outcome dual_monotonicity(const std::vector<ConvergenceRun>& runs) {
    std::size_t violations = 0, rounds = 0, markets = 0;
    std::string first;
    for (const auto& r : runs) {
        if (r.label.rfind("nested", 0) != 0) continue;
        ++markets;
        rounds += r.out.trace.size();
        auto inv = assert_invariants(r.out.trace, *r.market, true, 1e-12);
        violations += inv.monotonicity.violations;
        if (inv.monotonicity.violations && first.empty()) first = r.label;
    }
    return {violations == 0 && markets == 20,
            fmt("%zu violations beyond 1e-12 over %zu rounds on %zu nested markets%s", violations, rounds, markets,
                first.empty() ? "" : (", first in " + first).c_str())};
}

Outcome ces_geometric_decay() {
    double worst_r = 0, worst_rel = 0;
    for (const Market& mk : ces_markets()) {
        auto ref = solve_equilibrium(mk, {.tol = 1e-12});
        RunConfig cfg;
        cfg.delta = 1e-12;
        cfg.max_iters = 1000000;
        auto out = run(mk, cfg);
        auto fit = fit_rate(out.trace.phi_data, ref.dual_value, 0, std::numeric_limits<std::size_t>::max(), 1e-11);
        worst_r = std::max(worst_r, fit.ratio);
        worst_rel = std::max(worst_rel, fit.residual / fit.log_range);
    }
    return {worst_r <= 0.9999 && worst_rel <= 0.05,
            fmt("max fitted r %.5f (limit 0.9999), max RMS residual / range %.4f (limit 0.05) on 10 markets", worst_r,
                worst_rel)};
}

Outcome approximate_equilibrium(const std::vector<ConvergenceRun>& runs) {
    std::size_t failures = 0;
    double worst_dist = 0;
    std::size_t max_rounds = 0;
    std::string first;
    for (const auto& r : runs) {
        const auto& res = r.out.result;
        max_rounds = std::max(max_rounds, res.rounds);
        const double dist = (res.p_final - r.ref.p_star).cwiseAbs().maxCoeff();
        worst_dist = std::max(worst_dist, dist);
        const bool ok = res.converged && check_def1(*r.market, res.p_final, res.allocation, 1e-2).overall() && dist <= 5e-2;
        if (!ok) {
            ++failures;
            if (first.empty()) first = r.label;
        }
    }
    return {failures == 0 && runs.size() == 30, fmt("%zu/%zu runs reach Def-1 at 1e-2 (max rounds %zu), max |pT - p*| %.3e (limit 5e-2)%s",
                               runs.size() - failures, runs.size(), max_rounds, worst_dist,
                               first.empty() ? "" : (", first failure " + first).c_str())};
}

Outcome mwu_bound(const std::vector<ConvergenceRun>& runs) {
    double min_slack = std::numeric_limits<double>::infinity();
    std::size_t failures = 0, inapplicable = 0;
    for (const auto& r : runs) {
        auto cert = mwu_certificate(r.out.trace);
        min_slack = std::min(min_slack, cert.min_slack);
        if (!cert.holds) ++failures;
        if (!cert.applicable) ++inapplicable;
    }
    return {failures == 0 && runs.size() == 30, fmt("holds on %zu/%zu runs, min slack %.3e (limit -1e-9), step condition eps <= 1/(2w) met on %zu",
                               runs.size() - failures, runs.size(), min_slack, runs.size() - inapplicable)};
}

Outcome resource_allocation() {
    const double delta = 0.1;
    std::size_t passes = 0;
    std::string ks;
    for (const Market& ra : resource_markets()) {
        ks += std::to_string(max_objects_per_agent(ra));
        Market d = distort(ra, delta);
        RunConfig cfg;
        cfg.delta = delta / 2;
        auto out = run(d, cfg);
        Allocation x;
        for (const auto& b : out.result.allocation) x.push_back(scaled(b, 1 / (1 + delta / 2)));
        if (out.result.converged && check_def2(ra, out.result.p_final, x, delta).overall()) ++passes;
    }
    return {passes == 5, fmt("Def-2 at 0.1 passes on %zu/5 markets (k per market: %s)", passes, ks.c_str())};
}

Outcome oracle_sanity() {
    std::vector<Market> all = nested_markets();
    for (auto* set : {&leontief_markets, &ces_markets, &cobb_douglas_markets}) {
        auto more = (*set)();
        all.insert(all.end(), more.begin(), more.end());
    }
    for (const Market& ra : resource_markets()) all.push_back(distort(ra, 0.1));

    // Goods priced at zero may stay oversupplied, so |z| itself is only required
    // where p* is interior; elsewhere the complementarity residual is used.
    double worst_resid = 0, worst_interior = 0;
    std::size_t interior = 0;
    for (const Market& mk : all) {
        auto rep = solve_equilibrium(mk);
        const Vector z = excess_demand(mk, rep.p_star).z;
        worst_resid = std::max(worst_resid, equilibrium_residual(rep.p_star, z));
        if (rep.p_star.minCoeff() >= 1e-6) {
            ++interior;
            worst_interior = std::max(worst_interior, z.cwiseAbs().maxCoeff());
        }
    }

    Rng rng(2024);
    std::exponential_distribution<double> expo(1.0);
    double worst_gap = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 1000; ++k) {
        const Market& mk = all[static_cast<std::size_t>(k) % all.size()];
        Allocation x;
        Vector agg = Vector::Zero(static_cast<Eigen::Index>(mk.m()));
        for (const auto& ag : mk.agents) {
            Bundle b{Vector::Zero(static_cast<Eigen::Index>(mk.m())), {}};
            for (const auto& o : ag.utility.objects) {
                const double level = 0.01 + expo(rng.engine());
                b.levels.push_back(level);
                for (const auto& t : o.a) b.x[static_cast<Eigen::Index>(t.good)] += t.coef * level;
            }
            agg += b.x;
            x.push_back(std::move(b));
        }
        const double s = rng.uniform(0.05, 1.0) / agg.maxCoeff();
        for (auto& b : x) b = scaled(b, s);
        PriceVector p = random_prices(rng, mk.m(), 1e-3);
        worst_gap = std::max(worst_gap, psi(mk, x) - phi(mk, p));
    }
    return {worst_resid <= 1e-7 && worst_interior <= 1e-7 && worst_gap <= 1e-9,
            fmt("max oracle residual %.3e on %zu markets, max |z(p*)| %.3e on the %zu with interior p* (limit 1e-7); "
                "max psi(x) - phi(p) %.3e on 1000 pairs (limit 1e-9)",
                worst_resid, all.size(), worst_interior, interior, worst_gap)};
}

}  // namespace

int main() {
    const auto start = std::chrono::steady_clock::now();
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %-32s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    };

    report(1, "gradient identity", gradient_identity);
    report(2, "hessian correctness", hessian_correctness);
    report(3, "dual cross-check", dual_cross_check);
    report(4, "simplex invariance", simplex_invariance);
    report(5, "cobb-douglas one step", cobb_douglas_one_step);

    const auto nested = nested_markets();
    const auto leontief = leontief_markets();
    std::vector<ConvergenceRun> runs;
    try {
        runs = convergence_runs(nested, leontief);
    } catch (const std::exception& e) {
        std::printf("convergence runs aborted: %s\n", e.what());
    }
    report(6, "dual monotonicity", [&] { return dual_monotonicity(runs); });
    report(7, "ces geometric decay", ces_geometric_decay);
    report(8, "approximate equilibrium", [&] { return approximate_equilibrium(runs); });
    report(9, "mwu prefix bound", [&] { return mwu_bound(runs); });
    report(10, "resource allocation", resource_allocation);
    report(11, "oracle sanity", oracle_sanity);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%d/11 criteria passed in %.1fs\n", 11 - failed, secs);
    return failed == 0 ? 0 : 1;
}
