#pragma once

// Approximate-equilibrium checks, trace invariants, the multiplicative-weights
// prefix bound, and convergence-rate fitting.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tatonnement.hpp"

namespace fisher {

struct ApproxEquilibriumReport {
    int definition = 1;
    double delta = 0.0;
    bool p1_pass = true;
    bool p2_pass = true;
    bool p3_pass = true;
    std::vector<std::size_t> p1_witnesses;  // agents
    std::vector<std::size_t> p2_witnesses;  // goods
    std::vector<std::size_t> p3_witnesses;  // goods
    bool overall() const { return p1_pass && p2_pass && p3_pass; }
};

/// P2 (z_j <= bound) and P3 (z_j < -delta => p_j <= delta) from an excess vector.
inline void check_excess_conditions(ApproxEquilibriumReport& rep, const PriceVector& p, const Vector& z,
                                    double p2_bound) {
    if (p.size() != z.size()) throw std::invalid_argument("dimension mismatch between prices and excess");
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        if (z[j] > p2_bound) rep.p2_witnesses.push_back(static_cast<std::size_t>(j));
        if (z[j] < -rep.delta && p[j] > rep.delta) rep.p3_witnesses.push_back(static_cast<std::size_t>(j));
    }
    rep.p2_pass = rep.p2_witnesses.empty();
    rep.p3_pass = rep.p3_witnesses.empty();
}

inline void check_allocation_shape(const Market& mk, const PriceVector& p, const Allocation& x) {
    if (static_cast<std::size_t>(p.size()) != mk.m()) throw std::invalid_argument("price vector has the wrong length");
    if (x.size() != mk.n()) throw std::invalid_argument("allocation has the wrong number of agents");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (static_cast<std::size_t>(x[i].x.size()) != mk.m() || x[i].levels.size() != mk.agents[i].utility.object_count())
            throw std::invalid_argument("allocation of agent " + std::to_string(i) + " has the wrong shape");
}

/// Optimal demands, excess at most delta, cheap under-demanded goods.
inline ApproxEquilibriumReport check_def1(const Market& mk, const PriceVector& p, const Allocation& x, double delta) {
    check_allocation_shape(mk, p, x);
    ApproxEquilibriumReport rep;
    rep.definition = 1;
    rep.delta = delta;
    auto r = respond(mk, p);
    for (std::size_t i = 0; i < mk.n(); ++i)
        if ((x[i].x - r.bundles[i].x).cwiseAbs().maxCoeff() > 1e-10) rep.p1_witnesses.push_back(i);
    rep.p1_pass = rep.p1_witnesses.empty();
    check_excess_conditions(rep, p, r.excess, delta);
    return rep;
}

/// Near-optimal utilities, supply respected, cheap under-demanded goods.
/// Excess is taken from the allocation itself, so resource-allocation markets
/// (whose demand is not unique) can be checked directly.
inline ApproxEquilibriumReport check_def2(const Market& mk, const PriceVector& p, const Allocation& x, double delta) {
    check_allocation_shape(mk, p, x);
    ApproxEquilibriumReport rep;
    rep.definition = 2;
    rep.delta = delta;
    Vector agg = Vector::Zero(p.size());
    for (std::size_t i = 0; i < mk.n(); ++i) {
        const auto& ag = mk.agents[i];
        agg += x[i].x;
        const double best = optimal_log_utility(ag, p);
        if (!std::isfinite(best)) throw DomainError("agent " + std::to_string(i) + " has zero optimal utility");
        const double got = log_utility(ag, x[i].levels);
        if (!(got >= std::log1p(-delta) + best)) rep.p1_witnesses.push_back(i);
    }
    rep.p1_pass = rep.p1_witnesses.empty();
    check_excess_conditions(rep, p, agg.array() - 1.0, 1e-12);
    return rep;
}

struct InvariantClass {
    std::string name;
    std::size_t violations = 0;
    std::optional<std::size_t> first_round;
    double worst = 0.0;

    void flag(std::size_t t, double amount) {
        if (!first_round) first_round = t;
        ++violations;
        worst = std::max(worst, amount);
    }
};

struct InvariantReport {
    InvariantClass simplex{"simplex"};
    InvariantClass positivity{"positivity"};
    InvariantClass budget_balance{"budget_balance"};
    InvariantClass monotonicity{"phi_monotonicity"};
    InvariantClass step_consistency{"step_consistency"};
    bool monotonicity_expected = true;

    std::vector<const InvariantClass*> classes() const {
        return {&simplex, &positivity, &budget_balance, &monotonicity, &step_consistency};
    }
    /// Monotonicity violations only count when monotonicity was expected.
    bool ok() const {
        return simplex.violations == 0 && positivity.violations == 0 && budget_balance.violations == 0 &&
               step_consistency.violations == 0 && (!monotonicity_expected || monotonicity.violations == 0);
    }
};

inline InvariantReport assert_invariants(const Trace& tr, const Market& mk, bool monotonicity_expected = true,
                                         double monotone_slack = 1e-12) {
    InvariantReport rep;
    rep.monotonicity_expected = monotonicity_expected;
    const double total = mk.total_budget();
    for (std::size_t t = 0; t < tr.size(); ++t) {
        const auto p = tr.prices(t);
        const auto z = tr.excess(t);
        const double drift = std::abs(p.sum() - total);
        if (drift > 1e-10) rep.simplex.flag(t, drift);
        if ((p.array() <= 0).any() || !p.allFinite()) rep.positivity.flag(t, p.minCoeff());
        const double bal = std::abs(p.dot(z));
        if (bal > 1e-10) rep.budget_balance.flag(t, bal);
        if (t + 1 < tr.size()) {
            const double rise = tr.phi(t + 1) - tr.phi(t);
            if (rise > monotone_slack) rep.monotonicity.flag(t + 1, rise);
            const PriceVector expect = p.array() * (1.0 + tr.epsilon * z.array());
            const double dev = ((tr.prices(t + 1) - expect).array().abs() / expect.array().abs().max(1e-300)).maxCoeff();
            if (dev > 1e-14) rep.step_consistency.flag(t + 1, dev);
        }
    }
    return rep;
}

struct MWUCertificate {
    double epsilon = 0.0;
    double w = 0.0;  // max_{j,t} |z_j(p^t)|
    bool applicable = false;  // epsilon <= 1/(2w)
    std::vector<std::size_t> prefixes;
    Vector average_excess;  // at the full horizon
    Vector bound;           // eps v + ln(1/p0_j)/(eps T) at the full horizon
    double min_slack = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> worst_prefix;
    std::optional<std::size_t> worst_good;
    bool holds = true;  // slack >= -1e-9 at every sampled prefix and good
};

/// Checks (1/T) sum_{t<T} z_j(p^t) <= eps v_T + ln(1/p^0_j)/(eps T) for every
/// good at prefix lengths T = 1, 2, 4, ... and the full trace length.
inline MWUCertificate mwu_certificate(const Trace& tr) {
    if (tr.empty()) throw std::invalid_argument("mwu_certificate: empty trace");
    MWUCertificate cert;
    const auto m = static_cast<Eigen::Index>(tr.m);
    cert.epsilon = tr.epsilon;
    for (std::size_t t = 0; t < tr.size(); ++t) cert.w = std::max(cert.w, tr.excess(t).cwiseAbs().maxCoeff());
    cert.applicable = cert.epsilon * 2.0 * cert.w <= 1.0;

    for (std::size_t T = 1; T < tr.size(); T *= 2) cert.prefixes.push_back(T);
    if (cert.prefixes.empty() || cert.prefixes.back() != tr.size()) cert.prefixes.push_back(tr.size());

    const Vector p0 = tr.prices(0);
    Vector sum = Vector::Zero(m), sq = Vector::Zero(m);
    std::size_t next = 0;
    for (std::size_t t = 0; t < tr.size() && next < cert.prefixes.size(); ++t) {
        const auto z = tr.excess(t);
        sum += z;
        sq += z.cwiseProduct(z);
        if (t + 1 != cert.prefixes[next]) continue;
        const double T = static_cast<double>(t + 1);
        const double v = sq.maxCoeff() / T;
        Vector avg = sum / T;
        Vector bound = (cert.epsilon * v + (1.0 / p0.array()).log() / (cert.epsilon * T)).matrix();
        for (Eigen::Index j = 0; j < m; ++j) {
            const double slack = bound[j] - avg[j];
            if (slack < cert.min_slack) {
                cert.min_slack = slack;
                cert.worst_prefix = t + 1;
                cert.worst_good = static_cast<std::size_t>(j);
            }
        }
        cert.average_excess = avg;
        cert.bound = bound;
        ++next;
    }
    cert.holds = cert.min_slack >= -1e-9;
    return cert;
}

struct RateFit {
    std::size_t first = 0;
    std::size_t last = 0;
    std::size_t points = 0;
    double ratio = 1.0;      // per-round contraction r = e^slope
    double residual = 0.0;   // RMS residual of the log-linear fit
    double log_range = 0.0;  // max - min of ln gap over the fitted points
    bool contracting = false;
};

/// Least-squares fit of ln(phi_t - phi*) against t over [first, last], using
/// only rounds whose gap exceeds gap_floor.
inline RateFit fit_rate(std::span<const double> phis, double phi_star, std::size_t first = 0,
                        std::size_t last = std::numeric_limits<std::size_t>::max(), double gap_floor = 1e-13) {
    RateFit fit;
    if (phis.empty()) throw std::invalid_argument("fit_rate: empty series");
    last = std::min(last, phis.size() - 1);
    std::vector<double> ts, ys;
    for (std::size_t t = first; t <= last; ++t) {
        const double gap = phis[t] - phi_star;
        if (gap > gap_floor) {
            ts.push_back(static_cast<double>(t));
            ys.push_back(std::log(gap));
        }
    }
    if (ts.size() < 2) throw std::invalid_argument("fit_rate: dual gap is below the floor on the whole window");
    const double k = static_cast<double>(ts.size());
    double mt = 0, my = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i];
        my += ys[i];
    }
    mt /= k;
    my /= k;
    double stt = 0, sty = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        stt += (ts[i] - mt) * (ts[i] - mt);
        sty += (ts[i] - mt) * (ys[i] - my);
    }
    const double slope = sty / stt;
    double ss = 0, ymin = ys.front(), ymax = ys.front();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double e = ys[i] - (my + slope * (ts[i] - mt));
        ss += e * e;
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    fit.first = static_cast<std::size_t>(ts.front());
    fit.last = static_cast<std::size_t>(ts.back());
    fit.points = ts.size();
    fit.ratio = std::exp(slope);
    fit.residual = std::sqrt(ss / k);
    fit.log_range = ymax - ymin;
    fit.contracting = fit.ratio < 1.0;
    return fit;
}

// JSON views ---------------------------------------------------------------

inline json to_json(const ApproxEquilibriumReport& r) {
    return {{"definition", r.definition}, {"delta", r.delta},     {"overall", r.overall()},
            {"p1_pass", r.p1_pass},       {"p2_pass", r.p2_pass}, {"p3_pass", r.p3_pass},
            {"p1_violating_agents", r.p1_witnesses},
            {"p2_violating_goods", r.p2_witnesses},
            {"p3_violating_goods", r.p3_witnesses}};
}

inline json to_json(const InvariantReport& r) {
    json j;
    j["ok"] = r.ok();
    j["monotonicity_expected"] = r.monotonicity_expected;
    for (const auto* c : r.classes()) {
        json jc = {{"violations", c->violations}, {"worst", c->worst}};
        jc["first_round"] = c->first_round ? json(*c->first_round) : json(nullptr);
        j[c->name] = jc;
    }
    return j;
}

inline json to_json(const MWUCertificate& c) {
    return {{"epsilon", c.epsilon},   {"w", c.w},
            {"applicable", c.applicable}, {"holds", c.holds},
            {"min_slack", c.min_slack}, {"prefixes", c.prefixes}};
}

inline json to_json(const BoundsEstimate& b) {
    return {{"A", b.A},         {"a_min", b.a_min}, {"W", b.W},
            {"L_min", b.L_min}, {"L_max", b.L_max}, {"lambda_max", b.lambda_max},
            {"samples", b.samples}, {"epsilon", choose_epsilon(b)}};
}

inline json prices_json(const Market& mk, const PriceVector& p) {
    json j = json::object();
    for (std::size_t k = 0; k < mk.m(); ++k) j[mk.goods[k]] = p[static_cast<Eigen::Index>(k)];
    return j;
}

inline json to_json(const Market& mk, const EquilibriumReport& r) {
    return {{"prices", prices_json(mk, r.p_star)},
            {"residual", r.residual},
            {"iterations", r.iterations},
            {"dual_value", r.dual_value},
            {"converged", r.converged}};
}

inline json to_json(const RunResult& r) {
    return {{"converged", r.converged},         {"rounds", r.rounds},
            {"delta_achieved", r.delta_achieved}, {"epsilon_used", r.epsilon_used},
            {"phi_final", r.phi_final},         {"stopping_reason", stop_reason_name(r.reason)}};
}

}  // namespace fisher
