#pragma once

// Discrete tatonnement: p_j <- p_j (1 + eps z_j(p)), synchronous over agents.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "duality.hpp"

namespace fisher {

class NumericError : public std::runtime_error {
  public:
    NumericError(const std::string& what, std::size_t round)
        : std::runtime_error(what + " at round " + std::to_string(round)), round_(round) {}
    std::size_t round() const { return round_; }

  private:
    std::size_t round_;
};

enum class InitMode { uniform, spend_reset, explicit_vector };

struct RunConfig {
    std::optional<double> epsilon;  // empty: choose from estimated bounds
    double delta = 1e-3;
    std::size_t max_iters = 1000000;
    InitMode init = InitMode::uniform;
    std::optional<PriceVector> init_vector;  // explicit prices, or the spend-reset starting point
    std::size_t check_every = 10;
    std::uint64_t seed = 0;
    std::size_t divergence_window = 100;
    std::size_t bound_samples = 200;
    std::optional<bool> expect_monotone;  // empty: expected only when epsilon is automatic
};

enum class StopReason { converged, iteration_cap, divergence };

inline const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::converged: return "converged";
        case StopReason::iteration_cap: return "iteration_cap";
        case StopReason::divergence: return "divergence";
    }
    return "?";
}

/// Per-round record stored as flat row-major arrays (round x good).
struct Trace {
    std::size_t m = 0;
    double epsilon = 0.0;
    std::uint64_t market_hash = 0;
    std::vector<double> price_data;
    std::vector<double> excess_data;
    std::vector<double> spend_data;
    std::vector<double> phi_data;

    std::size_t size() const { return phi_data.size(); }
    bool empty() const { return phi_data.empty(); }

    void push(const PriceVector& p, const Vector& z, double phi_value) {
        for (Eigen::Index j = 0; j < p.size(); ++j) {
            price_data.push_back(p[j]);
            excess_data.push_back(z[j]);
            spend_data.push_back(p[j] * (1.0 + z[j]));
        }
        phi_data.push_back(phi_value);
    }

    Eigen::Map<const Vector> prices(std::size_t t) const { return row(price_data, t); }
    Eigen::Map<const Vector> excess(std::size_t t) const { return row(excess_data, t); }
    Eigen::Map<const Vector> spend(std::size_t t) const { return row(spend_data, t); }
    double phi(std::size_t t) const { return phi_data.at(t); }

  private:
    Eigen::Map<const Vector> row(const std::vector<double>& d, std::size_t t) const {
        if (t >= size()) throw std::out_of_range("trace round out of range");
        return Eigen::Map<const Vector>(d.data() + t * m, static_cast<Eigen::Index>(m));
    }
};

struct RunResult {
    bool converged = false;
    StopReason reason = StopReason::iteration_cap;
    std::size_t rounds = 0;  // T: index of the final price vector p^T
    double epsilon_used = 0.0;
    bool epsilon_auto = false;
    double delta_achieved = 0.0;
    double phi_final = 0.0;
    PriceVector p_final;
    Allocation allocation;  // x^{T+1} = x(p^T)
    std::vector<std::string> warnings;
    std::optional<BoundsEstimate> bounds;
};

struct RunOutput {
    Trace trace;
    RunResult result;
};

/// One price update. Requires 1 + eps z_j > 0 for the result to stay positive,
/// which holds for eps < 1 because z_j >= -1.
inline PriceVector step(const PriceVector& p, const Vector& z, double epsilon) {
    if (!(epsilon > 0 && epsilon <= 1)) throw std::invalid_argument("step: epsilon must be in (0, 1]");
    if (p.size() != z.size()) throw std::invalid_argument("step: dimension mismatch");
    PriceVector out = p.array() * (1.0 + epsilon * z.array());
    return out;
}

struct InitResult {
    PriceVector p;
    std::vector<std::string> warnings;
};

inline InitResult init_prices(const Market& mk, InitMode mode, const std::optional<PriceVector>& given = std::nullopt,
                              std::uint64_t seed = 0) {
    const auto m = static_cast<Eigen::Index>(mk.m());
    const double total = mk.total_budget();
    InitResult out;
    switch (mode) {
        case InitMode::uniform:
            out.p = Vector::Constant(m, total / static_cast<double>(m));
            break;
        case InitMode::spend_reset: {
            PriceVector start;
            if (given) {
                start = *given;
            } else {
                std::mt19937_64 rng(seed);
                std::exponential_distribution<double> expo(1.0);
                start.resize(m);
                for (Eigen::Index j = 0; j < m; ++j) start[j] = 0.05 + expo(rng);
            }
            if (start.size() != m) throw std::invalid_argument("init: starting vector has the wrong length");
            require_positive_prices(start);
            // total spend on good j at the arbitrary start; sums to the total budget
            out.p = start.array() * excess_demand(mk, start).aggregate.array();
            break;
        }
        case InitMode::explicit_vector: {
            if (!given) throw std::invalid_argument("init: explicit mode needs a price vector");
            if (given->size() != m) throw std::invalid_argument("init: price vector has the wrong length");
            for (Eigen::Index j = 0; j < m; ++j)
                if (!((*given)[j] > 0)) throw std::invalid_argument("init: explicit price of good " + mk.goods[j] + " is not positive");
            out.p = *given;
            const double s = out.p.sum();
            if (std::abs(s - total) > 1e-12) {
                out.p *= total / s;
                out.warnings.push_back("initial prices sum to " + std::to_string(s) + "; rescaled onto the budget simplex");
            }
            break;
        }
    }
    return out;
}

/// eps = min(1/4, 1/(2W), 1/(L_max A), 1/(2 lambda_max)).
inline double choose_epsilon(const BoundsEstimate& b) {
    double eps = 0.25;
    eps = std::min(eps, 1.0 / (2.0 * std::max(1.0, b.W)));
    if (b.L_max * b.A > 0) eps = std::min(eps, 1.0 / (b.L_max * b.A));
    if (b.lambda_max > 0) eps = std::min(eps, 1.0 / (2.0 * b.lambda_max));
    return eps;
}

inline double distortion_rho(std::size_t k, double delta) {
    return 1.0 - delta / (4.0 * std::log(static_cast<double>(k)));
}

/// Replaces resource-allocation utilities by nested CES-Leontief ones with
/// rho = 1 - delta / (4 ln k), k = max objects per agent.
inline Market distort(const Market& mk, double delta) {
    if (!(delta > 0 && delta < 1)) throw MarketError("distort: delta must be in (0, 1)");
    std::size_t k = 0;
    bool any = false;
    for (const auto& ag : mk.agents)
        if (ag.utility.family == Family::resource_allocation) {
            any = true;
            k = std::max(k, ag.utility.object_count());
        }
    if (!any) throw MarketError("distort: market has no resource_allocation agents");
    if (k < 2) throw MarketError("distort: every agent has a single object (k = 1); ln k = 0 leaves rho undefined");
    const double rho = distortion_rho(k, delta);
    Market out = mk;
    for (auto& ag : out.agents)
        if (ag.utility.family == Family::resource_allocation) {
            ag.utility.family = Family::nested_ces_leontief;
            ag.utility.rho = rho;
        }
    return normalize(std::move(out));
}

inline void validate_config(const RunConfig& cfg) {
    if (cfg.epsilon && !(*cfg.epsilon > 0 && *cfg.epsilon <= 1))
        throw std::invalid_argument("epsilon must be in (0, 1]");
    if (!(cfg.delta > 0)) throw std::invalid_argument("delta must be positive");
    if (cfg.check_every == 0) throw std::invalid_argument("check_every must be at least 1");
    if (cfg.divergence_window == 0) throw std::invalid_argument("divergence_window must be at least 1");
}

inline RunOutput run(const Market& mk, const RunConfig& cfg) {
    validate_config(cfg);
    for (const auto& ag : mk.agents)
        if (ag.utility.family == Family::resource_allocation)
            throw MarketError("run: resource_allocation utilities must be distorted first");

    RunOutput out;
    auto& res = out.result;
    auto init = init_prices(mk, cfg.init, cfg.init_vector, cfg.seed);
    res.warnings = init.warnings;
    PriceVector p = init.p;

    double eps;
    if (cfg.epsilon) {
        eps = *cfg.epsilon;
        if (eps >= 0.5) res.warnings.push_back("epsilon >= 1/2 is outside the analyzed range");
    } else {
        BoundsOptions bo;
        bo.samples = cfg.bound_samples;
        bo.seed = cfg.seed;
        bo.reference = p;
        res.bounds = estimate_bounds(mk, bo);
        eps = choose_epsilon(*res.bounds);
        res.epsilon_auto = true;
    }
    res.epsilon_used = eps;
    // only an automatically chosen epsilon carries a monotonicity expectation
    const bool monotone_expected = cfg.expect_monotone.value_or(res.epsilon_auto);

    auto& trace = out.trace;
    trace.m = mk.m();
    trace.epsilon = eps;
    trace.market_hash = market_hash(mk);

    double prev_phi = 0.0;
    std::size_t rising = 0;
    bool warned_rising = false;
    for (std::size_t t = 0;; ++t) {
        for (Eigen::Index j = 0; j < p.size(); ++j)
            if (!std::isfinite(p[j]) || !(p[j] > 0))
                throw NumericError("price of good " + mk.goods[j] + " became non-finite or non-positive", t);
        auto r = respond(mk, p);
        const double f = psi(mk, r.bundles) - p.dot(r.excess);
        if (!std::isfinite(f)) throw NumericError("dual objective became non-finite", t);
        trace.push(p, r.excess, f);

        if (t > 0 && f > prev_phi + 1e-9)
            ++rising;
        else
            rising = 0;
        prev_phi = f;

        const double resid = equilibrium_residual(p, r.excess);
        const bool scheduled = t % cfg.check_every == 0 || r.excess.cwiseAbs().maxCoeff() <= cfg.delta;
        auto finish = [&](StopReason why) {
            res.reason = why;
            res.converged = why == StopReason::converged;
            res.rounds = t;
            res.delta_achieved = resid;
            res.phi_final = f;
            res.p_final = p;
            res.allocation = std::move(r.bundles);
        };

        if (scheduled && resid <= cfg.delta) {
            finish(StopReason::converged);
            break;
        }
        if (rising >= cfg.divergence_window) {
            if (monotone_expected) {
                finish(StopReason::divergence);
                break;
            }
            if (!warned_rising) {
                res.warnings.push_back("dual objective rose for " + std::to_string(rising) +
                                       " consecutive rounds ending at round " + std::to_string(t));
                warned_rising = true;
            }
        }
        if (t >= cfg.max_iters) {
            finish(StopReason::iteration_cap);
            break;
        }
        p = step(p, r.excess, eps);
    }
    return out;
}

struct TraceAverage {
    PriceVector prices;
    Vector demand;  // average aggregate demand f = z + 1
    std::size_t rounds = 0;
};

inline TraceAverage average_trace(const Trace& tr, std::size_t from_round = 0) {
    if (from_round >= tr.size()) throw std::invalid_argument("average_trace: empty window");
    TraceAverage avg;
    avg.prices = Vector::Zero(static_cast<Eigen::Index>(tr.m));
    avg.demand = Vector::Zero(static_cast<Eigen::Index>(tr.m));
    for (std::size_t t = from_round; t < tr.size(); ++t) {
        avg.prices += tr.prices(t);
        avg.demand += tr.excess(t);
    }
    avg.rounds = tr.size() - from_round;
    avg.prices /= static_cast<double>(avg.rounds);
    avg.demand = avg.demand.array() / static_cast<double>(avg.rounds) + 1.0;
    return avg;
}

inline void write_trace_csv(std::ostream& os, const Trace& tr, const std::vector<std::string>& goods) {
    os << "t,phi,max_excess,min_price";
    for (const auto& g : goods) os << ",p_" << g;
    for (const auto& g : goods) os << ",z_" << g;
    os << "\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        os << buf;
    };
    for (std::size_t t = 0; t < tr.size(); ++t) {
        os << t;
        const auto p = tr.prices(t);
        const auto z = tr.excess(t);
        put(tr.phi(t));
        put(z.maxCoeff());
        put(p.minCoeff());
        for (Eigen::Index j = 0; j < p.size(); ++j) put(p[j]);
        for (Eigen::Index j = 0; j < z.size(); ++j) put(z[j]);
        os << "\n";
    }
}

}  // namespace fisher
