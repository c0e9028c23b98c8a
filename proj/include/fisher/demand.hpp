#pragma once

// Closed-form optimal bundles x_i(p) and the excess demand z(p).
//
// For an agent with objects J (Leontief bundles a^J, weight c^J) the object
// price is p~^J = sum_j a_j^J p_j. The budget is split over objects by spend
// shares s^J, the object level is u^J = b s^J / p~^J and x_j = sum_J a_j^J u^J.
//   CES / nested:  s^J proportional to (c^J / p~^J)^(rho/(1-rho))
//   Cobb-Douglas:  s^J = c^J
//   Leontief:      single object, s = 1
// Powers are taken in the log domain with max-subtraction.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "market.hpp"

namespace fisher {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Strictly positive prices over goods. Kept as a plain Eigen vector.
using PriceVector = Vector;

class DemandError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Bundle {
    Vector x;                   // per-good quantities
    std::vector<double> levels; // per-object levels u^J
};

struct ExcessDemand {
    Vector z;          // aggregate - 1
    Vector aggregate;  // f(p)
};

struct MarketResponse {
    std::vector<Bundle> bundles;
    Vector aggregate;
    Vector excess;
};

/// Object prices and spend shares of one agent at p.
struct ObjectQuote {
    std::vector<double> tilde;
    std::vector<double> share;
    double log_sum = 0.0;  // ln sum_J (c^J/p~^J)^(rho/(1-rho)); CES families only
};

inline void require_positive_prices(const PriceVector& p) {
    for (Eigen::Index j = 0; j < p.size(); ++j)
        if (!(p[j] > 0) || !std::isfinite(p[j]))
            throw DemandError("price of good " + std::to_string(j) + " is not strictly positive");
}

/// Exponent of the Hessian's rank-one correction; zero outside the CES families.
inline double curvature_rho(const Agent& ag) {
    return has_rho(ag.utility.family) ? ag.utility.rho : 0.0;
}

inline ObjectQuote quote(const Agent& ag, const PriceVector& p) {
    const auto& u = ag.utility;
    if (u.family == Family::resource_allocation)
        throw DemandError("resource_allocation utilities have no unique demand; distort the market first");
    const std::size_t k = u.objects.size();
    ObjectQuote q;
    q.tilde.resize(k);
    q.share.resize(k);
    for (std::size_t J = 0; J < k; ++J) {
        double t = 0.0;
        for (const auto& term : u.objects[J].a) t += term.coef * p[static_cast<Eigen::Index>(term.good)];
        q.tilde[J] = t;
    }
    switch (u.family) {
        case Family::ces:
        case Family::nested_ces_leontief: {
            const double r = u.rho / (1.0 - u.rho);
            std::vector<double> logs(k);
            for (std::size_t J = 0; J < k; ++J) logs[J] = r * (std::log(u.objects[J].c) - std::log(q.tilde[J]));
            q.log_sum = detail::log_sum_exp(logs);
            for (std::size_t J = 0; J < k; ++J) q.share[J] = std::exp(logs[J] - q.log_sum);
            break;
        }
        case Family::cobb_douglas: {
            double s = 0.0;
            for (const auto& o : u.objects) s += o.c;
            for (std::size_t J = 0; J < k; ++J) q.share[J] = u.objects[J].c / s;
            break;
        }
        case Family::leontief:
            q.share.assign(k, 1.0);
            break;
        case Family::resource_allocation:
            break;
    }
    return q;
}

inline Bundle bundle_from_quote(const Agent& ag, const ObjectQuote& q, std::size_t m) {
    Bundle out;
    out.x = Vector::Zero(static_cast<Eigen::Index>(m));
    const auto& objs = ag.utility.objects;
    out.levels.resize(objs.size());
    for (std::size_t J = 0; J < objs.size(); ++J) {
        const double level = ag.budget * q.share[J] / q.tilde[J];
        out.levels[J] = level;
        for (const auto& t : objs[J].a) out.x[static_cast<Eigen::Index>(t.good)] += t.coef * level;
    }
    return out;
}

/// Optimal bundle of one agent at strictly positive prices.
inline Bundle demand(const Agent& ag, const PriceVector& p) {
    require_positive_prices(p);
    return bundle_from_quote(ag, quote(ag, p), static_cast<std::size_t>(p.size()));
}

inline MarketResponse respond(const Market& mk, const PriceVector& p) {
    if (static_cast<std::size_t>(p.size()) != mk.m()) throw DemandError("price vector has the wrong length");
    require_positive_prices(p);
    MarketResponse r;
    r.aggregate = Vector::Zero(p.size());
    r.bundles.reserve(mk.n());
    for (const auto& ag : mk.agents) {
        r.bundles.push_back(bundle_from_quote(ag, quote(ag, p), mk.m()));
        r.aggregate += r.bundles.back().x;
    }
    r.excess = r.aggregate.array() - 1.0;
    return r;
}

inline ExcessDemand excess_demand(const Market& mk, const PriceVector& p) {
    auto r = respond(mk, p);
    return {std::move(r.excess), std::move(r.aggregate)};
}

/// ln u_i given object levels. Returns -inf when the utility is zero.
inline double log_utility(const Agent& ag, const std::vector<double>& levels) {
    const auto& u = ag.utility;
    const auto& objs = u.objects;
    if (levels.size() != objs.size()) throw DemandError("object level count does not match the utility");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (double l : levels)
        if (l < 0 || !std::isfinite(l)) throw DemandError("object levels must be finite and nonnegative");

    switch (u.family) {
        case Family::ces:
        case Family::nested_ces_leontief: {
            std::vector<double> logs;
            for (std::size_t J = 0; J < objs.size(); ++J) {
                if (levels[J] == 0) {
                    if (u.rho < 0) return neg_inf;
                    continue;
                }
                logs.push_back(u.rho * (std::log(objs[J].c) + std::log(levels[J])));
            }
            if (logs.empty()) return neg_inf;
            return detail::log_sum_exp(logs) / u.rho;
        }
        case Family::cobb_douglas: {
            double csum = 0.0, acc = 0.0;
            for (const auto& o : objs) csum += o.c;
            for (std::size_t J = 0; J < objs.size(); ++J) {
                if (levels[J] == 0) return neg_inf;
                acc += objs[J].c * std::log(levels[J]);
            }
            return acc / csum;
        }
        case Family::leontief:
            return levels.front() > 0 ? std::log(levels.front()) : neg_inf;
        case Family::resource_allocation: {
            double s = 0.0;
            for (std::size_t J = 0; J < objs.size(); ++J) s += objs[J].c * levels[J];
            return s > 0 ? std::log(s) : neg_inf;
        }
    }
    return neg_inf;
}

inline double utility(const Agent& ag, const Bundle& x) { return std::exp(log_utility(ag, x.levels)); }

/// ln of the best utility affordable at p. Defined for resource allocation
/// utilities too (all money goes to the object with the best c/p~ ratio).
inline double optimal_log_utility(const Agent& ag, const PriceVector& p) {
    require_positive_prices(p);
    if (ag.utility.family == Family::resource_allocation) {
        double best = 0.0;
        for (const auto& o : ag.utility.objects) {
            double t = 0.0;
            for (const auto& term : o.a) t += term.coef * p[static_cast<Eigen::Index>(term.good)];
            best = std::max(best, o.c / t);
        }
        return std::log(ag.budget * best);
    }
    return log_utility(ag, demand(ag, p).levels);
}

/// Recovers object levels from a goods bundle: u^J = min_{j in J} x_j / a_j^J.
/// Only unambiguous when the agent's objects share no goods.
inline Bundle bundle_from_goods(const Agent& ag, const Vector& x) {
    if (!objects_disjoint(ag))
        throw DemandError("objects share goods; the allocation must list object levels explicitly");
    Bundle b;
    b.x = x;
    for (const auto& o : ag.utility.objects) {
        double level = std::numeric_limits<double>::infinity();
        for (const auto& t : o.a) level = std::min(level, x[static_cast<Eigen::Index>(t.good)] / t.coef);
        b.levels.push_back(std::max(level, 0.0));
    }
    return b;
}

inline Bundle scaled(const Bundle& b, double factor) {
    Bundle out = b;
    out.x *= factor;
    for (auto& l : out.levels) l *= factor;
    return out;
}

}  // namespace fisher
