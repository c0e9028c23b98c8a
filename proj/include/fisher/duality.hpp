#pragma once

// Eisenberg-Gale primal psi, dual phi and its derivatives, plus a reference
// equilibrium solver that shares nothing with the tatonnement loop beyond the
// demand oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "demand.hpp"

namespace fisher {

/// Thrown when the primal objective is -infinity (some agent gets utility 0).
class DomainError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using Allocation = std::vector<Bundle>;

/// psi(x) = sum_i b_i ln u_i(x_i)
inline double psi(const Market& mk, const Allocation& x) {
    if (x.size() != mk.n()) throw DemandError("allocation has the wrong number of agents");
    double s = 0.0;
    for (std::size_t i = 0; i < mk.n(); ++i) {
        const auto& ag = mk.agents[i];
        if (ag.budget == 0) continue;
        double lu = log_utility(ag, x[i].levels);
        if (!std::isfinite(lu)) throw DomainError("-infinity primal value: agent " + std::to_string(i) + " has zero utility");
        s += ag.budget * lu;
    }
    return s;
}

/// phi(p) = psi(x(p)) + sum_j p_j (1 - sum_i x_ij(p)); the inner maximum of the
/// Lagrangian is attained at the demand, so this holds for every family.
inline double phi(const Market& mk, const PriceVector& p) {
    auto r = respond(mk, p);
    return psi(mk, r.bundles) - p.dot(r.excess);
}

/// Dual value from the closed-form indirect utilities. For the CES families this
/// is  sum p - sum b + sum_i b_i ln( sum_J (b_i c^J / p~^J)^r )^(1/r),  r = rho/(1-rho).
inline double phi_closed_form(const Market& mk, const PriceVector& p) {
    require_positive_prices(p);
    double s = p.sum();
    for (const auto& ag : mk.agents) {
        if (ag.budget == 0) continue;
        const auto q = quote(ag, p);
        const auto& u = ag.utility;
        double log_u = 0.0;
        switch (u.family) {
            case Family::ces:
            case Family::nested_ces_leontief:
                log_u = std::log(ag.budget) + q.log_sum * (1.0 - u.rho) / u.rho;
                break;
            case Family::cobb_douglas:
                for (std::size_t J = 0; J < q.share.size(); ++J)
                    log_u += q.share[J] * std::log(ag.budget * q.share[J] / q.tilde[J]);
                break;
            case Family::leontief:
                log_u = std::log(ag.budget / q.tilde.front());
                break;
            case Family::resource_allocation:
                break;  // quote() already threw
        }
        s += ag.budget * (log_u - 1.0);
    }
    return s;
}

/// grad phi(p) = -z(p)
inline Vector grad_phi(const Market& mk, const PriceVector& p) { return -excess_demand(mk, p).z; }

/// Central differences of a scalar function of prices.
template <class F>
Vector finite_difference_gradient(F&& f, const PriceVector& p, double h = 1e-6) {
    Vector g(p.size());
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        PriceVector up = p, dn = p;
        up[j] += h;
        dn[j] -= h;
        g[j] = (f(up) - f(dn)) / (2.0 * h);
    }
    return g;
}

/// Central differences of a vector function of prices; column l is d/dp_l.
template <class F>
Matrix finite_difference_jacobian(F&& f, const PriceVector& p, double h = 1e-6) {
    Matrix jac(p.size(), p.size());
    for (Eigen::Index l = 0; l < p.size(); ++l) {
        PriceVector up = p, dn = p;
        up[l] += h;
        dn[l] -= h;
        jac.col(l) = (f(up) - f(dn)) / (2.0 * h);
    }
    return jac;
}

/// Per-agent curvature in object coordinates:
///   K = b [ diag(s/p~^2) / (1-rho) - rho/(1-rho) g g^T ],  g = s/p~.
/// The Hessian of phi is sum_i A_i^T K_i A_i with A_i the object rows a^J.
inline Matrix object_curvature(const Agent& ag, const ObjectQuote& q) {
    const double rho = curvature_rho(ag);
    const auto k = static_cast<Eigen::Index>(q.share.size());
    Vector g(k);
    Matrix K = Matrix::Zero(k, k);
    for (Eigen::Index J = 0; J < k; ++J) {
        g[J] = q.share[J] / q.tilde[J];
        K(J, J) = g[J] / q.tilde[J] / (1.0 - rho);
    }
    K.noalias() -= (rho / (1.0 - rho)) * g * g.transpose();
    return ag.budget * K;
}

/// Rows a^J for every (agent, object) pair, agents in order.
inline Matrix object_matrix(const Market& mk) {
    Matrix A = Matrix::Zero(static_cast<Eigen::Index>(mk.object_count()), static_cast<Eigen::Index>(mk.m()));
    Eigen::Index row = 0;
    for (const auto& ag : mk.agents)
        for (const auto& o : ag.utility.objects) {
            for (const auto& t : o.a) A(row, static_cast<Eigen::Index>(t.good)) = t.coef;
            ++row;
        }
    return A;
}

/// v~_i^J = sum_j a_ij^J v_j, flattened over (agent, object).
inline Vector tilde(const Market& mk, const Vector& v) { return object_matrix(mk) * v; }

struct CoefficientStats {
    double A = 0.0;      // max_j sum_{i,J} a_ij^J
    double a_min = 0.0;  // min positive a_ij^J
};

inline CoefficientStats coefficient_stats(const Market& mk) {
    Matrix A = object_matrix(mk);
    CoefficientStats st;
    st.A = A.colwise().sum().maxCoeff();
    st.a_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < A.rows(); ++r)
        for (Eigen::Index c = 0; c < A.cols(); ++c)
            if (A(r, c) > 0) st.a_min = std::min(st.a_min, A(r, c));
    return st;
}

inline Matrix hessian_phi(const Market& mk, const PriceVector& p) {
    require_positive_prices(p);
    const auto m = static_cast<Eigen::Index>(mk.m());
    Matrix H = Matrix::Zero(m, m);
    for (const auto& ag : mk.agents) {
        const auto q = quote(ag, p);
        const Matrix K = object_curvature(ag, q);
        const auto& objs = ag.utility.objects;
        for (std::size_t J = 0; J < objs.size(); ++J)
            for (std::size_t L = 0; L < objs.size(); ++L) {
                const double k = K(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(L));
                for (const auto& tj : objs[J].a)
                    for (const auto& tl : objs[L].a)
                        H(static_cast<Eigen::Index>(tj.good), static_cast<Eigen::Index>(tl.good)) += k * tj.coef * tl.coef;
            }
    }
    return 0.5 * (H + H.transpose());
}

/// Smallest delta for which (p, x(p)) meets the excess conditions of a
/// delta-approximate equilibrium: z_j <= delta, and z_j < -delta only if p_j <= delta.
inline double equilibrium_residual(const PriceVector& p, const Vector& z) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        if (z[j] >= 0)
            d = std::max(d, z[j]);
        else
            d = std::max(d, std::min(-z[j], p[j]));
    }
    return d;
}

struct SolveOptions {
    double tol = 1e-9;
    std::size_t max_iters = 200000;
    bool cobb_douglas_shortcut = true;
};

struct EquilibriumReport {
    PriceVector p_star;
    Allocation x_star;
    double dual_value = 0.0;
    double residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

inline EquilibriumReport finish_report(const Market& mk, PriceVector p, std::size_t iters, double tol) {
    EquilibriumReport rep;
    auto r = respond(mk, p);
    rep.residual = equilibrium_residual(p, r.excess);
    rep.dual_value = psi(mk, r.bundles) - p.dot(r.excess);
    rep.x_star = std::move(r.bundles);
    rep.p_star = std::move(p);
    rep.iterations = iters;
    rep.converged = rep.residual <= tol;
    return rep;
}

/// Minimizes phi over the price simplex by exponentiated-gradient mirror
/// descent from uniform prices. The step grows by 1.5 after an accepted step
/// and halves when phi fails to decrease.
inline EquilibriumReport solve_equilibrium(const Market& mk, const SolveOptions& opt = {}) {
    const auto m = static_cast<Eigen::Index>(mk.m());
    const double total = mk.total_budget();

    bool all_cd = true;
    for (const auto& ag : mk.agents) all_cd = all_cd && ag.utility.family == Family::cobb_douglas;
    if (all_cd && opt.cobb_douglas_shortcut) {
        // market clearing forces p_j = sum_i b_i c_ij
        PriceVector p = Vector::Zero(m);
        for (const auto& ag : mk.agents) {
            const auto q = quote(ag, Vector::Ones(m));
            for (std::size_t J = 0; J < q.share.size(); ++J)
                p[static_cast<Eigen::Index>(ag.utility.objects[J].a.front().good)] += ag.budget * q.share[J];
        }
        return finish_report(mk, p, 0, opt.tol);
    }

    PriceVector p = Vector::Constant(m, total / static_cast<double>(m));
    auto r = respond(mk, p);
    double f = psi(mk, r.bundles) - p.dot(r.excess);
    Vector z = r.excess;
    double eta = 1.0;
    std::size_t it = 0;
    const double eps = std::numeric_limits<double>::epsilon();

    for (; it < opt.max_iters; ++it) {
        if (equilibrium_residual(p, z) <= opt.tol) break;
        Vector logq = p.array().log() + eta * z.array();
        const double shift = logq.maxCoeff();
        Vector q = (logq.array() - shift).exp();
        q *= total / q.sum();
        if ((q.array() <= 0).any()) {
            eta *= 0.5;
            continue;
        }
        auto rq = respond(mk, q);
        const double fq = psi(mk, rq.bundles) - q.dot(rq.excess);
        const bool decreased = fq < f;
        // Near the optimum phi differences drop below rounding. Fall back on the
        // exact slope of phi along the update path, d/d(eta) = -z(q).dq/d(eta),
        // and accept while the path is still descending at q.
        bool tie = false;
        if (!decreased && std::abs(fq - f) <= 64 * eps * std::max(1.0, std::abs(f))) {
            const double zbar = q.dot(z) / q.sum();
            const double slope = -(rq.excess.array() * q.array() * (z.array() - zbar)).sum();
            tie = slope <= 0;
        }
        if (decreased || tie) {
            p = std::move(q);
            z = std::move(rq.excess);
            f = fq;
            eta = std::min(eta * 1.5, 1e8);
        } else {
            eta *= 0.5;
            if (eta < 1e-300) break;
        }
    }
    return finish_report(mk, p, it, opt.tol);
}

struct BoundsOptions {
    std::size_t samples = 200;
    std::uint64_t seed = 0;
    double floor = 1e-3;                   // per-good floor of the Dirichlet samples
    std::optional<PriceVector> reference;  // start of the dynamics; uniform if absent
};

/// Empirical constants over the dual sublevel set {p in B : phi(p) <= phi(reference)}.
/// L_min/L_max bound <x|H|x> / |x~|^2, lambda_max bounds |H x| / |x~|.
struct BoundsEstimate {
    double A = 0.0;
    double a_min = 0.0;
    double W = 1.0;
    double L_min = std::numeric_limits<double>::infinity();
    double L_max = 0.0;
    double lambda_max = 0.0;
    std::size_t samples = 0;
    std::vector<PriceVector> points;  // the evaluated price vectors
};

struct CurvatureRange {
    double L_min = std::numeric_limits<double>::infinity();
    double L_max = 0.0;
    double lambda = 0.0;
};

/// Curvature constants at one price vector, from the object-space blocks K_i.
inline CurvatureRange curvature_range(const Market& mk, const PriceVector& p) {
    CurvatureRange cr;
    const Matrix A = object_matrix(mk);
    Matrix AtK = Matrix::Zero(A.cols(), A.rows());
    Eigen::Index row = 0;
    for (const auto& ag : mk.agents) {
        const auto k = static_cast<Eigen::Index>(ag.utility.object_count());
        const Matrix K = object_curvature(ag, quote(ag, p));
        Eigen::SelfAdjointEigenSolver<Matrix> es(K, Eigen::EigenvaluesOnly);
        cr.L_min = std::min(cr.L_min, es.eigenvalues().minCoeff());
        cr.L_max = std::max(cr.L_max, es.eigenvalues().maxCoeff());
        AtK.middleCols(row, k) = A.middleRows(row, k).transpose() * K;
        row += k;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(AtK * AtK.transpose(), Eigen::EigenvaluesOnly);
    cr.lambda = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    return cr;
}

inline BoundsEstimate estimate_bounds(const Market& mk, const BoundsOptions& opt = {}) {
    const auto m = static_cast<Eigen::Index>(mk.m());
    const double total = mk.total_budget();
    BoundsEstimate est;
    const auto stats = coefficient_stats(mk);
    est.A = stats.A;
    est.a_min = stats.a_min;

    const PriceVector ref = opt.reference ? *opt.reference : Vector::Constant(m, total / static_cast<double>(m));
    const double phi_ref = phi(mk, ref);
    const double floor = std::min(opt.floor, 0.5 * total / static_cast<double>(m));

    auto consider = [&](const PriceVector& p) {
        const auto z = excess_demand(mk, p).z;
        est.W = std::max(est.W, z.maxCoeff());
        const auto cr = curvature_range(mk, p);
        est.L_min = std::min(est.L_min, cr.L_min);
        est.L_max = std::max(est.L_max, cr.L_max);
        est.lambda_max = std::max(est.lambda_max, cr.lambda);
        est.points.push_back(p);
    };
    consider(ref);

    std::mt19937_64 rng(opt.seed);
    std::exponential_distribution<double> expo(1.0);
    for (std::size_t s = 0; s < opt.samples; ++s) {
        Vector d(m);
        for (Eigen::Index j = 0; j < m; ++j) d[j] = expo(rng);
        PriceVector p = floor + (total - floor * static_cast<double>(m)) * (d / d.sum()).array();
        if (phi(mk, p) > phi_ref) {
            // sublevel sets are convex: pull the sample back toward the reference
            double lo = 0.0, hi = 1.0;
            for (int k = 0; k < 40; ++k) {
                double mid = 0.5 * (lo + hi);
                if (phi(mk, ref + mid * (p - ref)) <= phi_ref)
                    lo = mid;
                else
                    hi = mid;
            }
            p = ref + lo * (p - ref);
        }
        consider(p);
    }
    est.samples = est.points.size();
    return est;
}

}  // namespace fisher
