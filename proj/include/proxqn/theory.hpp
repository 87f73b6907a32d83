#pragma once

#include <proxqn/common.hpp>
#include <proxqn/inner.hpp>
#include <proxqn/lbfgs.hpp>
#include <proxqn/model.hpp>
#include <proxqn/outer.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

// Size-capped numerical checks of the convergence theory: inexactness
// certificates, step-length bounds, rate envelopes and the rate constants.
namespace proxqn::theory {

struct EigenBounds
{
    double sigma = 0.0;
    double M = 0.0;
};

inline EigenBounds eigen_bounds(const LbfgsState& state, double shift = 0.0, Index cap = 2000)
{
    Matrix H = state.dense_materialize(cap);
    H.diagonal().array() += shift;
    const auto [lo, hi] = extreme_eigenvalues(H);
    return {lo, hi};
}

inline EigenBounds eigen_bounds(const QuadModel& model, Index cap = 2000)
{
    return eigen_bounds(model.hessian(), model.shift(), cap);
}

// -----------------------------------------------------------------------
// Subproblem inexactness
// -----------------------------------------------------------------------

struct PhiGap
{
    double value = 0.0;  // Q(d) - Q(oracle), clamped at 0 within 1e-12
    double upper = 0.0;  // value + certified oracle gap: an upper bound on the true phi
    ProxOracleResult oracle;
};

inline PhiGap phi_gap(const QuadModel& model, const Vector& point, double oracle_tol = 1e-14)
{
    PhiGap r;
    r.oracle = exact_prox_oracle(model, oracle_tol);
    const Vector d = point - model.base();
    const double q = model.q_value_at(point, d, model.hess_apply(d));
    double phi = q - r.oracle.q_value;
    if (phi < 0.0 && phi > -1e-12) phi = 0.0;
    r.value = phi;
    r.upper = std::max(phi, 0.0) + r.oracle.gap_bound;
    return r;
}

struct EtaCertificate
{
    Vector eta;
    Vector gamma_g;      // element of the phi-subdifferential of lambda ||.||_1 at the trial point
    double eta_norm = 0.0;
    double bound = 0.0;  // sqrt(2 M phi)
    bool holds = false;
};

/*
 * Nearest point to r in the phi-subdifferential of lambda ||.||_1 at u,
 *     { y : ||y||_inf <= lambda,  lambda ||u||_1 - y'u <= phi },
 * as y(tau) = clip(r + tau u) with the smallest feasible tau >= 0.
 */
inline Vector project_phi_subdifferential(const Vector& r, const Vector& u, double lambda, double phi)
{
    const Index n = r.size();
    const double l1u = lambda * l1_norm(u);
    auto y_of = [&](double tau) {
        Vector y(n);
        for (Index i = 0; i < n; ++i) y[i] = std::clamp(r[i] + tau * u[i], -lambda, lambda);
        return y;
    };
    auto feasible = [&](const Vector& y) { return l1u - y.dot(u) <= phi; };
    Vector y = y_of(0.0);
    if (feasible(y)) return y;
    double hi = 0.0;
    for (Index i = 0; i < n; ++i)
        if (u[i] != 0.0) hi = std::max(hi, (lambda + std::abs(r[i])) / std::abs(u[i]));
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (feasible(y_of(mid))) hi = mid;
        else lo = mid;
    }
    return y_of(hi);
}

/// Nearest point to r in the exact subdifferential of lambda ||.||_1 at u.
inline Vector project_subdifferential(const Vector& r, const Vector& u, double lambda)
{
    Vector y(r.size());
    for (Index i = 0; i < r.size(); ++i) {
        if (u[i] > 0.0) y[i] = lambda;
        else if (u[i] < 0.0) y[i] = -lambda;
        else y[i] = std::clamp(r[i], -lambda, lambda);
    }
    return y;
}

/*
 * eta = H(x - u) - grad f(x) - gamma_g with gamma_g chosen in the
 * phi-subdifferential at u; for a phi-optimal u, ||eta|| <= sqrt(2 M phi).
 */
inline EtaCertificate eta_certificate(const QuadModel& model, const Vector& point, double phi, double M,
                                      double slack = 1e-8)
{
    EtaCertificate c;
    const Vector d = point - model.base();
    const Vector r = -(model.hess_apply(d) + model.grad());
    c.gamma_g = project_phi_subdifferential(r, point, model.lambda(), std::max(phi, 0.0));
    c.eta = r - c.gamma_g;
    c.eta_norm = c.eta.norm();
    c.bound = std::sqrt(2.0 * M * std::max(phi, 0.0));
    c.holds = c.eta_norm <= c.bound + slack;
    return c;
}

// -----------------------------------------------------------------------
// Step-length bounds
// -----------------------------------------------------------------------

struct StepSample
{
    std::size_t k = 0;
    double step_norm = 0.0;   // ||x^{k+1} - x^k||
    double w_norm = 0.0;      // ||grad f(x^k) + gamma_g^{k+1}||
    double sigma = 0.0;
    double M = 0.0;
    double phi = 0.0;         // 0 for exact solves
};

/// Builds a sample from an accepted step. phi = 0 uses the exact subdifferential.
inline StepSample make_step_sample(std::size_t k, const QuadModel& model, const Vector& next_point, double phi,
                                   const EigenBounds& eb)
{
    StepSample s;
    s.k = k;
    const Vector d = next_point - model.base();
    s.step_norm = d.norm();
    const Vector r = -(model.hess_apply(d) + model.grad());
    const Vector gamma = phi > 0.0 ? project_phi_subdifferential(r, next_point, model.lambda(), phi)
                                   : project_subdifferential(r, next_point, model.lambda());
    s.w_norm = (model.grad() + gamma).norm();
    s.sigma = eb.sigma;
    s.M = eb.M;
    s.phi = phi;
    return s;
}

struct StepBoundsReport
{
    std::size_t checked = 0;
    std::size_t violations = 0;
    double worst_lower = -std::numeric_limits<double>::infinity(); // max of (lower bound - step)
    double worst_upper = -std::numeric_limits<double>::infinity(); // max of (step - upper bound)
};

/*
 *   ||w|| / M - sqrt(2 M phi) / M  <=  ||step||  <=  ||w|| / sigma + sqrt(2 M phi) / sigma
 * (phi = 0: the exact-solve bounds).
 */
inline StepBoundsReport step_bounds_check(std::span<const StepSample> samples, double slack = 1e-8)
{
    StepBoundsReport rep;
    for (const auto& s : samples) {
        const double e = std::sqrt(2.0 * s.M * s.phi);
        const double lower = (s.w_norm - e) / s.M;
        const double upper = (s.w_norm + e) / s.sigma;
        rep.worst_lower = std::max(rep.worst_lower, lower - s.step_norm);
        rep.worst_upper = std::max(rep.worst_upper, s.step_norm - upper);
        ++rep.checked;
        if (lower - s.step_norm > slack || s.step_norm - upper > slack) ++rep.violations;
    }
    return rep;
}

// -----------------------------------------------------------------------
// Rate envelope
// -----------------------------------------------------------------------

struct EnvelopeReport
{
    double envelope = 0.0;  // max over k in [k0, K] of k (F_k - F*)
    double midpoint = 0.0;  // running max at the start of the trailing half
    double growth = 0.0;    // envelope / midpoint - 1
    bool pass = false;
};

/// k (F_k - F*) running maximum; PASS when it grows <= max_growth over the trailing half.
inline EnvelopeReport rate_envelope(std::span<const double> F, double fstar, std::size_t k0 = 10,
                                    double max_growth = 0.05)
{
    EnvelopeReport r;
    if (F.size() < 2) {
        r.pass = true;
        return r;
    }
    const std::size_t K = F.size() - 1;
    const std::size_t start = K >= k0 ? k0 : 1;
    const std::size_t mid = start + (K - start) / 2;
    double run = -std::numeric_limits<double>::infinity();
    for (std::size_t k = start; k <= K; ++k) {
        run = std::max(run, static_cast<double>(k) * (F[k] - fstar));
        if (k == mid) r.midpoint = run;
    }
    r.envelope = run;
    if (r.envelope <= 0.0) {
        r.envelope = std::max(r.envelope, 0.0);
        r.growth = 0.0;
        r.pass = true;
    } else if (r.midpoint <= 0.0) {
        r.growth = std::numeric_limits<double>::infinity();
        r.pass = false;
    } else {
        r.growth = r.envelope / r.midpoint - 1.0;
        r.pass = r.growth <= max_growth;
    }
    return r;
}

inline EnvelopeReport rate_envelope(const std::vector<IterationRecord>& trace, double fstar, std::size_t k0 = 10)
{
    std::vector<double> F;
    F.reserve(trace.size());
    for (const auto& r : trace) F.push_back(r.F);
    return rate_envelope(F, fstar, k0);
}

/// Per-k mean of F over several traces; shorter traces hold their final value.
inline std::vector<double> mean_objective(const std::vector<std::vector<IterationRecord>>& traces)
{
    std::size_t len = 0;
    for (const auto& t : traces) len = std::max(len, t.size());
    std::vector<double> mean(len, 0.0);
    for (const auto& t : traces)
        for (std::size_t k = 0; k < len; ++k) mean[k] += t[std::min(k, t.size() - 1)].F;
    for (double& m : mean) m /= static_cast<double>(traces.size());
    return mean;
}

// -----------------------------------------------------------------------
// Rate constants
// -----------------------------------------------------------------------

struct TheoryContext
{
    double sigma = 0.0; // min over k of lambda_min(H_k)
    double M = 0.0;     // max over k of lambda_max(H_k)
    double rho = 0.01;
    double L_f = 0.0;
    double L_g = 0.0;   // lambda sqrt(n)
    double D = 0.0;     // max_k ||x^k - x*||
    double theta = 0.0; // 0: smallest value giving c > 0
    double a = 1.0;     // phi_k <= a^2 / k^2
};

struct RateConstants
{
    double b = 0.0;
    double c = 0.0;
    double theta = 0.0;
};

/// Numerator of c; positive iff theta is large enough.
inline double c_numerator_core(double sigma, double M, double theta)
{
    const double it = 1.0 / theta;
    return (sigma * sigma) / (M * M) * (1.0 - it) * (1.0 - it) - (2.0 * it + 3.0 * it * it);
}

/// Smallest theta with c > 0, by bisection on 1/theta (the numerator is decreasing in 1/theta).
inline double minimal_theta(double sigma, double M)
{
    double lo = 0.0, hi = 1.0; // over t = 1/theta
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid > 0.0 && c_numerator_core(sigma, M, 1.0 / mid) > 0.0) lo = mid;
        else hi = mid;
    }
    if (!(lo > 0.0)) throw Error("constants_bc: no theta makes c positive");
    return 1.0 / lo;
}

/*
 * b = theta D sqrt(2M) + 2 (1 + theta) L_g sqrt(2M) / sigma + 2
 * c = rho (sigma^2/M^2 (1 - 1/theta)^2 - (2/theta + 3/theta^2))
 *     / (2 (D + 2 L_g (1 + 1/theta) / sqrt(sigma) + (2/sqrt 2) / theta)^2)
 */
inline RateConstants constants_bc(const TheoryContext& ctx)
{
    if (!(ctx.sigma > 0.0 && ctx.M >= ctx.sigma)) throw Error("constants_bc: need 0 < sigma <= M");
    RateConstants rc;
    rc.theta = ctx.theta > 0.0 ? ctx.theta : minimal_theta(ctx.sigma, ctx.M);
    const double th = rc.theta;
    const double it = 1.0 / th;
    const double s2M = std::sqrt(2.0 * ctx.M);
    rc.b = th * ctx.D * s2M + 2.0 * (1.0 + th) * ctx.L_g / ctx.sigma * s2M + 2.0;
    const double num = ctx.rho * c_numerator_core(ctx.sigma, ctx.M, th);
    const double den_inner = ctx.D + 2.0 * ctx.L_g * (1.0 + it) / std::sqrt(ctx.sigma) + (2.0 / std::sqrt(2.0)) * it;
    rc.c = num / (2.0 * den_inner * den_inner);
    if (!(rc.c > 0.0)) throw Error("constants_bc: c <= 0; choose a larger theta");
    return rc;
}

/*
 * Per-iteration constants as displayed for the one-step lemma:
 * b_k = theta D sqrt(2 M_k) + 2 (1 + theta) L_g sqrt(2 M_k) / sigma_k + 2
 * c_k = rho (sigma^3 (theta-1)^2 - 2 sigma M^2 (1+theta) - sigma^3 M)
 *       / (sqrt2 D theta sigma M + 2 sqrt2 L_g (1+theta) M + sigma sqrt(M))^2
 */
inline RateConstants constants_bk_ck(double sigma_k, double M_k, double rho, double L_g, double D, double theta)
{
    RateConstants rc;
    rc.theta = theta;
    const double s2M = std::sqrt(2.0 * M_k);
    rc.b = theta * D * s2M + 2.0 * (1.0 + theta) * L_g / sigma_k * s2M + 2.0;
    const double s3 = sigma_k * sigma_k * sigma_k;
    const double num = rho * (s3 * (theta - 1.0) * (theta - 1.0) - 2.0 * sigma_k * M_k * M_k * (1.0 + theta) - s3 * M_k);
    const double r2 = std::sqrt(2.0);
    const double den = r2 * D * theta * sigma_k * M_k + 2.0 * r2 * L_g * (1.0 + theta) * M_k + sigma_k * std::sqrt(M_k);
    rc.c = num / (den * den);
    return rc;
}

/// max{b a, 1/c} / (k - 1), k >= 2.
inline double inexact_rate_bound(const RateConstants& rc, double a, std::size_t k)
{
    return std::max(rc.b * a, 1.0 / rc.c) / static_cast<double>(k - 1);
}

/// Exact-solve rate constant 2 M^2 (D M + 2 L_g)^2 / (rho sigma^3).
inline double exact_rate_constant(const TheoryContext& ctx)
{
    const double t = ctx.D * ctx.M + 2.0 * ctx.L_g;
    return 2.0 * ctx.M * ctx.M * t * t / (ctx.rho * ctx.sigma * ctx.sigma * ctx.sigma);
}

// -----------------------------------------------------------------------
// Trace audits
// -----------------------------------------------------------------------

/// Rows where F_k - F_{k-1} > coefficient * model_decrease_k + slack.
inline std::size_t sufficient_decrease_audit(std::span<const IterationRecord> trace, double coefficient,
                                             double slack = 1e-12)
{
    std::size_t bad = 0;
    for (std::size_t k = 1; k < trace.size(); ++k) {
        const double lhs = trace[k].F - trace[k - 1].F;
        const double rhs = coefficient * trace[k].model_decrease;
        if (!(lhs - rhs <= slack) || !(trace[k].model_decrease <= 0.0)) ++bad;
    }
    return bad;
}

/// Rows whose inner step count differs from the default budget formula.
inline std::size_t budget_fidelity_audit(std::span<const IterationRecord> trace, std::size_t memory,
                                         const BudgetRule& rule = {})
{
    std::size_t bad = 0;
    for (std::size_t k = 1; k < trace.size(); ++k)
        if (trace[k].inner_steps != compute_budget(trace[k].k - 1, memory, trace[k].ws_size, rule)) ++bad;
    return bad;
}

} // namespace proxqn::theory
