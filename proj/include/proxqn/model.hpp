#pragma once

#include <proxqn/common.hpp>
#include <proxqn/lbfgs.hpp>

#include <algorithm>
#include <limits>

namespace proxqn {

/*
 * Piecewise-quadratic model of F around a frozen base point x:
 *
 *     Q(d) = f(x) + grad' d + 1/2 d' H d + lambda ||x + d||_1,
 *
 * with H = G + shift I, G the compact LBFGS matrix. shift is zero under
 * gamma doubling and 1/(2 mu) under the explicit prox-parameter schedule.
 * The model keeps a reference to the LbfgsState, which must outlive it and
 * must not be mutated while the model is in use.
 */
class QuadModel
{
public:
    QuadModel(Vector base, Vector grad, double fval, double lambda, const LbfgsState& hessian, double shift = 0.0)
        : base_(std::move(base)), grad_(std::move(grad)), fval_(fval), lambda_(lambda), hessian_(&hessian),
          shift_(shift)
    {
        if (base_.size() != grad_.size() || base_.size() != hessian.dim())
            throw Error("model: dimension mismatch");
        Fval_ = fval_ + lambda_ * l1_norm(base_);
    }

    Index dim() const noexcept { return base_.size(); }
    const Vector& base() const noexcept { return base_; }
    const Vector& grad() const noexcept { return grad_; }
    double fval() const noexcept { return fval_; }
    double Fval() const noexcept { return Fval_; }
    double lambda() const noexcept { return lambda_; }
    double shift() const noexcept { return shift_; }
    const LbfgsState& hessian() const noexcept { return *hessian_; }

    double hess_diag(Index i) const noexcept { return hessian_->diag()[i] + shift_; }

    /// (H d)_i given v = Qhat d.
    double hess_entry(const Vector& v, Index i, double d_i) const noexcept
    {
        return hessian_->product_entry(v, i, d_i) + shift_ * d_i;
    }

    Vector hess_apply(const Vector& d) const
    {
        Vector out = hessian_->apply(d);
        if (shift_ != 0.0) out += shift_ * d;
        return out;
    }

    /// Cheap upper bound on lambda_max(H): identity weight + ||Q||_F ||Qhat||_F.
    double curvature_bound() const
    {
        double m = hessian_->identity_weight() + shift_;
        if (hessian_->rank() > 0) m += hessian_->q().norm() * hessian_->qhat().norm();
        return m;
    }

    Matrix dense_hessian(Index cap = 2000) const
    {
        Matrix H = hessian_->dense_materialize(cap);
        H.diagonal().array() += shift_;
        return H;
    }

    /// Q(H, x + d, x); O(mn).
    double q_value(const Vector& d) const
    {
        const Vector Hd = hess_apply(d);
        return q_value(d, Hd);
    }

    double q_value(const Vector& d, const Vector& Hd) const
    {
        const Vector u = base_ + d;
        return q_value_at(u, d, Hd);
    }

    /// Q evaluated with the trial point u = x + d given explicitly, so exact zeros in u count.
    double q_value_at(const Vector& u, const Vector& d, const Vector& Hd) const
    {
        return Fval_ + decrease_at(u, d, Hd);
    }

    /// Q(u) - F(x), accumulated per coordinate so that u = x gives exactly 0.
    double decrease_at(const Vector& u, const Vector& d, const Vector& Hd) const
    {
        double l1diff = 0.0;
        for (Index i = 0; i < u.size(); ++i) l1diff += std::abs(u[i]) - std::abs(base_[i]);
        return grad_.dot(d) + 0.5 * d.dot(Hd) + lambda_ * l1diff;
    }

    double model_decrease(const Vector& d) const
    {
        const Vector u = base_ + d;
        return decrease_at(u, d, hess_apply(d));
    }

private:
    Vector base_;
    Vector grad_;
    double fval_;
    double Fval_;
    double lambda_;
    const LbfgsState* hessian_;
    double shift_;
};

/*
 * Exact minimizer over z of  a z^2 + b z + lambda |c + z|,  a > 0.
 * Substituting w = c + z gives a soft-threshold in w.
 */
inline double coordinate_solve(double a, double b, double c, double lambda)
{
    if (!(a > 0.0)) throw Error("coordinate_solve: curvature must be positive");
    return soft_threshold(c - b / (2.0 * a), lambda / (2.0 * a)) - c;
}

/// The trial value c + z* itself, exact zero when thresholded.
inline double coordinate_solve_point(double a, double b, double c, double lambda)
{
    if (!(a > 0.0)) throw Error("coordinate_solve: curvature must be positive");
    return soft_threshold(c - b / (2.0 * a), lambda / (2.0 * a));
}

/// Minimal-norm element of grad + lambda d||x||_1.
inline Vector min_norm_subgradient(const Vector& x, const Vector& grad, double lambda)
{
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) out[i] = grad[i] + lambda;
        else if (x[i] < 0.0) out[i] = grad[i] - lambda;
        else out[i] = soft_threshold(grad[i], lambda);
    }
    return out;
}

// =======================================================================
// High-accuracy subproblem solve (test grade)
// =======================================================================

struct ProxOracleOptions
{
    double sigma = 0.0;                   // lower bound on lambda_min(H); 0: dense eigensolve
    double max_coord_steps = 1e7;         // iteration cap in coordinate-equivalent steps
    Index dense_cap = 2000;
};

struct ProxOracleResult
{
    Vector point;      // u = x + d, exact zeros preserved
    Vector direction;  // d
    double q_value = 0.0;
    double gap_bound = 0.0; // certified Q(u) - min Q
    Index iterations = 0;
};

class OracleLimitError : public Error
{
public:
    OracleLimitError(const std::string& what, ProxOracleResult best) : Error(what), best_(std::move(best)) {}
    const ProxOracleResult& best() const noexcept { return best_; }

private:
    ProxOracleResult best_;
};

/*
 * Proximal-gradient iterations on Q with step 1/M until
 *
 *     Q(u) - min Q <= ||s(u)||^2 / (2 sigma) <= tol,
 *
 * s(u) the minimal-norm subgradient of Q at u. The certificate follows
 * from sigma-strong convexity of Q.
 */
inline ProxOracleResult exact_prox_oracle(const QuadModel& model, double tol, const ProxOracleOptions& opt = {})
{
    if (!(tol > 0.0)) throw Error("exact_prox_oracle: tol must be positive");
    const Index n = model.dim();
    double sigma = opt.sigma;
    double M;
    if (n <= opt.dense_cap) {
        const auto [lo, hi] = extreme_eigenvalues(model.dense_hessian(opt.dense_cap));
        if (sigma <= 0.0) sigma = lo;
        M = hi;
    } else {
        M = model.curvature_bound();
    }
    if (!(sigma > 0.0)) throw Error("exact_prox_oracle: model Hessian is not positive definite");

    const Vector& x = model.base();
    const Vector& g = model.grad();
    const double lam = model.lambda();
    const double step_tau = lam / M;

    ProxOracleResult r;
    r.point = x;
    r.direction = Vector::Zero(n);
    Vector Hd = Vector::Zero(n);
    const auto max_iter = static_cast<Index>(opt.max_coord_steps / std::max<double>(1.0, static_cast<double>(n)));

    for (Index it = 0;; ++it) {
        const Vector smooth = g + Hd;
        const double s2 = min_norm_subgradient(r.point, smooth, lam).squaredNorm();
        r.gap_bound = s2 / (2.0 * sigma);
        r.iterations = it;
        if (r.gap_bound <= tol) break;
        if (it >= max_iter) {
            r.q_value = model.q_value_at(r.point, r.direction, Hd);
            throw OracleLimitError("exact_prox_oracle: iteration cap reached", std::move(r));
        }
        for (Index i = 0; i < n; ++i) r.point[i] = soft_threshold(r.point[i] - smooth[i] / M, step_tau);
        r.direction = r.point - x;
        Hd = model.hess_apply(r.direction);
    }
    r.q_value = model.q_value_at(r.point, r.direction, Hd);
    return r;
}

} // namespace proxqn
