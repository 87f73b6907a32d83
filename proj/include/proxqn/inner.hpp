#pragma once

#include <proxqn/common.hpp>
#include <proxqn/model.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace proxqn {

// =======================================================================
// Inner iteration budget
// =======================================================================

enum class BudgetMode { paper, linear };

struct BudgetRule
{
    BudgetMode mode = BudgetMode::paper;
    double slope = 0.0;     // linear mode: l(k) = slope * k + intercept
    double intercept = 0.0;
};

/// paper: (1 + floor(k / m)) |I_k|;  linear: ceil(a k + b).
inline std::size_t compute_budget(std::size_t k, std::size_t memory, std::size_t ws_size, const BudgetRule& rule = {})
{
    if (rule.mode == BudgetMode::paper) return (1 + k / std::max<std::size_t>(memory, 1)) * ws_size;
    const double l = std::ceil(rule.slope * static_cast<double>(k) + rule.intercept);
    return l > 0.0 ? static_cast<std::size_t>(l) : 0;
}

// =======================================================================
// Subproblem solvers
// =======================================================================

struct InnerReport
{
    Vector direction;        // d
    Vector point;            // x + d, exact zeros where a coordinate was thresholded
    std::size_t steps_taken = 0;
    std::size_t budget = 0;
    double q_start = 0.0;
    double q_end = 0.0;
};

inline Index draw_coordinate(SplitMix64& rng, std::span<const Index> working_set)
{
    return working_set[static_cast<std::size_t>(rng.uniform_index(working_set.size()))];
}

namespace detail {

// Coordinate-descent workspace: trial point u, direction d = u - x, v = Qhat d.
class CoordinateSweeper
{
public:
    explicit CoordinateSweeper(const QuadModel& model)
        : model_(model), u_(model.base()), d_(Vector::Zero(model.dim())),
          v_(Vector::Zero(model.hessian().rank()))
    {}

    void step(Index j)
    {
        const double a = 0.5 * model_.hess_diag(j);
        const double b = model_.grad()[j] + model_.hess_entry(v_, j, d_[j]);
        const double w = coordinate_solve_point(a, b, u_[j], model_.lambda());
        u_[j] = w;
        const double d_new = w - model_.base()[j];
        const double delta = d_new - d_[j];
        d_[j] = d_new;
        model_.hessian().update_v(v_, j, delta);
    }

    InnerReport finish(std::size_t steps, std::size_t budget)
    {
        InnerReport r;
        r.q_start = model_.Fval();
        r.q_end = model_.q_value_at(u_, d_, model_.hess_apply(d_));
        r.steps_taken = steps;
        r.budget = budget;
        r.direction = std::move(d_);
        r.point = std::move(u_);
        return r;
    }

    const Vector& v() const noexcept { return v_; }
    const Vector& direction() const noexcept { return d_; }

private:
    const QuadModel& model_;
    Vector u_;
    Vector d_;
    Vector v_;
};

inline InnerReport zero_report(const QuadModel& model, std::size_t budget)
{
    InnerReport r;
    r.direction = Vector::Zero(model.dim());
    r.point = model.base();
    r.q_start = r.q_end = model.Fval();
    r.budget = budget;
    return r;
}

} // namespace detail

/*
 * Randomized coordinate descent on the model restricted to the working set.
 * Each step draws j uniformly from the working set and minimizes Q exactly
 * along e_j; (G d)_j costs O(m) through the maintained v = Qhat d.
 */
inline InnerReport rcd(const QuadModel& model, std::span<const Index> working_set, std::size_t budget,
                       SplitMix64& rng)
{
    if (working_set.empty() || budget == 0) return detail::zero_report(model, budget);
    detail::CoordinateSweeper cd(model);
    for (std::size_t s = 0; s < budget; ++s) cd.step(draw_coordinate(rng, working_set));
    return cd.finish(budget, budget);
}

/// Gauss-Seidel sweeps over the working set in ascending index order.
inline InnerReport cyclic_cd(const QuadModel& model, std::span<const Index> working_set, std::size_t passes)
{
    const std::size_t budget = passes * working_set.size();
    if (budget == 0) return detail::zero_report(model, budget);
    std::vector<Index> order(working_set.begin(), working_set.end());
    std::sort(order.begin(), order.end());
    detail::CoordinateSweeper cd(model);
    for (std::size_t p = 0; p < passes; ++p)
        for (Index j : order) cd.step(j);
    return cd.finish(budget, budget);
}

/// Proximal-gradient steps on Q with step 1/M_est, M_est = curvature_bound().
inline InnerReport ista_inner(const QuadModel& model, std::size_t steps)
{
    if (steps == 0) return detail::zero_report(model, 0);
    const Index n = model.dim();
    const double M = model.curvature_bound();
    const double tau = model.lambda() / M;
    const Vector& x = model.base();
    const Vector& g = model.grad();

    Vector u = x;
    Vector d = Vector::Zero(n);
    Vector Hd = Vector::Zero(n);
    for (std::size_t s = 0; s < steps; ++s) {
        for (Index i = 0; i < n; ++i) u[i] = soft_threshold(u[i] - (g[i] + Hd[i]) / M, tau);
        d = u - x;
        Hd = model.hess_apply(d);
    }
    InnerReport r;
    r.q_start = model.Fval();
    r.q_end = model.q_value_at(u, d, Hd);
    r.steps_taken = steps;
    r.budget = steps;
    r.direction = std::move(d);
    r.point = std::move(u);
    return r;
}

} // namespace proxqn
