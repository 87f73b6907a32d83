#pragma once

#include <proxqn/common.hpp>
#include <proxqn/model.hpp>
#include <proxqn/problem.hpp>

#include <optional>

namespace proxqn {

struct ReferenceSolution
{
    Vector x;
    double F = 0.0;
    double subgrad_inf = 0.0;
    std::size_t steps = 0;
    bool certified = false; // subgrad_inf <= tol
};

/*
 * Plain ISTA on F with fixed step 1/L:
 *     x <- soft(x - grad f(x) / L, lambda / L),
 * stopped once the minimal-norm subgradient satisfies ||.||_inf <= tol.
 */
template <SmoothLoss Loss>
ReferenceSolution reference_ista(const CompositeProblem<Loss>& problem, double tol = 1e-10,
                                 std::size_t max_steps = 1000000, std::optional<double> lipschitz = std::nullopt,
                                 std::optional<Vector> x0 = std::nullopt)
{
    const Index n = problem.dim();
    if (n == 0) throw Error("reference: problem has zero features");
    double L = lipschitz ? *lipschitz : lipschitz_estimate(problem).value;
    if (!(L > 0.0)) L = 1.0;
    const double tau = problem.lambda / L;

    ReferenceSolution r;
    r.x = x0 ? std::move(*x0) : Vector::Zero(n);
    Vector g;
    double f = problem.smooth(r.x, g);
    for (r.steps = 0;; ++r.steps) {
        r.subgrad_inf = min_norm_subgradient(r.x, g, problem.lambda).template lpNorm<Eigen::Infinity>();
        if (r.subgrad_inf <= tol || r.steps >= max_steps) break;
        for (Index i = 0; i < n; ++i) r.x[i] = soft_threshold(r.x[i] - g[i] / L, tau);
        f = problem.smooth(r.x, g);
    }
    r.F = f + problem.lambda * l1_norm(r.x);
    r.certified = r.subgrad_inf <= tol;
    return r;
}

/// One standalone ISTA step, used to cross-check the solver's ISTA special case.
template <SmoothLoss Loss>
Vector ista_step(const CompositeProblem<Loss>& problem, const Vector& x, double L)
{
    Vector g;
    problem.smooth(x, g);
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out[i] = soft_threshold(x[i] - g[i] / L, problem.lambda / L);
    return out;
}

} // namespace proxqn
