#pragma once

#include <proxqn/common.hpp>
#include <proxqn/inner.hpp>
#include <proxqn/lbfgs.hpp>
#include <proxqn/model.hpp>
#include <proxqn/problem.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace proxqn {

enum class AcceptanceKind { prox_update, armijo };

// gamma_doubling: H = G with gamma doubled per backtrack.
// mu_schedule:    H = G + 1/(2 mu) I with mu = beta^i mu_bar.
enum class ProxSchedule { gamma_doubling, mu_schedule };

enum class InnerKind { rcd, cyclic, ista, exact };

enum class SolveStatus { converged, fstar_reached, max_iter, backtrack_failure, oracle_failure };

inline std::string_view to_string(AcceptanceKind a) { return a == AcceptanceKind::prox_update ? "prox" : "armijo"; }

inline std::string_view to_string(ProxSchedule s)
{
    return s == ProxSchedule::gamma_doubling ? "gamma_doubling" : "mu_schedule";
}

inline std::string_view to_string(InnerKind k)
{
    switch (k) {
    case InnerKind::rcd: return "rcd";
    case InnerKind::cyclic: return "cyclic";
    case InnerKind::ista: return "ista";
    case InnerKind::exact: return "exact";
    }
    return "?";
}

inline std::string_view to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::fstar_reached: return "fstar_reached";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::backtrack_failure: return "backtrack_failure";
    case SolveStatus::oracle_failure: return "oracle_failure";
    }
    return "?";
}

struct SolverConfig
{
    double rho = 0.01;
    double beta = 0.5;
    double mu_bar = 1.0;
    int memory = 10; // 0 disables curvature pairs: G = base_gamma I
    AcceptanceKind acceptance = AcceptanceKind::prox_update;
    ProxSchedule schedule = ProxSchedule::gamma_doubling;
    InnerKind inner = InnerKind::rcd;
    BudgetRule budget{};
    double tol = 1e-6;              // on ||min-norm subgradient||_inf
    std::size_t max_iter = 1000;
    int max_backtracks = 40;
    std::uint64_t seed = 0;
    std::optional<double> fstar{};
    double fstar_rel_tol = 1e-8;
    double armijo_sigma = 0.001;
    double base_gamma = 1.0;        // G when no pairs are stored
    double sigma_floor = 0.0;       // > 0: enforce lambda_min(G) >= floor (dense, small n only)
    double exact_tol = 1e-13;       // inner = exact: certified subproblem gap

    void validate() const
    {
        if (!(rho > 0.0 && rho <= 1.0)) throw Error("config: rho must lie in (0, 1]");
        if (!(beta > 0.0 && beta < 1.0)) throw Error("config: beta must lie in (0, 1)");
        if (!(mu_bar > 0.0)) throw Error("config: mu_bar must be positive");
        if (memory < 0) throw Error("config: memory must be >= 0");
        if (!(tol >= 0.0)) throw Error("config: tol must be >= 0");
        if (max_backtracks < 0) throw Error("config: max_backtracks must be >= 0");
        if (!(armijo_sigma > 0.0 && armijo_sigma < 1.0)) throw Error("config: armijo sigma must lie in (0, 1)");
        if (!(base_gamma > 0.0)) throw Error("config: base gamma must be positive");
    }

    /// Coefficient c in the acceptance test F_new - F <= c * model_decrease.
    double acceptance_coefficient() const { return acceptance == AcceptanceKind::prox_update ? rho : armijo_sigma; }
};

/*
 * Row k describes x^k; backtracks, inner_steps, ws_size and model_decrease
 * refer to the step that produced it (zero on the initial row).
 * model_decrease is Q(H, x^k, x^{k-1}) - F(x^{k-1}) under prox acceptance and
 * alpha * Delta under Armijo, so F_k - F_{k-1} <= coefficient * model_decrease
 * audits both rules.
 */
struct IterationRecord
{
    std::size_t k = 0;
    double F = 0.0;
    double rel_gap = std::numeric_limits<double>::quiet_NaN();
    double subgrad_inf = 0.0;
    double gamma_or_mu = 0.0;
    int backtracks = 0;
    std::size_t inner_steps = 0;
    std::size_t ws_size = 0;
    std::size_t nnz = 0;
    double elapsed_seconds = 0.0;
    double model_decrease = 0.0;
    double step_size = 1.0;
};

struct SolveResult
{
    Vector x;
    std::vector<IterationRecord> trace;
    SolveStatus status = SolveStatus::max_iter;
    std::string message;
};

/// Everything about one accepted step, before the LBFGS update.
struct StepView
{
    std::size_t k; // outer iteration producing x^{k+1}
    const QuadModel& model;
    const InnerReport& report;
    const Vector& next_point;
    double next_F;
    double alpha;
};

using SolveObserver = std::function<void(const StepView&)>;

// =======================================================================
// Building blocks
// =======================================================================

/// I_k = {i : (min-norm subgradient)_i != 0} U {i : x_i != 0}, ascending.
inline std::vector<Index> select_active_set(const Vector& x, const Vector& grad, double lambda)
{
    std::vector<Index> ws;
    const Vector s = min_norm_subgradient(x, grad, lambda);
    for (Index i = 0; i < x.size(); ++i)
        if (s[i] != 0.0 || x[i] != 0.0) ws.push_back(i);
    return ws;
}

enum class TerminationVerdict { proceed, converged, fstar_reached, max_iter };

inline TerminationVerdict check_termination(const IterationRecord& rec, const SolverConfig& config)
{
    if (rec.subgrad_inf <= config.tol) return TerminationVerdict::converged;
    if (config.fstar && rec.rel_gap <= config.fstar_rel_tol) return TerminationVerdict::fstar_reached;
    if (rec.k >= config.max_iter) return TerminationVerdict::max_iter;
    return TerminationVerdict::proceed;
}

inline double relative_gap(double F, std::optional<double> fstar)
{
    if (!fstar) return std::numeric_limits<double>::quiet_NaN();
    return *fstar != 0.0 ? (F - *fstar) / std::abs(*fstar) : F - *fstar;
}

struct ArmijoResult
{
    double alpha = 0.0;
    double F = 0.0;
    int backtracks = 0;
    bool ok = false;
};

/*
 * Largest alpha in {1, beta, beta^2, ...} with
 *     F(x + alpha d) <= F(x) + alpha sigma Delta.
 * `eval(alpha)` returns F(x + alpha d).
 */
template <class Eval>
ArmijoResult accept_armijo(double F_x, double delta, double beta, double sigma, int max_backtracks, Eval&& eval)
{
    if (!(delta < 0.0)) throw Error("armijo: Delta must be negative (not a descent direction)");
    ArmijoResult r;
    double alpha = 1.0;
    for (int i = 0; i <= max_backtracks; ++i) {
        const double F_new = eval(alpha);
        if (F_new <= F_x + alpha * sigma * delta) {
            r.alpha = alpha;
            r.F = F_new;
            r.backtracks = i;
            r.ok = true;
            return r;
        }
        alpha *= beta;
    }
    r.backtracks = max_backtracks;
    return r;
}

// =======================================================================
// Outer loop
// =======================================================================

namespace detail {

struct TrialOutcome
{
    bool ok = false;
    InnerReport report;
    Vector point;
    Vector grad;
    double f = 0.0;
    double F = 0.0;
    int backtracks = 0;
    double gamma_or_mu = 0.0;
    double model_decrease = 0.0;
    double alpha = 1.0;
    double shift = 0.0;
};

inline InnerReport run_inner(const QuadModel& model, const SolverConfig& config, std::span<const Index> ws,
                             std::size_t budget, std::size_t k, std::size_t trial)
{
    const std::size_t passes = ws.empty() ? 0 : (budget + ws.size() - 1) / ws.size();
    switch (config.inner) {
    case InnerKind::rcd: {
        SplitMix64 rng(SplitMix64::derive(config.seed, k, trial));
        return rcd(model, ws, budget, rng);
    }
    case InnerKind::cyclic: return cyclic_cd(model, ws, passes);
    case InnerKind::ista: return ista_inner(model, passes);
    case InnerKind::exact: {
        auto p = exact_prox_oracle(model, config.exact_tol);
        InnerReport r;
        r.q_start = model.Fval();
        r.q_end = p.q_value;
        r.steps_taken = static_cast<std::size_t>(p.iterations);
        r.budget = budget;
        r.direction = std::move(p.direction);
        r.point = std::move(p.point);
        return r;
    }
    }
    throw Error("unknown inner solver");
}

} // namespace detail

/*
 * Proximal quasi-Newton outer loop: gradient at x^k, working set, inner
 * budget, inner solve from d = 0, acceptance by sufficient decrease
 * (inflating the curvature on failure) or Armijo backtracking, then the
 * curvature-pair update.
 */
template <SmoothLoss Loss>
SolveResult solve(const CompositeProblem<Loss>& problem, const SolverConfig& config, const SolveObserver& observer = {},
                  std::optional<Vector> x0 = std::nullopt)
{
    config.validate();
    const Index n = problem.dim();
    if (n == 0) throw Error("solve: problem has zero features");
    const double lam = problem.lambda;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    SolveResult out;
    Vector x = x0 ? std::move(*x0) : Vector::Zero(n);
    if (x.size() != n) throw Error("solve: x0 dimension mismatch");
    Vector grad;
    double f;
    try {
        f = problem.smooth(x, grad);
    } catch (const Error& e) {
        out.x = x;
        out.status = SolveStatus::oracle_failure;
        out.message = e.what();
        return out;
    }
    double F = f + lam * l1_norm(x);

    LbfgsState state(n, config.memory, config.base_gamma);
    if (config.sigma_floor > 0.0) state.enforce_floor(config.sigma_floor);
    const bool doubling = config.schedule == ProxSchedule::gamma_doubling;

    {
        IterationRecord r;
        r.k = 0;
        r.F = F;
        r.rel_gap = relative_gap(F, config.fstar);
        r.subgrad_inf = min_norm_subgradient(x, grad, lam).lpNorm<Eigen::Infinity>();
        r.gamma_or_mu = doubling ? state.gamma_eff() : config.mu_bar;
        r.nnz = static_cast<std::size_t>(count_nonzeros(x));
        r.elapsed_seconds = elapsed();
        out.trace.push_back(r);
    }

    for (std::size_t k = 0;; ++k) {
        if (const auto verdict = check_termination(out.trace.back(), config); verdict != TerminationVerdict::proceed) {
            out.status = verdict == TerminationVerdict::converged       ? SolveStatus::converged
                         : verdict == TerminationVerdict::fstar_reached ? SolveStatus::fstar_reached
                                                                        : SolveStatus::max_iter;
            break;
        }

        const std::vector<Index> ws = select_active_set(x, grad, lam);
        if (ws.empty()) {
            out.status = SolveStatus::converged;
            break;
        }
        const std::size_t budget = compute_budget(k, static_cast<std::size_t>(config.memory), ws.size(), config.budget);

        detail::TrialOutcome acc;
        std::optional<QuadModel> accepted_model;
        try {
            if (config.acceptance == AcceptanceKind::prox_update) {
                for (int trial = 0;; ++trial) {
                    double shift = 0.0;
                    double mu = config.mu_bar;
                    if (!doubling) {
                        mu = config.mu_bar * std::pow(config.beta, trial);
                        shift = 1.0 / (2.0 * mu);
                    }
                    QuadModel model(x, grad, f, lam, state, shift);
                    InnerReport rep = detail::run_inner(model, config, ws, budget, k, static_cast<std::size_t>(trial));
                    if (rep.q_end > F) { // rounding-level non-decrease: fall back to the null step
                        const std::size_t spent = rep.steps_taken;
                        rep = detail::zero_report(model, budget);
                        rep.steps_taken = spent;
                    }
                    Vector g_new;
                    const double f_new = problem.smooth(rep.point, g_new);
                    const double F_new = f_new + lam * l1_norm(rep.point);
                    const double md = rep.q_end - F;
                    if (F_new <= F && F_new - F <= config.rho * md) {
                        acc.ok = true;
                        acc.point = rep.point;
                        acc.grad = std::move(g_new);
                        acc.f = f_new;
                        acc.F = F_new;
                        acc.backtracks = trial;
                        acc.gamma_or_mu = doubling ? state.gamma_eff() : mu;
                        acc.model_decrease = md;
                        acc.shift = shift;
                        acc.report = std::move(rep);
                        accepted_model.emplace(std::move(model));
                        break;
                    }
                    if (trial >= config.max_backtracks) break;
                    if (doubling) state.double_gamma();
                }
            } else {
                QuadModel model(x, grad, f, lam, state, 0.0);
                InnerReport rep = detail::run_inner(model, config, ws, budget, k, 0);
                double l1diff = 0.0;
                for (Index i = 0; i < n; ++i) l1diff += std::abs(rep.point[i]) - std::abs(x[i]);
                const double delta = grad.dot(rep.direction) + lam * l1diff;
                if (!(delta < 0.0)) {
                    // no descent left at working precision: take the null step
                    acc.ok = true;
                    acc.point = x;
                    acc.grad = grad;
                    acc.f = f;
                    acc.F = F;
                    acc.gamma_or_mu = state.gamma_eff();
                    acc.alpha = 0.0;
                    acc.report = detail::zero_report(model, budget);
                    accepted_model.emplace(std::move(model));
                } else {
                    Vector trial_point;
                    Vector g_new;
                    double f_new = 0.0;
                    auto eval = [&](double alpha) {
                        trial_point = alpha == 1.0 ? rep.point : Vector(x + alpha * rep.direction);
                        f_new = problem.smooth(trial_point, g_new);
                        return f_new + lam * l1_norm(trial_point);
                    };
                    const auto ar = accept_armijo(F, delta, config.beta, config.armijo_sigma, config.max_backtracks, eval);
                    if (ar.ok) {
                        acc.ok = true;
                        acc.point = std::move(trial_point);
                        acc.grad = std::move(g_new);
                        acc.f = f_new;
                        acc.F = ar.F;
                        acc.backtracks = ar.backtracks;
                        acc.gamma_or_mu = state.gamma_eff();
                        acc.model_decrease = ar.alpha * delta;
                        acc.alpha = ar.alpha;
                        acc.report = std::move(rep);
                        accepted_model.emplace(std::move(model));
                    }
                }
            }
        } catch (const OracleLimitError& e) {
            out.status = SolveStatus::oracle_failure;
            out.message = e.what();
            break;
        } catch (const Error& e) {
            // smooth loss non-finite, or the gamma multiplier overflowed
            const std::string what = e.what();
            out.status = what.find("lbfgs") != std::string::npos ? SolveStatus::backtrack_failure
                                                                   : SolveStatus::oracle_failure;
            out.message = what;
            break;
        }
        if (!acc.ok) {
            out.status = SolveStatus::backtrack_failure;
            out.message = "no acceptable step after " + std::to_string(config.max_backtracks) + " backtracks";
            break;
        }

        if (observer) observer(StepView{k, *accepted_model, acc.report, acc.point, acc.F, acc.alpha});
        accepted_model.reset();

        if (config.memory > 0) state.push_pair(acc.point - x, acc.grad - grad);
        state.refresh();
        if (config.sigma_floor > 0.0) state.enforce_floor(config.sigma_floor);

        x = std::move(acc.point);
        grad = std::move(acc.grad);
        f = acc.f;
        F = acc.F;

        IterationRecord r;
        r.k = k + 1;
        r.F = F;
        r.rel_gap = relative_gap(F, config.fstar);
        r.subgrad_inf = min_norm_subgradient(x, grad, lam).lpNorm<Eigen::Infinity>();
        r.gamma_or_mu = acc.gamma_or_mu;
        r.backtracks = acc.backtracks;
        r.inner_steps = acc.report.steps_taken;
        r.ws_size = ws.size();
        r.nnz = static_cast<std::size_t>(count_nonzeros(x));
        r.elapsed_seconds = elapsed();
        r.model_decrease = acc.model_decrease;
        r.step_size = acc.alpha;
        out.trace.push_back(r);
    }
    out.x = std::move(x);
    return out;
}

} // namespace proxqn
