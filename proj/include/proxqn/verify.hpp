#pragma once

#include <proxqn/common.hpp>
#include <proxqn/outer.hpp>
#include <proxqn/reference.hpp>
#include <proxqn/synthetic.hpp>
#include <proxqn/theory.hpp>
#include <proxqn/trace_io.hpp>

#include <json.hpp>

#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

// Verification suites behind `proxqn verify`: generators plus audits over
// the theory module, one CheckResult per assertion.
namespace proxqn::verify {

struct CheckResult
{
    std::string suite;
    std::string check;
    bool pass = false;
    double measured = 0.0;
    double bound = 0.0;
    std::string instance; // hex hash of the generating instance
    std::string detail;   // enough to regenerate the instance
};

struct Options
{
    int seeds = 20;
    Index size_cap = 100; // largest n used; exact-solve step bounds use min(cap, 30)
    std::uint64_t seed = 1;
};

inline std::string hex(std::uint64_t h)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void write_jsonl(std::ostream& out, const std::vector<CheckResult>& results)
{
    for (const auto& r : results) {
        nlohmann::ordered_json j;
        j["suite"] = r.suite;
        j["check"] = r.check;
        j["pass"] = r.pass;
        j["measured"] = std::isfinite(r.measured) ? nlohmann::ordered_json(r.measured) : nlohmann::ordered_json(nullptr);
        j["bound"] = std::isfinite(r.bound) ? nlohmann::ordered_json(r.bound) : nlohmann::ordered_json(nullptr);
        j["instance"] = r.instance;
        j["detail"] = r.detail;
        out << j.dump() << '\n';
    }
}

inline std::size_t count_failures(const std::vector<CheckResult>& results)
{
    std::size_t n = 0;
    for (const auto& r : results) n += !r.pass;
    return n;
}

// -----------------------------------------------------------------------
// Instances
// -----------------------------------------------------------------------

struct LassoInstance
{
    CompositeProblem<LeastSquaresLoss> problem;
    std::string id;
    std::string hash;
};

/// Gaussian Lasso with 20% true support and lambda = 0.1 lambda_max.
inline LassoInstance make_lasso(Index n, Index N, std::uint64_t seed, double lambda_fraction = 0.1)
{
    const auto inst = synthetic::lasso(N, n, 0.2, 0.1, seed);
    const LeastSquaresLoss loss(inst.data);
    Vector g;
    loss(Vector::Zero(n), g);
    const double lam = lambda_fraction * g.lpNorm<Eigen::Infinity>();
    char id[160];
    std::snprintf(id, sizeof id, "synthetic lasso N=%lld n=%lld support=0.2 noise=0.1 seed=%llu lambda=%.17g",
                  static_cast<long long>(N), static_cast<long long>(n), static_cast<unsigned long long>(seed), lam);
    std::uint64_t h = inst.data->fingerprint();
    h = fnv1a(&lam, sizeof lam, h);
    return {CompositeProblem<LeastSquaresLoss>(loss, lam), id, hex(h)};
}

inline CheckResult result(const char* suite, std::string check, bool pass, double measured, double bound,
                          const std::string& hash, std::string detail)
{
    return {suite, std::move(check), pass, measured, bound, hash, std::move(detail)};
}

inline std::vector<Index> all_indices(Index n)
{
    std::vector<Index> ws(static_cast<std::size_t>(n));
    std::iota(ws.begin(), ws.end(), Index{0});
    return ws;
}

// -----------------------------------------------------------------------
// Per-iteration property checks
// -----------------------------------------------------------------------

inline std::vector<CheckResult> lemmas_suite(const Options& opt)
{
    constexpr const char* S = "lemmas";
    std::vector<CheckResult> out;
    const Index n = std::min<Index>(opt.size_cap, 60);
    const auto lasso = make_lasso(n, 2 * n, opt.seed);

    // Sufficient decrease and monotonicity across acceptance modes.
    struct Mode
    {
        const char* name;
        AcceptanceKind a;
        ProxSchedule s;
        InnerKind i;
    };
    for (const Mode mode : {Mode{"prox/gamma_doubling/rcd", AcceptanceKind::prox_update, ProxSchedule::gamma_doubling,
                                 InnerKind::rcd},
                            Mode{"prox/mu_schedule/rcd", AcceptanceKind::prox_update, ProxSchedule::mu_schedule,
                                 InnerKind::rcd},
                            Mode{"prox/gamma_doubling/cyclic", AcceptanceKind::prox_update,
                                 ProxSchedule::gamma_doubling, InnerKind::cyclic},
                            Mode{"armijo/rcd", AcceptanceKind::armijo, ProxSchedule::gamma_doubling, InnerKind::rcd}}) {
        SolverConfig c;
        c.acceptance = mode.a;
        c.schedule = mode.s;
        c.inner = mode.i;
        c.tol = 1e-7;
        c.max_iter = 300;
        c.seed = opt.seed;
        const auto r = solve(lasso.problem, c);
        const auto v = theory::sufficient_decrease_audit(r.trace, c.acceptance_coefficient());
        std::size_t rises = 0;
        for (std::size_t k = 1; k < r.trace.size(); ++k) rises += r.trace[k].F > r.trace[k - 1].F;
        out.push_back(result(S, std::string("sufficient_decrease[") + mode.name + "]", v == 0, double(v), 0.0,
                             lasso.hash, lasso.id + " rows=" + std::to_string(r.trace.size())));
        out.push_back(result(S, std::string("monotone_objective[") + mode.name + "]", rises == 0, double(rises), 0.0,
                             lasso.hash, lasso.id));
    }
    {
        SolverConfig c;
        c.inner = InnerKind::ista;
        c.memory = 0;
        c.base_gamma = lipschitz_estimate(lasso.problem).value;
        c.rho = 1.0;
        c.budget = {BudgetMode::linear, 0.0, 1.0};
        c.tol = 1e-7;
        c.max_iter = 300;
        const auto r = solve(lasso.problem, c);
        const auto v = theory::sufficient_decrease_audit(r.trace, 1.0);
        out.push_back(result(S, "sufficient_decrease[ista rho=1]", v == 0, double(v), 0.0, lasso.hash, lasso.id));
    }

    // Step-length bounds with exact subproblem solves.
    {
        const Index ne = std::min<Index>(opt.size_cap, 30);
        const auto small = make_lasso(ne, 2 * ne, opt.seed + 1);
        SolverConfig c;
        c.inner = InnerKind::exact;
        c.exact_tol = 1e-24;
        c.tol = 1e-8;
        c.max_iter = 100;
        std::vector<theory::StepSample> samples;
        solve(small.problem, c, [&](const StepView& v) {
            samples.push_back(theory::make_step_sample(v.k, v.model, v.next_point, 0.0, theory::eigen_bounds(v.model)));
        });
        const auto rep = theory::step_bounds_check(samples);
        out.push_back(result(S, "step_bounds[exact]", rep.violations == 0 && rep.checked > 0, double(rep.violations),
                             0.0, small.hash,
                             small.id + " steps=" + std::to_string(rep.checked) +
                                 " worst_lower=" + detail::format_double(rep.worst_lower) +
                                 " worst_upper=" + detail::format_double(rep.worst_upper)));
    }

    // Slack-adjusted bounds on an inexact run, phi recorded per step.
    {
        const Index ni = std::min<Index>(opt.size_cap, 30);
        const auto small = make_lasso(ni, 2 * ni, opt.seed + 2);
        SolverConfig c;
        c.tol = 1e-7;
        c.max_iter = 100;
        c.seed = opt.seed;
        std::vector<theory::StepSample> samples;
        solve(small.problem, c, [&](const StepView& v) {
            const double phi = theory::phi_gap(v.model, v.next_point).upper;
            samples.push_back(theory::make_step_sample(v.k, v.model, v.next_point, phi, theory::eigen_bounds(v.model)));
        });
        const auto rep = theory::step_bounds_check(samples);
        out.push_back(result(S, "step_bounds[inexact]", rep.violations == 0 && rep.checked > 0,
                             double(rep.violations), 0.0, small.hash,
                             small.id + " steps=" + std::to_string(rep.checked)));
    }

    // eta certificates on randomized partial coordinate-descent solves.
    {
        SplitMix64 rng(SplitMix64::derive(opt.seed, 0xE7A));
        int held = 0;
        std::string first_failure;
        for (int t = 0; t < 100; ++t) {
            const Index m = 4 + static_cast<Index>(rng.uniform_index(12));
            const int mem = 1 + static_cast<int>(rng.uniform_index(8));
            const auto inst = synthetic::lasso(2 * m, m, 0.3, 0.1, rng.next());
            const CompositeProblem<LeastSquaresLoss> p(LeastSquaresLoss(inst.data), 0.05 + 0.2 * rng.uniform01());
            // curvature pairs from a short solver run so H is a genuine LBFGS matrix
            LbfgsState state(m, mem);
            Vector x = Vector::Zero(m), g, g2;
            p.smooth(x, g);
            for (int s = 0; s < mem; ++s) {
                Vector x2 = x;
                for (Index i = 0; i < m; ++i) x2[i] += 0.5 * rng.normal();
                p.smooth(x2, g2);
                state.push_pair(x2 - x, g2 - g);
                x = x2;
                g = g2;
            }
            state.refresh();
            for (Index i = 0; i < m; ++i)
                if (rng.uniform01() < 0.3) x[i] = 0.0;
            const double f = p.smooth(x, g);
            const QuadModel model(x, g, f, p.lambda, state);
            SplitMix64 r(rng.next());
            const auto rep = rcd(model, all_indices(m), 1 + static_cast<std::size_t>(rng.uniform_index(4 * m)), r);
            const auto phi = theory::phi_gap(model, rep.point);
            const auto cert = theory::eta_certificate(model, rep.point, phi.upper, theory::eigen_bounds(model).M);
            held += cert.holds;
            if (!cert.holds && first_failure.empty())
                first_failure = " first_failure=trial " + std::to_string(t) + " eta=" +
                                detail::format_double(cert.eta_norm) + " bound=" + detail::format_double(cert.bound);
        }
        out.push_back(result(S, "eta_certificate", held == 100, held, 100.0, hex(opt.seed),
                             "100 random rcd partial solves, generator seed " + std::to_string(opt.seed) +
                                 first_failure));
    }

    // Inner step counts equal the budget formula.
    {
        SolverConfig c;
        c.tol = 1e-7;
        c.max_iter = 300;
        c.seed = opt.seed;
        const auto r = solve(lasso.problem, c);
        const auto v = theory::budget_fidelity_audit(r.trace, static_cast<std::size_t>(c.memory));
        out.push_back(result(S, "budget_fidelity", v == 0, double(v), 0.0, lasso.hash, lasso.id));
    }
    return out;
}

// -----------------------------------------------------------------------
// Rate-level checks
// -----------------------------------------------------------------------

inline std::vector<CheckResult> rate_suite(const Options& opt)
{
    constexpr const char* S = "rate";
    std::vector<CheckResult> out;
    const Index n = std::min<Index>(opt.size_cap, 100);
    const auto lasso = make_lasso(n, 2 * n, opt.seed);
    const auto ref = reference_ista(lasso.problem, 1e-11);
    const double fstar = ref.F;
    out.push_back(result(S, "reference_certified", ref.certified, ref.subgrad_inf, 1e-11, lasso.hash, lasso.id));

    auto envelope_check = [&](const std::string& name, const theory::EnvelopeReport& e, const std::string& extra) {
        out.push_back(result(S, name, e.pass, e.growth, 0.05, lasso.hash,
                             lasso.id + " envelope=" + detail::format_double(e.envelope) +
                                 " midpoint=" + detail::format_double(e.midpoint) + extra));
    };

    // (a) exact subproblem solves
    theory::TheoryContext ectx;
    ectx.sigma = std::numeric_limits<double>::infinity();
    {
        SolverConfig c;
        c.inner = InnerKind::exact;
        c.exact_tol = 1e-20;
        c.fstar = fstar;
        c.fstar_rel_tol = 1e-12;
        c.tol = 0.0;
        c.max_iter = 200;
        double D = 0.0;
        const auto r = solve(lasso.problem, c, [&](const StepView& v) {
            const auto eb = theory::eigen_bounds(v.model);
            ectx.sigma = std::min(ectx.sigma, eb.sigma);
            ectx.M = std::max(ectx.M, eb.M);
            D = std::max(D, (v.model.base() - ref.x).norm());
        });
        envelope_check("envelope[exact]", theory::rate_envelope(r.trace, fstar),
                       " rows=" + std::to_string(r.trace.size()));
        ectx.rho = c.rho;
        ectx.L_g = lasso.problem.lambda * std::sqrt(static_cast<double>(n));
        ectx.D = std::max(D, (r.x - ref.x).norm());
        const double C = theory::exact_rate_constant(ectx);
        double worst = 0.0;
        for (std::size_t k = 1; k < r.trace.size(); ++k)
            worst = std::max(worst, static_cast<double>(k) * (r.trace[k].F - fstar) / C);
        out.push_back(result(S, "exact_rate_constant", worst <= 1.0, worst, 1.0, lasso.hash,
                             lasso.id + " C=" + detail::format_double(C) + " (max k gap / C)"));
    }

    // (b) seed-averaged rcd with the default budget
    {
        std::vector<std::vector<IterationRecord>> traces;
        for (int s = 0; s < opt.seeds; ++s) {
            SolverConfig c;
            c.seed = SplitMix64::derive(opt.seed, static_cast<std::uint64_t>(s));
            c.fstar = fstar;
            c.fstar_rel_tol = 1e-10;
            c.tol = 0.0;
            c.max_iter = 400;
            traces.push_back(solve(lasso.problem, c).trace);
        }
        const auto mean = theory::mean_objective(traces);
        std::size_t rises = 0;
        for (std::size_t k = 1; k < mean.size(); ++k) rises += mean[k] > mean[k - 1];
        envelope_check("envelope[rcd mean of " + std::to_string(opt.seeds) + " seeds]",
                       theory::rate_envelope(mean, fstar), " length=" + std::to_string(mean.size()));
        out.push_back(result(S, "mean_gap_nonincreasing", rises == 0, double(rises), 0.0, lasso.hash, lasso.id));
    }

    // (c) ISTA special case against 2 ||x0 - x*||^2 L with a factor-4 margin
    {
        const double L = lipschitz_estimate(lasso.problem).value;
        SolverConfig c;
        c.inner = InnerKind::ista;
        c.memory = 0;
        c.base_gamma = L;
        c.rho = 1.0;
        c.budget = {BudgetMode::linear, 0.0, 1.0};
        c.tol = 0.0;
        c.fstar = fstar;
        c.fstar_rel_tol = 1e-12;
        c.max_iter = 1000;
        const auto r = solve(lasso.problem, c);
        const auto e = theory::rate_envelope(r.trace, fstar);
        const double bound = 4.0 * 2.0 * ref.x.squaredNorm() * L;
        out.push_back(result(S, "envelope[ista] <= 4 x 2||x0-x*||^2 L", e.envelope <= bound, e.envelope, bound,
                             lasso.hash, lasso.id + " rows=" + std::to_string(r.trace.size())));
    }

    // (d) inexact-rate constants dominate the measured gaps
    {
        SolverConfig c;
        c.seed = opt.seed;
        c.fstar = fstar;
        c.fstar_rel_tol = 1e-10;
        c.tol = 0.0;
        c.max_iter = 400;
        theory::TheoryContext ctx;
        ctx.sigma = std::numeric_limits<double>::infinity();
        double a = 0.0, D = 0.0;
        double ck_min = std::numeric_limits<double>::infinity();
        std::vector<theory::EigenBounds> ebs;
        const auto r = solve(lasso.problem, c, [&](const StepView& v) {
            const auto eb = theory::eigen_bounds(v.model);
            ebs.push_back(eb);
            ctx.sigma = std::min(ctx.sigma, eb.sigma);
            ctx.M = std::max(ctx.M, eb.M);
            D = std::max(D, (v.model.base() - ref.x).norm());
            const double phi = theory::phi_gap(v.model, v.next_point).upper;
            const double k = static_cast<double>(v.k + 1);
            a = std::max(a, k * std::sqrt(std::max(phi, 0.0)));
        });
        ctx.rho = c.rho;
        ctx.L_f = lipschitz_estimate(lasso.problem).value;
        ctx.L_g = lasso.problem.lambda * std::sqrt(static_cast<double>(n));
        ctx.D = std::max(D, (r.x - ref.x).norm());
        ctx.a = a;
        const auto rc = theory::constants_bc(ctx);
        for (const auto& eb : ebs)
            ck_min = std::min(ck_min, theory::constants_bk_ck(eb.sigma, eb.M, ctx.rho, ctx.L_g, ctx.D, rc.theta).c);
        double worst = 0.0;
        for (std::size_t k = 2; k < r.trace.size(); ++k)
            worst = std::max(worst, (r.trace[k].F - fstar) / theory::inexact_rate_bound(rc, a, k));
        out.push_back(result(S, "inexact_rate_bound_dominates", worst <= 1.0, worst, 1.0, lasso.hash,
                             lasso.id + " b=" + detail::format_double(rc.b) + " c=" + detail::format_double(rc.c) +
                                 " theta=" + detail::format_double(rc.theta) + " a=" + detail::format_double(a) +
                                 " min_c_k=" + detail::format_double(ck_min) + " (max gap / bound)"));
    }
    return out;
}

// -----------------------------------------------------------------------
// Audit of a stored trace
// -----------------------------------------------------------------------

inline std::vector<CheckResult> audit_trace(const TraceFile& t, const std::string& source)
{
    constexpr const char* S = "audit";
    std::vector<CheckResult> out;
    const auto& h = t.header;
    auto num = [&](const char* key, double fallback) {
        double v;
        const std::string s = h.get(key);
        return !s.empty() && detail::parse_double(s, v) ? v : fallback;
    };
    const bool armijo = h.get("accept") == "armijo";
    const double coef = armijo ? num("armijo_sigma", 0.001) : num("rho", 0.01);
    const std::string hash = h.get("dataset_hash", "unknown");

    const auto& rows = t.rows;
    // first offending row, as a counterexample
    auto first_bad = [&](auto&& bad, auto&& describe) -> std::string {
        for (std::size_t k = 1; k < rows.size(); ++k)
            if (bad(k)) return source + " first at k=" + std::to_string(rows[k].k) + " " + describe(k);
        return source;
    };
    auto F_pair = [&](std::size_t k) {
        return "F[k-1]=" + detail::format_double(rows[k - 1].F) + " F[k]=" + detail::format_double(rows[k].F) +
               " model_decrease=" + detail::format_double(rows[k].model_decrease);
    };

    const auto v = theory::sufficient_decrease_audit(rows, coef);
    out.push_back(result(S, "sufficient_decrease", v == 0, double(v), 0.0, hash,
                         first_bad(
                             [&](std::size_t k) {
                                 return theory::sufficient_decrease_audit(
                                            std::span<const IterationRecord>(rows).subspan(k - 1, 2), coef) > 0;
                             },
                             F_pair)));

    std::size_t rises = 0, order = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        order += rows[k].k != k;
        if (k > 0) rises += rows[k].F > rows[k - 1].F;
    }
    out.push_back(result(S, "monotone_objective", rises == 0, double(rises), 0.0, hash,
                         first_bad([&](std::size_t k) { return rows[k].F > rows[k - 1].F; }, F_pair)));
    out.push_back(result(S, "row_order", order == 0 && !rows.empty(), double(order), 0.0, hash,
                         rows.empty() ? source + " no rows" : source));

    if (h.get("inner") == "rcd" && h.get("budget") == "paper" && !armijo) {
        const auto mem = static_cast<std::size_t>(num("memory", 10.0));
        const auto b = theory::budget_fidelity_audit(rows, mem);
        auto expected = [&](std::size_t k) { return compute_budget(rows[k].k - 1, mem, rows[k].ws_size); };
        out.push_back(result(S, "budget_fidelity", b == 0, double(b), 0.0, hash,
                             first_bad([&](std::size_t k) { return rows[k].inner_steps != expected(k); },
                                       [&](std::size_t k) {
                                           return "inner_steps=" + std::to_string(rows[k].inner_steps) +
                                                  " expected=" + std::to_string(expected(k));
                                       })));
    }
    return out;
}

} // namespace proxqn::verify
