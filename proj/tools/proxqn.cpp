// proxqn: solve, reference-optimum and verification front end.

#include <proxqn/outer.hpp>
#include <proxqn/problem.hpp>
#include <proxqn/reference.hpp>
#include <proxqn/trace_io.hpp>
#include <proxqn/verify.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

using namespace proxqn;

namespace {

enum Exit { ok = 0, input_error = 1, not_converged = 2, backtrack_failure = 3, violation = 4 };

struct DataArgs
{
    std::string loss = "logistic";
    std::string path;
    std::string format = "auto";
    bool header = false;
    Index features = 0;
    double lambda = 0.0;
};

void add_data_flags(CLI::App* cmd, DataArgs& a)
{
    cmd->add_option("--loss", a.loss, "Smooth loss")->check(CLI::IsMember({"logistic", "lasso"}))->capture_default_str();
    cmd->add_option("--data", a.path, "Dataset file (libsvm or dense CSV)")->required();
    cmd->add_option("--data-format", a.format, "auto picks csv for *.csv, libsvm otherwise")
        ->check(CLI::IsMember({"auto", "libsvm", "csv"}))
        ->capture_default_str();
    cmd->add_flag("--header", a.header, "CSV input has a header row");
    cmd->add_option("--features", a.features, "Override the feature count (libsvm)");
    cmd->add_option("--lambda", a.lambda, "L1 weight")->required()->check(CLI::NonNegativeNumber);
}

std::shared_ptr<const Dataset> load_data(const DataArgs& a)
{
    const bool lasso = a.loss == "lasso";
    std::string fmt = a.format;
    if (fmt == "auto") fmt = std::filesystem::path(a.path).extension() == ".csv" ? "csv" : "libsvm";
    Dataset d;
    if (fmt == "csv") {
        if (!lasso) throw Error("dense CSV input carries regression targets; use --loss lasso");
        d = load_dense_csv(a.path, {a.header});
    } else {
        d = load_libsvm(a.path, {lasso ? TaskKind::regression : TaskKind::classification, a.features});
    }
    if (d.rows == 0) throw Error("dataset has no samples");
    if (d.cols == 0) throw Error("dataset has no features");
    return std::make_shared<const Dataset>(std::move(d));
}

template <class F>
int with_problem(const DataArgs& a, F&& body)
{
    const auto data = load_data(a);
    if (a.loss == "lasso") return body(CompositeProblem<LeastSquaresLoss>(LeastSquaresLoss(data), a.lambda), *data);
    return body(CompositeProblem<LogisticLoss>(LogisticLoss(data), a.lambda), *data);
}

std::ostream& open_out(const std::string& path, std::ofstream& file)
{
    if (path.empty() || path == "-") return std::cout;
    file.open(path);
    if (!file) throw Error("cannot open output " + path);
    return file;
}

std::string hash_string(const Dataset& d) { return verify::hex(d.fingerprint()); }

// --fstar accepts a number or the path of an oracle file
double parse_fstar(const std::string& s)
{
    double v;
    if (detail::parse_double(s, v)) return v;
    return load_oracle(s).fstar;
}

// -----------------------------------------------------------------------

struct SolveArgs
{
    DataArgs data;
    SolverConfig config;
    std::string inner = "rcd";
    std::string accept = "prox";
    std::string schedule = "gamma";
    std::string budget = "paper";
    std::string fstar;
    std::string out;
    std::string format = "csv";
};

int run_solve(const SolveArgs& a)
{
    SolverConfig c = a.config;
    c.inner = a.inner == "rcd" ? InnerKind::rcd : a.inner == "cyclic" ? InnerKind::cyclic
                                              : a.inner == "ista"   ? InnerKind::ista
                                                                    : InnerKind::exact;
    c.acceptance = a.accept == "armijo" ? AcceptanceKind::armijo : AcceptanceKind::prox_update;
    c.schedule = a.schedule == "mu" ? ProxSchedule::mu_schedule : ProxSchedule::gamma_doubling;
    c.budget = parse_budget(a.budget);
    if (!a.fstar.empty()) c.fstar = parse_fstar(a.fstar);
    c.validate();

    return with_problem(a.data, [&](const auto& problem, const Dataset& data) {
        const auto result = solve(problem, c);
        auto header = make_header(c, a.data.loss, a.data.lambda, data);
        header.set("status", std::string(to_string(result.status)));
        std::ofstream file;
        std::ostream& out = open_out(a.out, file);
        if (a.format == "jsonl") write_trace_jsonl(out, header, result.trace);
        else write_trace_csv(out, header, result.trace);
        out.flush();

        const auto& last = result.trace.back();
        std::cerr << "status=" << to_string(result.status) << " iterations=" << last.k
                  << " F=" << detail::format_double(last.F) << " subgrad_inf=" << detail::format_double(last.subgrad_inf)
                  << " nnz=" << last.nnz << '\n';
        if (!result.message.empty()) std::cerr << "note: " << result.message << '\n';
        switch (result.status) {
        case SolveStatus::converged:
        case SolveStatus::fstar_reached: return ok;
        case SolveStatus::max_iter: return not_converged;
        case SolveStatus::backtrack_failure: return backtrack_failure;
        case SolveStatus::oracle_failure: return input_error;
        }
        return input_error;
    });
}

// -----------------------------------------------------------------------

struct OracleArgs
{
    DataArgs data;
    double tol = 1e-10;
    double max_steps = 1e6;
    std::string out;
};

int run_oracle(const OracleArgs& a)
{
    return with_problem(a.data, [&](const auto& problem, const Dataset& data) {
        const auto ref = reference_ista(problem, a.tol, static_cast<std::size_t>(a.max_steps));
        OracleFile o;
        o.fstar = ref.F;
        o.certified = ref.certified;
        o.subgrad_inf = ref.subgrad_inf;
        o.steps = ref.steps;
        o.lambda = problem.lambda;
        o.loss = a.data.loss;
        o.dataset_hash = hash_string(data);
        o.x = ref.x;
        std::ofstream file;
        write_oracle(open_out(a.out, file), o);
        std::cerr << "fstar=" << detail::format_double(ref.F) << " steps=" << ref.steps
                  << " subgrad_inf=" << detail::format_double(ref.subgrad_inf)
                  << (ref.certified ? " certified" : " NOT certified") << '\n';
        return ref.certified ? ok : not_converged;
    });
}

// -----------------------------------------------------------------------

struct VerifyArgs
{
    std::string suite = "all";
    verify::Options options;
    std::string out;
    std::vector<std::string> audit;
};

int run_verify(const VerifyArgs& a, bool suite_given)
{
    std::vector<verify::CheckResult> results;
    for (const auto& path : a.audit) {
        auto r = verify::audit_trace(load_trace(path), path);
        results.insert(results.end(), r.begin(), r.end());
    }
    const bool run_suites = suite_given || a.audit.empty();
    if (run_suites && (a.suite == "lemmas" || a.suite == "all")) {
        auto r = verify::lemmas_suite(a.options);
        results.insert(results.end(), r.begin(), r.end());
    }
    if (run_suites && (a.suite == "rate" || a.suite == "all")) {
        auto r = verify::rate_suite(a.options);
        results.insert(results.end(), r.begin(), r.end());
    }
    std::ofstream file;
    verify::write_jsonl(open_out(a.out, file), results);
    const auto failures = verify::count_failures(results);
    for (const auto& r : results)
        if (!r.pass) std::cerr << "VIOLATION " << r.suite << '/' << r.check << ": " << r.detail << '\n';
    std::cerr << results.size() - failures << '/' << results.size() << " checks passed\n";
    return failures == 0 ? ok : violation;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Proximal quasi-Newton solver for L1-regularized problems"};
    app.set_version_flag("--version", PROXQN_VERSION);
    app.require_subcommand(1);

    SolveArgs sa;
    auto* solve_cmd = app.add_subcommand("solve", "Run the solver and write a convergence trace");
    add_data_flags(solve_cmd, sa.data);
    solve_cmd->add_option("--rho", sa.config.rho, "Sufficient-decrease fraction")->capture_default_str();
    solve_cmd->add_option("--beta", sa.config.beta, "Backtracking factor")->capture_default_str();
    solve_cmd->add_option("--mu-bar", sa.config.mu_bar, "Initial prox parameter")->capture_default_str();
    solve_cmd->add_option("--memory", sa.config.memory, "LBFGS memory (0 disables pairs)")->capture_default_str();
    solve_cmd->add_option("--base-gamma", sa.config.base_gamma, "Curvature scale when no pairs are stored")
        ->capture_default_str();
    solve_cmd->add_option("--inner", sa.inner, "Subproblem solver")
        ->check(CLI::IsMember({"rcd", "cyclic", "ista", "exact"}))
        ->capture_default_str();
    solve_cmd->add_option("--accept", sa.accept, "Acceptance rule")
        ->check(CLI::IsMember({"prox", "armijo"}))
        ->capture_default_str();
    solve_cmd->add_option("--schedule", sa.schedule, "Curvature inflation on backtrack: gamma doubling or mu")
        ->check(CLI::IsMember({"gamma", "mu"}))
        ->capture_default_str();
    solve_cmd->add_option("--armijo-sigma", sa.config.armijo_sigma, "Armijo constant")->capture_default_str();
    solve_cmd->add_option("--budget", sa.budget, "paper | linear:a,b")->capture_default_str();
    solve_cmd->add_option("--tol", sa.config.tol, "Stop when the subgradient inf-norm is below")->capture_default_str();
    solve_cmd->add_option("--max-iter", sa.config.max_iter)->capture_default_str();
    solve_cmd->add_option("--max-backtracks", sa.config.max_backtracks)->capture_default_str();
    solve_cmd->add_option("--seed", sa.config.seed)->capture_default_str();
    solve_cmd->add_option("--fstar", sa.fstar, "Reference optimum: a number or an oracle file");
    solve_cmd->add_option("--out", sa.out, "Trace file (default stdout)");
    solve_cmd->add_option("--format", sa.format)->check(CLI::IsMember({"csv", "jsonl"}))->capture_default_str();

    OracleArgs oa;
    auto* oracle_cmd = app.add_subcommand("oracle", "Compute a certified reference optimum by long ISTA");
    add_data_flags(oracle_cmd, oa.data);
    oracle_cmd->add_option("--tol", oa.tol, "Subgradient inf-norm certificate")->capture_default_str();
    oracle_cmd->add_option("--max-steps", oa.max_steps)->capture_default_str();
    oracle_cmd->add_option("--out", oa.out, "Output file (default stdout)");

    VerifyArgs va;
    auto* verify_cmd = app.add_subcommand("verify", "Run the theory verification suites");
    auto* suite_opt = verify_cmd->add_option("--suite", va.suite)
                          ->check(CLI::IsMember({"lemmas", "rate", "all"}))
                          ->capture_default_str();
    verify_cmd->add_option("--seeds", va.options.seeds, "Seeds in the ensemble checks")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    verify_cmd->add_option("--size-cap", va.options.size_cap, "Largest problem dimension")
        ->check(CLI::Range(4, 2000))
        ->capture_default_str();
    verify_cmd->add_option("--seed", va.options.seed, "Generator seed")->capture_default_str();
    verify_cmd->add_option("--out", va.out, "Report file (default stdout)");
    verify_cmd->add_option("--audit-trace", va.audit, "Audit a stored trace instead of (or besides) the suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : input_error;
    }

    try {
        if (*solve_cmd) return run_solve(sa);
        if (*oracle_cmd) return run_oracle(oa);
        if (*verify_cmd) return run_verify(va, suite_opt->count() > 0);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return input_error;
    }
    return input_error;
}
