#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

#include <proxqn/trace_io.hpp>

#include <sstream>

using namespace proxqn;

namespace {

std::vector<IterationRecord> sample_trace()
{
    const auto inst = synthetic::lasso(40, 20, 0.3, 0.1, 4);
    const CompositeProblem<LeastSquaresLoss> p(LeastSquaresLoss(inst.data), 0.05);
    SolverConfig c;
    c.fstar = 1.0;
    c.max_iter = 15;
    return solve(p, c).trace;
}

} // namespace

TEST_CASE("budget strings", "[trace]")
{
    CHECK(parse_budget("paper").mode == BudgetMode::paper);
    const auto r = parse_budget("linear:3,5");
    CHECK(r.mode == BudgetMode::linear);
    CHECK(r.slope == 3.0);
    CHECK(r.intercept == 5.0);
    CHECK(parse_budget(budget_to_string(r)).intercept == 5.0);
    CHECK_THROWS_AS(parse_budget("linear:3"), Error);
    CHECK_THROWS_AS(parse_budget("geometric"), Error);
}

TEST_CASE("header echoes the configuration", "[trace]")
{
    const auto inst = synthetic::lasso(10, 5, 0.3, 0.1, 4);
    const auto h = make_header(SolverConfig{}, "lasso", 0.5, *inst.data);
    CHECK(h.get("rho") == "0.01");
    CHECK(h.get("beta") == "0.5");
    CHECK(h.get("mu_bar") == "1");
    CHECK(h.get("memory") == "10");
    CHECK(h.get("rng") == "splitmix64");
    CHECK(h.get("budget") == "paper");
    CHECK(h.get("dataset_hash").size() == 16);
}

TEST_CASE("CSV trace round trip", "[trace]")
{
    const auto trace = sample_trace();
    const auto inst = synthetic::lasso(10, 5, 0.3, 0.1, 4);
    auto h = make_header(SolverConfig{}, "lasso", 0.5, *inst.data);
    h.set("status", "max_iter");
    std::stringstream ss;
    write_trace_csv(ss, h, trace);
    const std::string text = ss.str();
    CHECK(text.find("k,F,rel_gap,subgrad_inf,gamma_or_mu,backtracks,inner_steps,ws_size,nnz,elapsed_seconds,"
                    "model_decrease\n") != std::string::npos);
    const auto back = read_trace(ss);
    CHECK(back.header.get("status") == "max_iter");
    REQUIRE(back.rows.size() == trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        CHECK(back.rows[i].F == trace[i].F);
        CHECK(back.rows[i].model_decrease == trace[i].model_decrease);
        CHECK(back.rows[i].inner_steps == trace[i].inner_steps);
        CHECK(back.rows[i].rel_gap == trace[i].rel_gap);
    }
}

TEST_CASE("JSONL trace round trip", "[trace]")
{
    auto trace = sample_trace();
    trace[0].rel_gap = std::numeric_limits<double>::quiet_NaN();
    TraceHeader h;
    h.set("loss", "lasso");
    std::stringstream ss;
    write_trace_jsonl(ss, h, trace);
    const auto back = read_trace(ss);
    CHECK(back.header.get("loss") == "lasso");
    REQUIRE(back.rows.size() == trace.size());
    CHECK(std::isnan(back.rows[0].rel_gap));
    for (std::size_t i = 0; i < trace.size(); ++i) CHECK(back.rows[i].F == trace[i].F);
}

TEST_CASE("malformed traces", "[trace]")
{
    std::istringstream no_columns("# a=b\n0,1,2\n");
    CHECK_THROWS_AS(read_trace(no_columns), ParseError);
    std::istringstream short_row("k,F,rel_gap,subgrad_inf,gamma_or_mu,backtracks,inner_steps,ws_size,nnz,"
                                 "elapsed_seconds,model_decrease\n0,1,2\n");
    CHECK_THROWS_AS(read_trace(short_row), ParseError);
    std::istringstream bad_json("{\"header\":{}}\n{oops\n");
    CHECK_THROWS_AS(read_trace(bad_json), ParseError);
}

TEST_CASE("oracle file round trip", "[trace]")
{
    OracleFile o;
    o.fstar = 0.123456789012345678;
    o.certified = true;
    o.subgrad_inf = 1e-11;
    o.steps = 42;
    o.lambda = 0.5;
    o.loss = "lasso";
    o.x = Eigen::Vector3d(1.0, 0.0, -2.5);
    std::stringstream ss;
    write_oracle(ss, o);
    const auto b = read_oracle(ss);
    CHECK(b.fstar == o.fstar);
    CHECK(b.certified);
    CHECK(b.steps == 42);
    CHECK(b.x == o.x);
    std::istringstream bad("{\"certified\": true}");
    CHECK_THROWS_AS(read_oracle(bad), Error);
}
