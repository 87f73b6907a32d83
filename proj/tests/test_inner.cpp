#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

#include <proxqn/inner.hpp>
#include <proxqn/theory.hpp>

#include <numeric>

using namespace proxqn;
using Catch::Approx;

namespace {

struct Fixture
{
    LbfgsState state;
    Vector x, g;
    double lam;
    QuadModel model() const { return QuadModel(x, g, 0.3, lam, state); }
};

Fixture random_fixture(SplitMix64& rng, Index n, int m, double lam)
{
    Fixture f{testing::random_state(rng, n, m, m, 0.5, 5.0), testing::random_vector(rng, n),
              testing::random_vector(rng, n), lam};
    for (Index i = 0; i < n; ++i)
        if (rng.uniform01() < 0.5) f.x[i] = 0.0;
    return f;
}

std::vector<Index> all_indices(Index n)
{
    std::vector<Index> ws(static_cast<std::size_t>(n));
    std::iota(ws.begin(), ws.end(), Index{0});
    return ws;
}

} // namespace

TEST_CASE("compute_budget", "[inner][budget]")
{
    CHECK(compute_budget(0, 10, 50) == 50);
    CHECK(compute_budget(25, 10, 40) == 120);
    CHECK(compute_budget(9, 10, 40) == 40);
    CHECK(compute_budget(10, 10, 40) == 80);
    CHECK(compute_budget(7, 10, 40, {BudgetMode::linear, 3.0, 5.0}) == 26);
    CHECK(compute_budget(0, 10, 40, {BudgetMode::linear, 0.5, -3.0}) == 0);
    CHECK(compute_budget(3, 0, 5) == 20);
}

TEST_CASE("rcd basics", "[inner][rcd]")
{
    SplitMix64 rng(1);
    auto fx = random_fixture(rng, 12, 4, 0.2);
    const auto model = fx.model();
    const auto ws = all_indices(12);

    SECTION("budget 0 returns d = 0")
    {
        SplitMix64 r(5);
        const auto rep = rcd(model, ws, 0, r);
        CHECK(rep.direction.isZero(0.0));
        CHECK(rep.q_end == rep.q_start);
        CHECK(rep.steps_taken == 0);
    }
    SECTION("seed determinism")
    {
        SplitMix64 r1(77), r2(77);
        const auto a = rcd(model, ws, 500, r1);
        const auto b = rcd(model, ws, 500, r2);
        CHECK(a.direction == b.direction);
        CHECK(a.point == b.point);
        CHECK(a.q_end == b.q_end);
    }
    SECTION("monotone: one more step never increases Q")
    {
        for (std::size_t b = 0; b < 200; ++b) {
            SplitMix64 r1(9), r2(9);
            const auto lo = rcd(model, ws, b, r1);
            const auto hi = rcd(model, ws, b + 1, r2);
            CHECK(hi.q_end <= lo.q_end + 1e-13 * std::max(1.0, std::abs(lo.q_end)));
            CHECK(hi.q_end <= hi.q_start);
            CHECK(hi.steps_taken <= hi.budget);
        }
    }
    SECTION("Q at the returned point agrees with q_value")
    {
        SplitMix64 r(4);
        const auto rep = rcd(model, ws, 300, r);
        CHECK(rep.q_end == Approx(model.q_value(rep.direction)).epsilon(1e-12));
        CHECK((rep.point - (fx.x + rep.direction)).norm() <= 1e-14);
    }
}

TEST_CASE("rcd with H = I, lambda = 0 converges to -grad on the working set", "[inner][rcd]")
{
    LbfgsState id(6, 5);
    SplitMix64 rng(2);
    const Vector x = testing::random_vector(rng, 6), g = testing::random_vector(rng, 6);
    const QuadModel m(x, g, 0.0, 0.0, id);
    const std::vector<Index> ws{1, 3, 4};
    SplitMix64 r(11);
    const auto rep = rcd(m, ws, 200, r);
    for (Index i = 0; i < 6; ++i) {
        const bool in = i == 1 || i == 3 || i == 4;
        CHECK(rep.direction[i] == Approx(in ? -g[i] : 0.0).margin(1e-14));
    }
}

TEST_CASE("rcd reaches the exact subproblem minimum", "[inner][rcd][oracle]")
{
    SplitMix64 rng(13);
    for (int t = 0; t < 10; ++t) {
        const Index n = 10;
        const int m = 4;
        auto fx = random_fixture(rng, n, m, 0.3);
        const auto model = fx.model();
        const auto oracle = exact_prox_oracle(model, 1e-16);
        SplitMix64 r(static_cast<std::uint64_t>(t));
        const auto rep = rcd(model, all_indices(n), static_cast<std::size_t>(10 * n * m), r);
        CHECK(rep.q_end - oracle.q_value <= 1e-6);
        CHECK(rep.q_end - oracle.q_value >= -1e-12);
    }
}

TEST_CASE("rcd gap decays geometrically in the budget (seed mean)", "[inner][rcd][oracle]")
{
    SplitMix64 rng(21);
    auto fx = random_fixture(rng, 8, 3, 0.25);
    const auto model = fx.model();
    const double qstar = exact_prox_oracle(model, 1e-18).q_value;
    const auto ws = all_indices(8);
    const std::vector<std::size_t> budgets{8, 16, 32, 64, 128};
    std::vector<double> mean(budgets.size(), 0.0);
    for (std::uint64_t seed = 0; seed < 200; ++seed)
        for (std::size_t b = 0; b < budgets.size(); ++b) {
            SplitMix64 r(seed);
            mean[b] += (rcd(model, ws, budgets[b], r).q_end - qstar) / 200.0;
        }
    const double initial = model.Fval() - qstar;
    REQUIRE(initial > 0.0);
    for (std::size_t b = 0; b + 1 < budgets.size(); ++b) CHECK(mean[b + 1] <= mean[b]);
    // Expected-gap bound for uniform coordinate descent: (1 - sigma / (n max_j H_jj))^budget.
    const auto eb = theory::eigen_bounds(model);
    double hmax = 0.0;
    for (Index j = 0; j < 8; ++j) hmax = std::max(hmax, model.hess_diag(j));
    const double rate = 1.0 - eb.sigma / (8.0 * hmax);
    for (std::size_t b = 0; b < budgets.size(); ++b)
        CHECK(mean[b] <= initial * std::pow(rate, static_cast<double>(budgets[b])) + 1e-14);
    // log-gap keeps falling at a non-vanishing rate
    for (std::size_t b = 0; b + 1 < budgets.size(); ++b)
        if (mean[b + 1] > 1e-13) CHECK(mean[b + 1] / mean[b] < 0.9);
}

TEST_CASE("rcd samples the working set uniformly (chi-square)", "[inner][rng]")
{
    std::vector<Index> ws;
    for (Index i = 0; i < 17; ++i) ws.push_back(3 * i + 1);
    SplitMix64 rng(2024);
    std::vector<double> counts(17, 0.0);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) {
        const Index j = draw_coordinate(rng, ws);
        REQUIRE((j - 1) % 3 == 0);
        counts[static_cast<std::size_t>((j - 1) / 3)] += 1.0;
    }
    const double expected = draws / 17.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 39.252); // df = 16, alpha = 0.001
}

TEST_CASE("cyclic_cd", "[inner][cyclic]")
{
    SECTION("passes = 0")
    {
        SplitMix64 rng(1);
        auto fx = random_fixture(rng, 5, 2, 0.1);
        const auto rep = cyclic_cd(fx.model(), all_indices(5), 0);
        CHECK(rep.direction.isZero(0.0));
    }
    SECTION("diagonal H: one pass is exact")
    {
        LbfgsState st(4, 0, 2.0);
        SplitMix64 rng(6);
        const Vector x = testing::random_vector(rng, 4), g = testing::random_vector(rng, 4);
        const QuadModel m(x, g, 0.0, 0.4, st);
        const auto rep = cyclic_cd(m, all_indices(4), 1);
        for (Index i = 0; i < 4; ++i)
            CHECK(rep.point[i] == Approx(soft_threshold(x[i] - g[i] / 2.0, 0.2)).margin(1e-15));
    }
    SECTION("agrees with rcd at equal large step counts")
    {
        SplitMix64 rng(8);
        for (int t = 0; t < 10; ++t) {
            auto fx = random_fixture(rng, 10, 4, 0.3);
            const auto model = fx.model();
            SplitMix64 r(static_cast<std::uint64_t>(t));
            const auto a = rcd(model, all_indices(10), 2000, r);
            const auto b = cyclic_cd(model, all_indices(10), 200);
            CHECK(std::abs(a.q_end - b.q_end) <= 1e-6);
        }
    }
}

TEST_CASE("ista_inner", "[inner][ista]")
{
    SECTION("steps = 0")
    {
        LbfgsState id(3, 1);
        const QuadModel m(Vector::Ones(3), Vector::Ones(3), 0.0, 0.1, id);
        CHECK(ista_inner(m, 0).direction.isZero(0.0));
    }
    SECTION("H = I: one step is the soft-threshold")
    {
        LbfgsState id(5, 1);
        SplitMix64 rng(3);
        const Vector x = testing::random_vector(rng, 5), g = testing::random_vector(rng, 5);
        const QuadModel m(x, g, 0.0, 0.5, id);
        const auto rep = ista_inner(m, 1);
        for (Index i = 0; i < 5; ++i) CHECK(rep.point[i] == soft_threshold(x[i] - g[i], 0.5));
    }
    SECTION("gap decays with ratio <= 1 - sigma / M_est")
    {
        SplitMix64 rng(15);
        for (int t = 0; t < 5; ++t) {
            auto fx = random_fixture(rng, 10, 3, 0.2);
            const auto model = fx.model();
            const double qstar = exact_prox_oracle(model, 1e-20).q_value;
            const double sigma = theory::eigen_bounds(model).sigma;
            const double ratio = 1.0 - sigma / model.curvature_bound();
            const double g0 = model.Fval() - qstar;
            double prev = g0;
            for (std::size_t s = 1; s <= 30; ++s) {
                const double gap = ista_inner(model, s).q_end - qstar;
                CHECK(gap <= std::pow(ratio, static_cast<double>(s)) * g0 + 1e-12);
                CHECK(gap <= prev + 1e-13);
                prev = gap;
            }
        }
    }
}

TEST_CASE("inner outputs carry valid inexactness certificates", "[inner][theory]")
{
    SplitMix64 rng(41);
    for (int t = 0; t < 40; ++t) {
        auto fx = random_fixture(rng, 8, 3, 0.3);
        const auto model = fx.model();
        SplitMix64 r(static_cast<std::uint64_t>(t));
        const auto rep = rcd(model, all_indices(8), 1 + static_cast<std::size_t>(rng.uniform_index(40)), r);
        const auto phi = theory::phi_gap(model, rep.point);
        CHECK(phi.value >= 0.0);
        CHECK(model.model_decrease(rep.direction) <= 1e-12);
        const auto eb = theory::eigen_bounds(model);
        const auto cert = theory::eta_certificate(model, rep.point, phi.upper, eb.M);
        CHECK(cert.holds);
    }
}
