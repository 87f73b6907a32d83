#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

#include <proxqn/model.hpp>
#include <proxqn/reference.hpp>

using namespace proxqn;
using Catch::Approx;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

double dense_q(const Matrix& H, const Vector& x, const Vector& g, double f, double lam, const Vector& d)
{
    return f + g.dot(d) + 0.5 * d.dot(H * d) + lam * (x + d).lpNorm<1>();
}

// Cyclic coordinate minimization on the dense model until no coordinate moves.
Vector dense_cd_minimizer(const Matrix& H, const Vector& x, const Vector& g, double lam)
{
    const Index n = x.size();
    Vector d = Vector::Zero(n);
    for (int sweep = 0; sweep < 200000; ++sweep) {
        double moved = 0.0;
        for (Index j = 0; j < n; ++j) {
            const double rest = g[j] + H.row(j).dot(d) - H(j, j) * d[j];
            const double w = x[j] - rest / H(j, j);
            const double u = soft_threshold(w, lam / H(j, j));
            moved = std::max(moved, std::abs(u - x[j] - d[j]));
            d[j] = u - x[j];
        }
        if (moved <= 1e-15) break;
    }
    return d;
}

double one_d(double a, double b, double c, double lam, double z) { return a * z * z + b * z + lam * std::abs(c + z); }

double golden_section(double a, double b, double c, double lam)
{
    double B = 2.0 * std::abs(c) + std::abs(b) / a + 1.0;
    double lo = -B, hi = B;
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
    double f1 = one_d(a, b, c, lam, x1), f2 = one_d(a, b, c, lam, x2);
    for (int it = 0; it < 300 && hi - lo > 1e-15 * std::max(1.0, B); ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = one_d(a, b, c, lam, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = one_d(a, b, c, lam, x2);
        }
    }
    return 0.5 * (lo + hi);
}

struct SmallModel
{
    LbfgsState state;
    Vector x, g;
    double f;
    double lam;
};

SmallModel random_small(SplitMix64& rng, Index n, double lam)
{
    SmallModel s{testing::random_state(rng, n, 5, 5, 0.5, 4.0), testing::random_vector(rng, n),
                 testing::random_vector(rng, n), rng.normal(), lam};
    for (Index i = 0; i < n; ++i)
        if (rng.uniform01() < 0.4) s.x[i] = 0.0;
    return s;
}

} // namespace

TEST_CASE("q_value", "[model]")
{
    SplitMix64 rng(4);
    SECTION("d = 0 gives F(x) exactly")
    {
        for (int t = 0; t < 20; ++t) {
            auto s = random_small(rng, 7, 0.3);
            const QuadModel m(s.x, s.g, s.f, s.lam, s.state);
            CHECK(m.q_value(Vector::Zero(7)) == m.Fval());
            CHECK(m.model_decrease(Vector::Zero(7)) == 0.0);
        }
    }
    SECTION("H = I, lambda = 0 reduces to the gradient model")
    {
        LbfgsState id(3, 5);
        const Vector x = vec({1, 2, 3}), g = vec({0.5, -1, 2}), d = vec({0.1, 0.2, -0.3});
        const QuadModel m(x, g, 1.5, 0.0, id);
        CHECK(m.q_value(d) == Approx(1.5 + g.dot(d) + 0.5 * d.squaredNorm()).epsilon(1e-15));
    }
    SECTION("matches dense evaluation")
    {
        for (int t = 0; t < 50; ++t) {
            auto s = random_small(rng, 9, 0.7);
            const double shift = rng.uniform01();
            const QuadModel m(s.x, s.g, s.f, s.lam, s.state, shift);
            const Vector d = testing::random_vector(rng, 9);
            const double ref = dense_q(m.dense_hessian(), s.x, s.g, s.f, s.lam, d);
            CHECK(std::abs(m.q_value(d) - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
        }
    }
    SECTION("convex in d (midpoint inequality)")
    {
        for (int t = 0; t < 100; ++t) {
            auto s = random_small(rng, 6, 0.5);
            const QuadModel m(s.x, s.g, s.f, s.lam, s.state);
            const Vector a = testing::random_vector(rng, 6), b = testing::random_vector(rng, 6);
            CHECK(m.q_value(0.5 * (a + b)) <= 0.5 * (m.q_value(a) + m.q_value(b)) + 1e-10);
        }
    }
    SECTION("dimension mismatch")
    {
        LbfgsState st(3, 2);
        CHECK_THROWS_AS(QuadModel(Vector::Zero(2), Vector::Zero(2), 0.0, 1.0, st), Error);
    }
}

TEST_CASE("coordinate_solve", "[model][coordinate]")
{
    CHECK(coordinate_solve(1, 0, 0, 1) == 0.0);
    CHECK(coordinate_solve(2, -4, 0, 2) == Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(coordinate_solve(0, 1, 0, 1), Error);
    CHECK_THROWS_AS(coordinate_solve(-1, 1, 0, 1), Error);
    CHECK(coordinate_solve_point(2, -4, 0, 2) == 0.5);
    CHECK(coordinate_solve_point(1, 0.5, 0.25, 1) == 0.0);

    SECTION("global 1-D minimizer against golden section and perturbations")
    {
        SplitMix64 rng(99);
        for (int t = 0; t < 2000; ++t) {
            const double a = 0.01 + 10.0 * rng.uniform01();
            const double b = 5.0 * rng.normal();
            const double c = rng.uniform01() < 0.2 ? 0.0 : 3.0 * rng.normal();
            const double lam = rng.uniform01() < 0.1 ? 0.0 : 3.0 * rng.uniform01();
            const double z = coordinate_solve(a, b, c, lam);
            const double fz = one_d(a, b, c, lam, z);
            const double zg = golden_section(a, b, c, lam);
            CHECK(fz <= one_d(a, b, c, lam, zg) + 1e-10 * std::max(1.0, std::abs(fz)));
            for (double delta : {1e-6, 1e-3, 0.1, 1.0}) {
                CHECK(fz <= one_d(a, b, c, lam, z + delta));
                CHECK(fz <= one_d(a, b, c, lam, z - delta));
            }
            // one-sided directional derivatives
            const double w = c + z;
            const double plus = 2 * a * z + b + (w > 0 ? lam : w < 0 ? -lam : lam);
            const double minus = -(2 * a * z + b) + (w < 0 ? lam : w > 0 ? -lam : lam);
            CHECK(plus >= -1e-10 * std::max(1.0, std::abs(b)));
            CHECK(minus >= -1e-10 * std::max(1.0, std::abs(b)));
        }
    }
}

TEST_CASE("min_norm_subgradient", "[model]")
{
    CHECK(min_norm_subgradient(vec({0, 0}), vec({0.5, 2}), 1.0) == vec({0, 1}));
    CHECK(min_norm_subgradient(vec({1, 0}), vec({0, 0}), 1.0) == vec({1, 0}));
    CHECK(min_norm_subgradient(vec({-2, 0}), vec({0.5, -3}), 1.0) == vec({-0.5, -2}));

    SECTION("vanishes at a certified small Lasso optimum")
    {
        const auto inst = synthetic::lasso(30, 10, 0.3, 0.1, 3);
        const CompositeProblem<LeastSquaresLoss> p(LeastSquaresLoss(inst.data), 0.1);
        const auto ref = reference_ista(p, 1e-9);
        REQUIRE(ref.certified);
        Vector g;
        p.smooth(ref.x, g);
        CHECK(min_norm_subgradient(ref.x, g, 0.1).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
}

TEST_CASE("exact_prox_oracle", "[model][oracle]")
{
    SECTION("H = I, lambda = 0 gives x - grad")
    {
        LbfgsState id(3, 5);
        const Vector x = vec({1, -2, 0.5}), g = vec({0.25, 1, -2});
        const QuadModel m(x, g, 0.0, 0.0, id);
        const auto r = exact_prox_oracle(m, 1e-14);
        CHECK((r.point - (x - g)).norm() <= 1e-12);
    }
    SECTION("H = I, linear f gives the soft-threshold")
    {
        LbfgsState id(4, 5);
        const Vector x = vec({1, -2, 0.5, 0}), g = vec({0.25, 1, -2, 0.3});
        const QuadModel m(x, g, 0.0, 0.7, id);
        const auto r = exact_prox_oracle(m, 1e-14);
        for (Index i = 0; i < 4; ++i) CHECK(r.point[i] == Approx(soft_threshold(x[i] - g[i], 0.7)).margin(1e-12));
    }
    SECTION("matches a dense exhaustive coordinate solve")
    {
        SplitMix64 rng(7);
        for (int t = 0; t < 30; ++t) {
            auto s = random_small(rng, 8, 0.5);
            const QuadModel m(s.x, s.g, s.f, s.lam, s.state);
            const auto r = exact_prox_oracle(m, 1e-20);
            const Matrix H = m.dense_hessian();
            const Vector d = dense_cd_minimizer(0.5 * (H + H.transpose()), s.x, s.g, s.lam);
            CHECK((r.direction - d).norm() <= 1e-8);
            CHECK(r.gap_bound <= 1e-20);
        }
    }
    SECTION("minimizer beats a grid of candidates")
    {
        SplitMix64 rng(70);
        auto s = random_small(rng, 2, 0.4);
        const QuadModel m(s.x, s.g, s.f, s.lam, s.state);
        const auto r = exact_prox_oracle(m, 1e-16);
        for (double u = -3.0; u <= 3.0; u += 0.05)
            for (double v = -3.0; v <= 3.0; v += 0.05) CHECK(r.q_value <= m.q_value(vec({u, v})) + 1e-12);
    }
    SECTION("iteration cap raises with the best iterate")
    {
        SplitMix64 rng(3);
        auto s = random_small(rng, 6, 0.1);
        const QuadModel m(s.x, s.g, s.f, s.lam, s.state);
        ProxOracleOptions opt;
        opt.max_coord_steps = 6;
        try {
            exact_prox_oracle(m, 1e-30, opt);
            FAIL("expected OracleLimitError");
        } catch (const OracleLimitError& e) {
            CHECK(e.best().point.size() == 6);
        }
        CHECK_THROWS_AS(exact_prox_oracle(m, 0.0), Error);
    }
}
