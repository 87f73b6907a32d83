#pragma once

#include <proxqn/common.hpp>
#include <proxqn/problem.hpp>

#include <memory>

namespace proxqn::synthetic {

struct Instance
{
    std::shared_ptr<const Dataset> data;
    Vector truth;
};

/// Gaussian design, sparse ground truth with ceil(support * n) nonzeros, b = A x + noise.
inline Instance lasso(Index samples, Index features, double support, double noise, std::uint64_t seed)
{
    SplitMix64 rng(seed);
    Matrix A(samples, features);
    for (Index i = 0; i < samples; ++i)
        for (Index j = 0; j < features; ++j) A(i, j) = rng.normal();
    Vector x = Vector::Zero(features);
    const auto k = static_cast<Index>(std::ceil(support * static_cast<double>(features)));
    for (Index c = 0; c < k; ++c) {
        Index j;
        do {
            j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(features)));
        } while (x[j] != 0.0);
        x[j] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * (1.0 + rng.uniform01());
    }
    Vector b = A * x;
    for (Index i = 0; i < samples; ++i) b[i] += noise * rng.normal();
    return {std::make_shared<const Dataset>(Dataset::from_dense(A, b, TaskKind::regression)), x};
}

/// Gaussian features, sparse weights, labels sign(w'x + noise) in {-1, +1}.
inline Instance logistic(Index samples, Index features, double support, double noise, std::uint64_t seed)
{
    SplitMix64 rng(seed);
    Matrix A(samples, features);
    for (Index i = 0; i < samples; ++i)
        for (Index j = 0; j < features; ++j) A(i, j) = rng.normal();
    Vector w = Vector::Zero(features);
    const auto k = static_cast<Index>(std::ceil(support * static_cast<double>(features)));
    for (Index c = 0; c < k; ++c) {
        Index j;
        do {
            j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(features)));
        } while (w[j] != 0.0);
        w[j] = rng.normal();
    }
    Vector y(samples);
    for (Index i = 0; i < samples; ++i) y[i] = (A.row(i).dot(w) + noise * rng.normal()) >= 0.0 ? 1.0 : -1.0;
    return {std::make_shared<const Dataset>(Dataset::from_dense(A, y, TaskKind::classification)), w};
}

} // namespace proxqn::synthetic
