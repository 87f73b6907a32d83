#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace proxqn {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error
{
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line)
    {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// sign(w) * max(|w| - tau, 0)
inline double soft_threshold(double w, double tau) noexcept
{
    if (w > tau) return w - tau;
    if (w < -tau) return w + tau;
    return 0.0;
}

// Fixed summation order; model and objective values must agree bitwise.
inline double l1_norm(const Vector& x) noexcept
{
    double s = 0.0;
    for (Index i = 0; i < x.size(); ++i) s += std::abs(x[i]);
    return s;
}

inline Index count_nonzeros(const Vector& x) noexcept
{
    Index c = 0;
    for (Index i = 0; i < x.size(); ++i) c += (x[i] != 0.0);
    return c;
}

/*
 * SplitMix64: a counter-based 64-bit generator. Output i is a fixed
 * bijective mix of seed + i * golden-gamma, so a (seed, draw count) pair
 * replays identically across platforms and compilers.
 */
class SplitMix64
{
public:
    static constexpr const char* algorithm_id = "splitmix64";

    explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static std::uint64_t mix(std::uint64_t z) noexcept
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Seed for an independent stream keyed by (seed, a, b).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept
    {
        return mix(mix(seed ^ mix(a + 0x9E3779B97F4A7C15ULL)) + b);
    }

    std::uint64_t next() noexcept
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Unbiased integer in [0, bound) by rejection; bound > 0.
    std::uint64_t uniform_index(std::uint64_t bound) noexcept
    {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    double uniform01() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (one sample per call).
    double normal() noexcept
    {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// FNV-1a 64 over raw bytes; used for dataset and instance fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_vector(const Vector& x, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    return fnv1a(x.data(), static_cast<std::size_t>(x.size()) * sizeof(double), h);
}

} // namespace proxqn
