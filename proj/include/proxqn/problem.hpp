#pragma once

#include <proxqn/common.hpp>

#include <algorithm>
#include <charconv>
#include <concepts>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace proxqn {

// =======================================================================
// Dataset
// =======================================================================

enum class TaskKind { classification, regression };

struct Entry
{
    Index row;
    Index col;
    double value;

    friend bool operator==(const Entry&, const Entry&) = default;
};

/*
 * Sparse sample-by-feature matrix stored as row-major triplets plus a
 * labels vector. Immutable once finalize() has built the row offsets.
 */
struct Dataset
{
    Index rows = 0;
    Index cols = 0;
    std::vector<Entry> entries;
    std::vector<double> labels;
    std::vector<std::size_t> row_start;
    TaskKind task = TaskKind::regression;

    std::size_t nnz() const noexcept { return entries.size(); }

    void finalize()
    {
        std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        row_start.assign(static_cast<std::size_t>(rows) + 1, 0);
        for (const auto& e : entries) {
            if (e.row < 0 || e.row >= rows) throw Error("dataset: sample index out of range");
            if (e.col < 0 || e.col >= cols) throw Error("dataset: feature index out of range");
            ++row_start[static_cast<std::size_t>(e.row) + 1];
        }
        for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) row_start[r + 1] += row_start[r];
        if (labels.size() != static_cast<std::size_t>(rows)) throw Error("dataset: label count differs from row count");
        if (task == TaskKind::classification) {
            for (double y : labels) {
                if (y != 1.0 && y != -1.0) throw Error("dataset: classification labels must be +1 or -1");
            }
        }
    }

    double row_dot(Index r, const Vector& w) const noexcept
    {
        double s = 0.0;
        for (auto k = row_start[r]; k < row_start[r + 1]; ++k) s += entries[k].value * w[entries[k].col];
        return s;
    }

    void add_row_scaled(Index r, double alpha, Vector& out) const noexcept
    {
        for (auto k = row_start[r]; k < row_start[r + 1]; ++k) out[entries[k].col] += alpha * entries[k].value;
    }

    Matrix to_dense() const
    {
        Matrix A = Matrix::Zero(rows, cols);
        for (const auto& e : entries) A(e.row, e.col) += e.value;
        return A;
    }

    static Dataset from_dense(const Matrix& A, const Vector& b, TaskKind task = TaskKind::regression)
    {
        Dataset d;
        d.rows = A.rows();
        d.cols = A.cols();
        d.task = task;
        d.entries.reserve(static_cast<std::size_t>(A.size()));
        for (Index i = 0; i < A.rows(); ++i)
            for (Index j = 0; j < A.cols(); ++j) d.entries.push_back({i, j, A(i, j)});
        d.labels.assign(b.data(), b.data() + b.size());
        d.finalize();
        return d;
    }

    std::uint64_t fingerprint() const noexcept
    {
        std::uint64_t h = fnv1a(&rows, sizeof rows);
        h = fnv1a(&cols, sizeof cols, h);
        for (const auto& e : entries) {
            h = fnv1a(&e.row, sizeof e.row, h);
            h = fnv1a(&e.col, sizeof e.col, h);
            h = fnv1a(&e.value, sizeof e.value, h);
        }
        for (double y : labels) h = fnv1a(&y, sizeof y, h);
        return h;
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) noexcept
{
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view s, double& out) noexcept
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end && !s.empty();
}

inline bool parse_index(std::string_view s, long long& out) noexcept
{
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end && !s.empty();
}

inline std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

struct LibsvmOptions
{
    TaskKind task = TaskKind::classification;
    Index features = 0; // 0: max index seen
};

// Label sets {-1,+1}, {0,1} and {1,2} map onto {-1,+1}.
inline void normalize_binary_labels(std::vector<double>& labels)
{
    auto all_in = [&](double a, double b) {
        return std::all_of(labels.begin(), labels.end(), [&](double y) { return y == a || y == b; });
    };
    if (all_in(-1.0, 1.0)) return;
    double neg = 0.0;
    if (all_in(0.0, 1.0)) neg = 0.0;
    else if (all_in(1.0, 2.0)) neg = 1.0;
    else throw Error("libsvm: labels are not binary ({-1,+1}, {0,1} or {1,2})");
    for (double& y : labels) y = (y == neg) ? -1.0 : 1.0;
}

inline Dataset parse_libsvm(std::istream& in, const LibsvmOptions& opt = {})
{
    Dataset d;
    d.task = opt.task;
    Index max_col = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = line;
        if (auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
        sv = detail::trim(sv);
        if (sv.empty()) continue;

        std::size_t pos = sv.find_first_of(" \t");
        double label;
        if (!detail::parse_double(sv.substr(0, pos), label)) throw ParseError("bad label", lineno);
        const Index row = d.rows++;
        d.labels.push_back(label);

        long long prev = 0;
        while (pos != std::string_view::npos) {
            sv = detail::trim(sv.substr(pos));
            if (sv.empty()) break;
            pos = sv.find_first_of(" \t");
            const auto tok = sv.substr(0, pos);
            const auto colon = tok.find(':');
            long long idx;
            double val;
            if (colon == std::string_view::npos || !detail::parse_index(tok.substr(0, colon), idx)
                || !detail::parse_double(tok.substr(colon + 1), val))
                throw ParseError("bad feature token '" + std::string(tok) + "'", lineno);
            if (idx < 1) throw ParseError("feature indices are 1-based", lineno);
            if (idx <= prev) throw ParseError("feature indices must be strictly increasing", lineno);
            prev = idx;
            d.entries.push_back({row, static_cast<Index>(idx - 1), val});
            max_col = std::max<Index>(max_col, static_cast<Index>(idx));
        }
    }
    if (opt.features > 0) {
        if (opt.features < max_col)
            throw Error("libsvm: feature override " + std::to_string(opt.features) + " is below max index "
                        + std::to_string(max_col));
        d.cols = opt.features;
    } else {
        d.cols = max_col;
    }
    if (d.task == TaskKind::classification) normalize_binary_labels(d.labels);
    d.finalize();
    return d;
}

inline Dataset load_libsvm(const std::string& path, const LibsvmOptions& opt = {})
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return parse_libsvm(in, opt);
}

inline void write_libsvm(std::ostream& out, const Dataset& d)
{
    for (Index r = 0; r < d.rows; ++r) {
        out << detail::format_double(d.labels[r]);
        for (auto k = d.row_start[r]; k < d.row_start[r + 1]; ++k)
            out << ' ' << (d.entries[k].col + 1) << ':' << detail::format_double(d.entries[k].value);
        out << '\n';
    }
}

inline void save_libsvm(const std::string& path, const Dataset& d)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_libsvm(out, d);
}

struct CsvOptions
{
    bool header = false;
};

/// Dense CSV; the last column is the regression target.
inline Dataset parse_dense_csv(std::istream& in, const CsvOptions& opt = {})
{
    Dataset d;
    d.task = TaskKind::regression;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    bool skipped_header = !opt.header;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = detail::trim(line);
        if (sv.empty()) continue;
        if (!skipped_header) {
            skipped_header = true;
            continue;
        }
        row.clear();
        std::size_t start = 0;
        for (;;) {
            const auto comma = sv.find(',', start);
            const auto cell = detail::trim(sv.substr(start, comma == std::string_view::npos ? sv.npos : comma - start));
            double v;
            if (!detail::parse_double(cell, v)) throw ParseError("bad number '" + std::string(cell) + "'", lineno);
            row.push_back(v);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (width == 0) {
            if (row.size() < 2) throw ParseError("need at least one feature column and a target", lineno);
            width = row.size();
        } else if (row.size() != width) {
            throw ParseError("ragged row: expected " + std::to_string(width) + " columns, got "
                                 + std::to_string(row.size()),
                             lineno);
        }
        const Index r = d.rows++;
        for (std::size_t j = 0; j + 1 < width; ++j) d.entries.push_back({r, static_cast<Index>(j), row[j]});
        d.labels.push_back(row.back());
    }
    d.cols = width == 0 ? 0 : static_cast<Index>(width - 1);
    d.finalize();
    return d;
}

inline Dataset load_dense_csv(const std::string& path, const CsvOptions& opt = {})
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return parse_dense_csv(in, opt);
}

// =======================================================================
// Smooth losses
// =======================================================================

/// A smooth loss evaluates f(x) and writes grad f(x) into `grad`.
template <class L>
concept SmoothLoss = requires(const L& loss, const Vector& x, Vector& g) {
    { loss.dim() } -> std::convertible_to<Index>;
    { loss(x, g) } -> std::convertible_to<double>;
};

/// (1/N) sum log(1 + exp(-y_n w'x_n)).
class LogisticLoss
{
public:
    static constexpr std::string_view name = "logistic";

    explicit LogisticLoss(std::shared_ptr<const Dataset> data) : data_(std::move(data))
    {
        if (!data_) throw Error("logistic: null dataset");
        if (data_->task != TaskKind::classification) throw Error("logistic: dataset is not a classification set");
    }

    Index dim() const noexcept { return data_->cols; }
    const Dataset& data() const noexcept { return *data_; }

    double operator()(const Vector& w, Vector& grad) const
    {
        const auto& d = *data_;
        if (d.rows == 0) throw Error("logistic: empty dataset");
        grad.setZero(d.cols);
        double value = 0.0;
        for (Index n = 0; n < d.rows; ++n) {
            const double y = d.labels[n];
            const double z = y * d.row_dot(n, w);
            value += std::log1p(std::exp(-std::abs(z))) + std::max(0.0, -z);
            // sigma(-z) = 1 / (1 + e^z)
            double s;
            if (z >= 0) {
                const double e = std::exp(-z);
                s = e / (1.0 + e);
            } else {
                s = 1.0 / (1.0 + std::exp(z));
            }
            d.add_row_scaled(n, -y * s, grad);
        }
        const double inv = 1.0 / static_cast<double>(d.rows);
        grad *= inv;
        return value * inv;
    }

private:
    std::shared_ptr<const Dataset> data_;
};

/// (1/(2N)) ||Ax - b||^2.
class LeastSquaresLoss
{
public:
    static constexpr std::string_view name = "lasso";

    explicit LeastSquaresLoss(std::shared_ptr<const Dataset> data) : data_(std::move(data))
    {
        if (!data_) throw Error("least squares: null dataset");
    }

    Index dim() const noexcept { return data_->cols; }
    const Dataset& data() const noexcept { return *data_; }

    double operator()(const Vector& x, Vector& grad) const
    {
        const auto& d = *data_;
        if (d.rows == 0) throw Error("least squares: empty dataset");
        grad.setZero(d.cols);
        double value = 0.0;
        for (Index n = 0; n < d.rows; ++n) {
            const double r = d.row_dot(n, x) - d.labels[n];
            value += r * r;
            d.add_row_scaled(n, r, grad);
        }
        const double inv = 1.0 / static_cast<double>(d.rows);
        grad *= inv;
        return 0.5 * value * inv;
    }

private:
    std::shared_ptr<const Dataset> data_;
};

// =======================================================================
// Composite problem F(x) = f(x) + lambda ||x||_1
// =======================================================================

template <SmoothLoss Loss>
struct CompositeProblem
{
    Loss loss;
    double lambda;

    CompositeProblem(Loss l, double lam) : loss(std::move(l)), lambda(lam)
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lambda must be finite and >= 0");
    }

    Index dim() const { return loss.dim(); }

    double smooth(const Vector& x, Vector& grad) const
    {
        const double f = loss(x, grad);
        if (!std::isfinite(f)) throw Error("smooth loss is not finite");
        return f;
    }
};

template <SmoothLoss Loss>
double objective(const CompositeProblem<Loss>& problem, const Vector& x)
{
    if (x.size() != problem.dim()) throw Error("objective: dimension mismatch");
    Vector g;
    return problem.smooth(x, g) + problem.lambda * l1_norm(x);
}

// =======================================================================
// Lipschitz constant of grad f
// =======================================================================

struct LipschitzEstimate
{
    double value = 0.0;
    bool converged = true; // false: Frobenius fallback
};

/// sigma_max(A)^2 / N by power iteration on A'A.
inline LipschitzEstimate spectral_norm_sq_over_n(const Dataset& d, double tol = 1e-8, int max_iter = 1000)
{
    if (d.rows == 0 || d.cols == 0) return {0.0, true};
    Vector v = Vector::Constant(d.cols, 1.0 / std::sqrt(static_cast<double>(d.cols)));
    Vector w(d.cols);
    double est = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        w.setZero();
        for (Index n = 0; n < d.rows; ++n) d.add_row_scaled(n, d.row_dot(n, v), w);
        const double rq = v.dot(w);
        const double nw = w.norm();
        if (nw == 0.0) return {0.0, true};
        v = w / nw;
        if (it > 0 && std::abs(rq - est) <= tol * std::abs(rq)) return {rq / static_cast<double>(d.rows), true};
        est = rq;
    }
    double fro = 0.0;
    for (const auto& e : d.entries) fro += e.value * e.value;
    return {fro / static_cast<double>(d.rows), false};
}

inline LipschitzEstimate lipschitz_estimate(const LeastSquaresLoss& loss) { return spectral_norm_sq_over_n(loss.data()); }

inline LipschitzEstimate lipschitz_estimate(const LogisticLoss& loss)
{
    auto e = spectral_norm_sq_over_n(loss.data());
    e.value *= 0.25;
    return e;
}

template <SmoothLoss Loss>
LipschitzEstimate lipschitz_estimate(const CompositeProblem<Loss>& problem)
{
    return lipschitz_estimate(problem.loss);
}

} // namespace proxqn
