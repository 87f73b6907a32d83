#pragma once

#include <proxqn/common.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <deque>
#include <ostream>

namespace proxqn {

struct CurvaturePair
{
    Vector s; // x^{k+1} - x^k
    Vector t; // grad f(x^{k+1}) - grad f(x^k)
    double st;
};

/*
 * Compact limited-memory BFGS matrix
 *
 *     G = gamma_eff I - Q Qhat,   Q = [gamma S, T],   Qhat = R Q',
 *     R = [[gamma S'S, L], [L', -D]]^{-1},
 *
 * with L the strictly lower triangle of S'T and D = diag(S'T). Pairs are
 * kept oldest first. Q is stored row-major and Qhat column-major so that the
 * per-coordinate rows q_i and columns qhat_i are contiguous: one coordinate
 * product or v-update costs O(m).
 *
 * After push_pair() the caller must invoke refresh() before using products.
 */
class LbfgsState
{
public:
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    static constexpr double max_multiplier = 1073741824.0; // 2^30

    LbfgsState(Index dim, int memory, double base_gamma = 1.0, double curvature_eps = 1e-12)
        : dim_(dim), memory_(memory), base_gamma_(base_gamma), curvature_eps_(curvature_eps), gamma_(base_gamma),
          diag_(Vector::Constant(dim, base_gamma))
    {
        if (dim < 0) throw Error("lbfgs: negative dimension");
        if (memory < 0) throw Error("lbfgs: negative memory");
        if (!(base_gamma > 0.0)) throw Error("lbfgs: base gamma must be positive");
        Q_.resize(dim, 0);
        Qhat_.resize(0, dim);
    }

    Index dim() const noexcept { return dim_; }
    int memory() const noexcept { return memory_; }
    std::size_t pair_count() const noexcept { return pairs_.size(); }
    const std::deque<CurvaturePair>& pairs() const noexcept { return pairs_; }
    /// Columns of Q (2 * pairs used in the last refresh).
    Index rank() const noexcept { return Q_.cols(); }

    double gamma() const noexcept { return gamma_; }
    double gamma_multiplier() const noexcept { return multiplier_; }
    double gamma_eff() const noexcept { return gamma_ * multiplier_; }
    double floor_shift() const noexcept { return floor_shift_; }
    /// Coefficient of I in G, including any eigenvalue-floor shift.
    double identity_weight() const noexcept { return gamma_eff() + floor_shift_; }

    const Vector& diag() const noexcept { return diag_; }
    const RowMatrix& q() const noexcept { return Q_; }
    const Matrix& qhat() const noexcept { return Qhat_; }

    /// Stores (s, t) iff s't > eps ||s|| ||t||. A rejected pair leaves the state untouched.
    bool push_pair(Vector s, Vector t)
    {
        if (s.size() != dim_ || t.size() != dim_) throw Error("lbfgs: pair dimension mismatch");
        if (memory_ == 0) return false;
        const double st = s.dot(t);
        if (!(st > curvature_eps_ * s.norm() * t.norm()) || !std::isfinite(st)) return false;
        if (pairs_.size() == static_cast<std::size_t>(memory_)) pairs_.pop_front();
        pairs_.push_back({std::move(s), std::move(t), st});
        multiplier_ = 1.0;
        return true;
    }

    /// Rebuilds gamma, Q, Qhat and diag(G) from the stored pairs. O(m^2 n).
    void refresh()
    {
        multiplier_ = 1.0;
        floor_shift_ = 0.0;
        while (!pairs_.empty()) {
            if (build()) return;
            pairs_.pop_front(); // singular middle matrix
        }
        gamma_ = base_gamma_;
        Q_.resize(dim_, 0);
        Qhat_.resize(0, dim_);
        diag_.setConstant(dim_, gamma_);
    }

    /// (G d)_i given v = Qhat d.
    double product_entry(const Vector& v, Index i, double d_i) const noexcept
    {
        double r = identity_weight() * d_i;
        if (Q_.cols() > 0) r -= Q_.row(i).dot(v);
        return r;
    }

    /// v <- v + z qhat_j, keeping v = Qhat d after d_j += z.
    void update_v(Vector& v, Index j, double z) const noexcept
    {
        if (z != 0.0 && Qhat_.rows() > 0) v.noalias() += z * Qhat_.col(j);
    }

    Vector qhat_times(const Vector& d) const
    {
        if (Qhat_.rows() == 0) return Vector::Zero(0);
        return Qhat_ * d;
    }

    /// Full product G d in O(mn).
    Vector apply(const Vector& d) const
    {
        Vector out = identity_weight() * d;
        if (Q_.cols() > 0) out.noalias() -= Q_ * (Qhat_ * d);
        return out;
    }

    /// G <- G + gamma_eff I, i.e. gamma_eff doubles. Q and Qhat are untouched.
    void double_gamma()
    {
        if (multiplier_ >= max_multiplier) throw Error("lbfgs: gamma multiplier overflow (backtracking failed)");
        const double inc = gamma_eff();
        multiplier_ *= 2.0;
        diag_.array() += inc;
    }

    /// Raises the identity weight until lambda_min(G) >= sigma_floor. Dense, O(n^3).
    void enforce_floor(double sigma_floor, Index cap = 2000)
    {
        const Matrix G = dense_materialize(cap);
        Eigen::SelfAdjointEigenSolver<Matrix> es(G, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        if (lo < sigma_floor) {
            const double add = sigma_floor - lo;
            floor_shift_ += add;
            diag_.array() += add;
        }
    }

    /// gamma_eff I - Q Qhat as a dense matrix (test oracle; n <= cap).
    Matrix dense_materialize(Index cap = 2000) const
    {
        if (dim_ > cap) throw Error("lbfgs: dense materialization above size cap");
        Matrix G = identity_weight() * Matrix::Identity(dim_, dim_);
        if (Q_.cols() > 0) G.noalias() -= Q_ * Qhat_;
        return G;
    }

    void dump_csv(std::ostream& out) const
    {
        out << "# gamma=" << gamma_ << " multiplier=" << multiplier_ << " pairs=" << pairs_.size() << '\n';
        out << "i,diag";
        for (Index c = 0; c < Q_.cols(); ++c) out << ",q" << c;
        for (Index c = 0; c < Qhat_.rows(); ++c) out << ",qhat" << c;
        out << '\n';
        for (Index i = 0; i < dim_; ++i) {
            out << i << ',' << diag_[i];
            for (Index c = 0; c < Q_.cols(); ++c) out << ',' << Q_(i, c);
            for (Index c = 0; c < Qhat_.rows(); ++c) out << ',' << Qhat_(c, i);
            out << '\n';
        }
    }

private:
    bool build()
    {
        const auto l = static_cast<Index>(pairs_.size());
        const auto& newest = pairs_.back();
        const double g = newest.t.squaredNorm() / newest.st;
        if (!(g > 0.0) || !std::isfinite(g)) return false;

        Matrix S(dim_, l), T(dim_, l);
        for (Index c = 0; c < l; ++c) {
            S.col(c) = pairs_[static_cast<std::size_t>(c)].s;
            T.col(c) = pairs_[static_cast<std::size_t>(c)].t;
        }
        const Matrix SS = S.transpose() * S;
        const Matrix ST = S.transpose() * T;

        Matrix middle = Matrix::Zero(2 * l, 2 * l);
        middle.topLeftCorner(l, l) = g * SS;
        for (Index i = 0; i < l; ++i) {
            for (Index j = 0; j < i; ++j) {
                middle(i, l + j) = ST(i, j);
                middle(l + j, i) = ST(i, j);
            }
            middle(l + i, l + i) = -ST(i, i);
        }

        Eigen::PartialPivLU<Matrix> lu(middle);
        const double rc = lu.rcond();
        if (!(rc > 1e-14)) return false;

        RowMatrix Qn(dim_, 2 * l);
        Qn.leftCols(l) = g * S;
        Qn.rightCols(l) = T;
        Matrix Qh = lu.solve(Matrix(Qn.transpose()));
        if (!Qh.allFinite()) return false;

        gamma_ = g;
        Q_ = std::move(Qn);
        Qhat_ = std::move(Qh);
        diag_.resize(dim_);
        for (Index i = 0; i < dim_; ++i) diag_[i] = gamma_ - Q_.row(i).dot(Qhat_.col(i));
        return true;
    }

    Index dim_;
    int memory_;
    double base_gamma_;
    double curvature_eps_;
    std::deque<CurvaturePair> pairs_;
    double gamma_;
    double multiplier_ = 1.0;
    double floor_shift_ = 0.0;
    RowMatrix Q_;
    Matrix Qhat_;
    Vector diag_;
};

/// Extreme eigenvalues (lambda_min, lambda_max) of a symmetric matrix.
inline std::pair<double, double> extreme_eigenvalues(const Matrix& A)
{
    if (A.rows() == 0) return {0.0, 0.0};
    Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

} // namespace proxqn
