#ifndef CORRFACTOR_TEST_ORACLES_HPP
#define CORRFACTOR_TEST_ORACLES_HPP

// Slow, independent reference implementations the tests compare against.
// Everything here is written the straightforward way (Gram-Schmidt loops,
// grid searches, explicit refits, constraint-subset enumeration) so a bug in
// the library cannot hide in a shared code path.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "corrfactor/polytope.hpp"
#include "corrfactor/types.hpp"

namespace oracles {

using corrfactor::MatrixXd;
using corrfactor::VectorXd;

// Orthonormal complement of col(M) by plain Gram-Schmidt against the
// coordinate directions. Only the subspace is meaningful, not the basis.
inline MatrixXd gs_null_basis(const MatrixXd& M) {
    const Eigen::Index n = M.rows();
    std::vector<VectorXd> kept;
    // First orthonormalize the columns of M itself.
    std::vector<VectorXd> span;
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        VectorXd v = M.col(j);
        for (const auto& u : span) v -= u.dot(v) * u;
        for (const auto& u : span) v -= u.dot(v) * u;  // second pass for stability
        if (v.norm() > 1e-10 * std::max(1.0, M.col(j).norm())) span.push_back(v.normalized());
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        VectorXd v = VectorXd::Zero(n);
        v(j) = 1.0;
        for (const auto& u : span) v -= u.dot(v) * u;
        for (const auto& u : kept) v -= u.dot(v) * u;
        for (const auto& u : span) v -= u.dot(v) * u;
        for (const auto& u : kept) v -= u.dot(v) * u;
        if (v.norm() > 1e-8) kept.push_back(v.normalized());
    }
    MatrixXd Q(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) Q.col(static_cast<Eigen::Index>(j)) = kept[j];
    return Q;
}

// log|A| through partial-pivot LU, independent of the Cholesky the library
// uses.
inline double lu_logdet(const MatrixXd& A) {
    Eigen::PartialPivLU<MatrixXd> lu(A);
    const MatrixXd& U = lu.matrixLU();
    double s = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) s += std::log(std::abs(U(i, i)));
    return s;
}

inline MatrixXd dense_kron(const MatrixXd& A, const MatrixXd& B) {
    MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

// Central finite-difference gradient.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-5) {
    VectorXd g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        VectorXd hi = x;
        VectorXd lo = x;
        const double step = h * std::max(1.0, std::abs(x(j)));
        hi(j) += step;
        lo(j) -= step;
        g(j) = (f(hi) - f(lo)) / (2.0 * step);
    }
    return g;
}

// The working-model restricted objective, assembled exactly as displayed:
// project onto the complement of the factor directions, then
// -log|W_proj| - Tr(S_proj W_proj^{-1}), normalized by the projected
// dimension. Uses LU for the log-determinant and a full-pivot inverse.
inline double restricted_objective(const VectorXd& theta, const MatrixXd& S2,
                                   const MatrixXd& C_perp, const std::vector<MatrixXd>& terms) {
    const Eigen::Index m = S2.rows();
    MatrixXd Qc = C_perp.cols() == 0 ? MatrixXd(MatrixXd::Identity(m, m)) : gs_null_basis(C_perp);
    MatrixXd W = MatrixXd::Zero(m, m);
    for (std::size_t j = 0; j < terms.size(); ++j) W += theta(static_cast<Eigen::Index>(j)) * terms[j];
    const MatrixXd Wp = Qc.transpose() * W * Qc;
    const MatrixXd Sp = Qc.transpose() * S2 * Qc;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Wp);
    if (eig.eigenvalues().minCoeff() <= 0.0) return -std::numeric_limits<double>::infinity();
    const MatrixXd Winv = Wp.fullPivLu().inverse();
    const double md = static_cast<double>(Qc.cols());
    return (-lu_logdet(Wp) - (Winv * Sp).trace()) / md;
}

// Dense grid maximizer of the restricted objective over a box, for one- and
// two-term bases.
inline VectorXd grid_restricted_max(const MatrixXd& S2, const MatrixXd& C_perp,
                                    const std::vector<MatrixXd>& terms, const VectorXd& lo,
                                    const VectorXd& hi, int steps) {
    const Eigen::Index b = static_cast<Eigen::Index>(terms.size());
    VectorXd best = lo;
    double best_f = -std::numeric_limits<double>::infinity();
    if (b == 1) {
        for (int i = 0; i <= steps; ++i) {
            VectorXd t(1);
            t(0) = lo(0) + (hi(0) - lo(0)) * i / steps;
            const double f = restricted_objective(t, S2, C_perp, terms);
            if (f > best_f) {
                best_f = f;
                best = t;
            }
        }
        return best;
    }
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; j <= steps; ++j) {
            VectorXd t(2);
            t(0) = lo(0) + (hi(0) - lo(0)) * i / steps;
            t(1) = lo(1) + (hi(1) - lo(1)) * j / steps;
            const double f = restricted_objective(t, S2, C_perp, terms);
            if (f > best_f) {
                best_f = f;
                best = t;
            }
        }
    return best;
}

// Exact Euclidean projection onto {A_eq x = 0, A_ineq x >= 0} intersected
// with a centered ball, by enumerating every subset of inequality rows as a
// candidate active set and checking primal feasibility plus sign of the
// multipliers. Exponential, so only for small cones.
inline VectorXd enumerate_projection(const VectorXd& x, const corrfactor::Polytope& poly) {
    const Eigen::Index b = x.size();
    const Eigen::Index ni = poly.A_ineq.rows();
    const Eigen::Index ne = poly.A_eq.rows();
    VectorXd best = VectorXd::Zero(b);
    double best_d = std::numeric_limits<double>::infinity();

    for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << ni); ++mask) {
        std::vector<Eigen::Index> act;
        for (Eigen::Index r = 0; r < ni; ++r)
            if (mask & (std::uint64_t(1) << r)) act.push_back(r);
        const Eigen::Index na = ne + static_cast<Eigen::Index>(act.size());
        MatrixXd A(na, b);
        for (Eigen::Index r = 0; r < ne; ++r) A.row(r) = poly.A_eq.row(r);
        for (std::size_t r = 0; r < act.size(); ++r)
            A.row(ne + static_cast<Eigen::Index>(r)) = poly.A_ineq.row(act[r]);

        VectorXd cand;
        if (na == 0) {
            cand = x;
        } else {
            // Projection onto {A cand = 0}: cand = x - A' (A A')^+ A x.
            const MatrixXd AAt = A * A.transpose();
            cand = x - A.transpose() * AAt.completeOrthogonalDecomposition().solve(A * x);
        }
        // Primal feasibility.
        bool ok = true;
        if (ne > 0 && (poly.A_eq * cand).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, x.norm())) ok = false;
        if (ok && ni > 0 && (poly.A_ineq * cand).minCoeff() < -1e-8 * std::max(1.0, x.norm())) ok = false;
        if (!ok) continue;
        const double d = (cand - x).squaredNorm();
        if (d < best_d - 1e-14) {
            best_d = d;
            best = cand;
        }
    }
    const double bound = poly.effective_norm_bound(b);
    if (best.norm() > bound) best *= bound / best.norm();
    return best;
}

// Explicit leave-one-column-out refit loss: drop column i, least-squares fit
// of the remaining columns on the factor rows, predict column i, accumulate
// squared error. The closed form must match this exactly.
inline double loo_refit_loss(const MatrixXd& Ybar, const MatrixXd& Cbar) {
    const Eigen::Index m = Ybar.cols();
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (Cbar.cols() == 0) {
            total += Ybar.col(i).squaredNorm();
            continue;
        }
        MatrixXd Ci(m - 1, Cbar.cols());
        MatrixXd Yi(Ybar.rows(), m - 1);
        Eigen::Index w = 0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (j == i) continue;
            Ci.row(w) = Cbar.row(j);
            Yi.col(w) = Ybar.col(j);
            ++w;
        }
        // Coefficients solving min ||Yi - B Ci'||_F.
        const MatrixXd B = Ci.completeOrthogonalDecomposition().solve(Yi.transpose()).transpose();
        total += (Ybar.col(i) - B * Cbar.row(i).transpose()).squaredNorm();
    }
    return total;
}

}  // namespace oracles

#endif
