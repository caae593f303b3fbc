#include "corrfactor/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>

namespace corrfactor {

void fix_signs(MatrixXd& Q) {
    for (Eigen::Index j = 0; j < Q.cols(); ++j) {
        const double scale = Q.col(j).cwiseAbs().maxCoeff();
        if (scale <= 0.0) continue;
        const double tol = 1e-9 * scale;
        for (Eigen::Index i = 0; i < Q.rows(); ++i) {
            const double v = Q(i, j);
            if (std::abs(v) > tol) {
                if (v < 0.0) Q.col(j) = -Q.col(j);
                break;
            }
        }
    }
}

MatrixXd null_basis(const MatrixXd& M) {
    const Eigen::Index n = M.rows();
    if (n == 0) throw EmptyNullSpace("null_basis: empty matrix");
    if (M.cols() == 0) {
        MatrixXd Q = MatrixXd::Identity(n, n);
        return Q;
    }

    Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    if (rank >= n) throw EmptyNullSpace("null_basis: matrix spans the whole space");

    // Orthonormal basis of col(M), then eigendecompose I - P_M. The
    // eigenvalues are 0 and 1; taking the top n-rank eigenvectors in
    // descending order fixes column order deterministically.
    const MatrixXd Qm = qr.householderQ() * MatrixXd::Identity(n, rank);
    MatrixXd P = MatrixXd::Identity(n, n) - Qm * Qm.transpose();
    P = 0.5 * (P + P.transpose());

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
    if (eig.info() != Eigen::Success) throw Error("null_basis: eigendecomposition failed");

    // Eigen sorts ascending; the complement lives in the last n-rank columns.
    MatrixXd Q(n, n - rank);
    for (Eigen::Index j = 0; j < n - rank; ++j) Q.col(j) = eig.eigenvectors().col(n - 1 - j);
    fix_signs(Q);
    return Q;
}

namespace {

MatrixXd sym_power(const MatrixXd& A, double power) {
    MatrixXd S = 0.5 * (A + A.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S);
    if (eig.info() != Eigen::Success) throw Error("sym_power: eigendecomposition failed");
    VectorXd ev = eig.eigenvalues();
    const double floor_at = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::pow(std::max(ev(i), floor_at), power);
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

MatrixXd sym_sqrt(const MatrixXd& A) { return sym_power(A, 0.5); }

MatrixXd sym_inv_sqrt(const MatrixXd& A) { return sym_power(A, -0.5); }

double sym_logdet(const MatrixXd& A) {
    Eigen::LLT<MatrixXd> llt(0.5 * (A + A.transpose()));
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("sym_logdet: matrix is not positive definite");
    double ld = 0.0;
    const auto& L = llt.matrixLLT();
    for (Eigen::Index i = 0; i < A.rows(); ++i) ld += std::log(L(i, i));
    return 2.0 * ld;
}

void sym_eig_desc(const MatrixXd& A, VectorXd& eigenvalues, MatrixXd& eigenvectors) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (A + A.transpose()));
    if (eig.info() != Eigen::Success) throw Error("sym_eig_desc: eigendecomposition failed");
    const Eigen::Index n = A.rows();
    eigenvalues.resize(n);
    eigenvectors.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        eigenvalues(j) = eig.eigenvalues()(n - 1 - j);
        eigenvectors.col(j) = eig.eigenvectors().col(n - 1 - j);
    }
    fix_signs(eigenvectors);
}

MatrixXd orthonormalize(const MatrixXd& A) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
    qr.setThreshold(1e-12);
    const Eigen::Index rank = qr.rank();
    return qr.householderQ() * MatrixXd::Identity(A.rows(), rank);
}

}  // namespace corrfactor
