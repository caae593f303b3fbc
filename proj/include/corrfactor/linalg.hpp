#ifndef CORRFACTOR_LINALG_HPP
#define CORRFACTOR_LINALG_HPP

#include "corrfactor/types.hpp"

namespace corrfactor {

// Orthonormal basis of the orthogonal complement of col(M), columns ordered
// by descending eigenvalue of I - P_M (index tie-break) and signed so the
// first non-negligible component of each column is positive. Deterministic,
// so golden-file outputs are stable. Throws EmptyNullSpace when M spans R^n.
// M with zero columns yields the (sign-fixed) identity.
MatrixXd null_basis(const MatrixXd& M);

// In-place deterministic sign convention: flip each column so its first
// component larger than 1e-9 * max|column| is positive.
void fix_signs(MatrixXd& Q);

// Symmetric eigendecomposition helpers. Eigenvalues below
// 1e-12 * max(eigenvalue) are floored there before the fractional power is
// taken, which keeps W^{-1/2} finite on nearly singular inputs.
MatrixXd sym_sqrt(const MatrixXd& A);
MatrixXd sym_inv_sqrt(const MatrixXd& A);

// log|A| for symmetric positive definite A via Cholesky.
// Throws NotPositiveDefinite.
double sym_logdet(const MatrixXd& A);

// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
// descending order and the sign convention applied to eigenvectors.
void sym_eig_desc(const MatrixXd& A, VectorXd& eigenvalues, MatrixXd& eigenvectors);

// Orthonormal basis of col(A) (thin, rank-revealing; columns = rank).
MatrixXd orthonormalize(const MatrixXd& A);

inline double sqr(double x) { return x * x; }

}  // namespace corrfactor

#endif
