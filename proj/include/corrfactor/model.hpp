#ifndef CORRFACTOR_MODEL_HPP
#define CORRFACTOR_MODEL_HPP

#include "corrfactor/basis.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// Result of the weighted data split. Row g of Y1 holds the working effect
// estimate (X' G^-1 X)^-1 X' G^-1 y_g, row g of Y2 the rotated residual
// coordinates Qx' y_g.
struct SplitData {
    MatrixXd Y1;  // p x d
    MatrixXd Y2;  // p x (n - d)
    MatrixXd Qx;  // n x (n - d), orthonormal, Qx' X = 0
    MatrixXd G;   // the n x n weight used
};

// Everything that survives the nuisance rotation. The rotated basis is dense
// (the congruence destroys structure); callers that need the structured
// original keep it alongside.
struct RotatedModel {
    MatrixXd Y;           // p x (n - r)
    MatrixXd X;           // (n - r) x d
    MatrixXd Qz;          // n x (n - r)
    CovarianceBasis basis;  // rotated terms, dense
};

// Multiply the data by an orthonormal basis of the orthogonal complement of
// Z: Y' = Y Qz, X' = Qz' X, B_j' = Qz' B_j Qz. Z with zero columns is an
// identity pass-through (the basis is returned unrotated and structured).
// Throws RankDeficientDesign when [X Z] is rank-deficient.
RotatedModel residualize_nuisance(const MatrixXd& Y, const MatrixXd& X, const MatrixXd& Z,
                                  const CovarianceBasis& basis);

// Weighted split of Eq-style y = X w + residual. G must be positive definite
// (throws SingularWeight); d = 0 is allowed and gives Qx = I, empty Y1.
SplitData split_data(const MatrixXd& Y, const MatrixXd& X, const MatrixXd& G);

}  // namespace corrfactor

#endif
