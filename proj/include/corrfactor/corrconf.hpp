#ifndef CORRFACTOR_CORRCONF_HPP
#define CORRFACTOR_CORRCONF_HPP

#include "corrfactor/icase.hpp"
#include "corrfactor/model.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// Per-feature factor loadings: row g is the weighted regression of the
// residual block's row g on the latent basis,
// (C'W^-1C)^-1 C'W^-1 y_g2. Throws SingularGram.
MatrixXd estimate_loadings(const MatrixXd& Y2, const MatrixXd& C_perp, const MatrixXd& W_hat);

// Design coefficients of the confounders with the noise-bias correction:
// Omega = Y1' L { L'L - p delta2 (C'W^-1C)^-1 }^-1. Throws
// BiasCorrectionSingular (reporting the offending eigenvalue) when the
// corrected Gram loses definiteness; callers may fall back to delta2 = 0.
MatrixXd omega_bias_corrected(const MatrixXd& Y1, const MatrixXd& L_hat, const MatrixXd& C_perp,
                              const MatrixXd& W_hat, double delta2, Eigen::Index p);

// Confounder reconstruction C = X Omega + V Qx W^-1 C_perp. By
// construction Qx' C reproduces C_perp exactly.
MatrixXd assemble_confounders(const MatrixXd& X, const MatrixXd& Omega_hat, const MatrixXd& V_hat,
                              const MatrixXd& Qx, const MatrixXd& W_hat, const MatrixXd& C_perp);

struct ConfounderEstimate {
    MatrixXd L_hat;      // p x K per-feature loadings
    MatrixXd Omega_hat;  // d x K design coefficients
    MatrixXd C_hat;      // n1 x K confounders in the nuisance-reduced frame
    FactorFit source_fit;
    bool bias_corrected = true;  // false when the corrected Gram was unusable
};

// The full reconstruction for one factor fit. split.G must hold the fitted
// covariance in the same frame as X1; when the bias-corrected Gram is near
// singular this falls back to the uncorrected coefficients and clears the
// quality flag instead of aborting.
ConfounderEstimate estimate_confounders(const SplitData& split, const MatrixXd& X1,
                                        const FactorFit& fit);

}  // namespace corrfactor

#endif
