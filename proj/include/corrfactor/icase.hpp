#ifndef CORRFACTOR_ICASE_HPP
#define CORRFACTOR_ICASE_HPP

#include <vector>

#include "corrfactor/basis.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/reml.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// One factor-count fit along the alternation path.
struct FactorFit {
    int k = 0;
    MatrixXd C_perp;        // m x k latent basis, scaled so C'W^-1C = m I_k
    VectorXd eigenvalues;   // top k eigenvalues of the whitened second moment
    VarianceEstimate variance;
    VectorXd warm_start_tau;  // the previous fit's tau, empty for k = 0
};

struct IcaseResult {
    std::vector<FactorFit> fits;  // indexed by k = 0..K_max
    MatrixXd S2;                  // p^-1 Y2' Y2, cached for reuse
};

// Latent basis from one whitening pass: top-k eigenvectors of
// W^-1/2 (p^-1 Y2'Y2) W^-1/2, mapped back and rescaled by m^1/2 W^1/2 so
// that C'W^-1C = m I_k. Deterministic sign convention. k = 0 gives empty
// outputs. Throws DegenerateSpectrum when eigenvalues k and k+1 tie within
// 1e-12.
std::pair<MatrixXd, VectorXd> subspace_step(const MatrixXd& Y2, const MatrixXd& W_hat, int k);

// Same, with the m x m second moment precomputed.
MatrixXd subspace_step_s2(const MatrixXd& S2, const MatrixXd& W, int k, VectorXd* eigenvalues);

// Alternating subspace / variance fits for k = 0..K_max. fit[0] is the
// plain variance fit with no latent structure; each k >= 1 runs exactly two
// alternations and stops on the second subspace pass, so the reported basis
// is whitened by the reported variance fit. Variance fits are warm-started
// down the path. Throws DegenerateSpectrum at a vanished eigengap and
// NonConvergence (tagged with k) when a variance fit fails.
IcaseResult run_icase(const MatrixXd& Y2, const CovarianceBasis& rotated_basis,
                      const Polytope& poly, int K_max);
IcaseResult run_icase_s2(MatrixXd S2, const std::vector<MatrixXd>& frame_terms,
                         const Polytope& poly, int K_max);

// Default search ceiling for the factor count.
int default_k_max(Eigen::Index m);

}  // namespace corrfactor

#endif
