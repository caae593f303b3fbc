#ifndef CORRFACTOR_CBCV_HPP
#define CORRFACTOR_CBCV_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "corrfactor/basis.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/reml.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// Random near-equal partition of feature rows into F folds, reproducible
// from the seed. Sizes differ by at most one.
struct FoldAssignment {
    std::vector<int> fold_of;  // length p, values in 0..F-1
    int F = 0;
    std::uint64_t seed = 0;

    // Row indices per fold, in shuffle order.
    std::vector<std::vector<Eigen::Index>> groups() const;
};

FoldAssignment partition_folds(Eigen::Index p, int F, std::uint64_t seed);

// Leave-one-column-out quadratic loss of the whitened held-out block Ybar
// against the whitened latent basis Cbar, by the closed-form hat-matrix
// identity. Returns the +inf sentinel (not an error) when any leverage
// exceeds 1 - eta * log(m_n)/m_n, m_n = min(cols, p/cols). p_total is the
// feature count the guard should use; 0 means the block's own row count.
double loo_loss(const MatrixXd& Ybar, const MatrixXd& Cbar, double eta,
                Eigen::Index p_total = 0);

struct CbcvReport {
    MatrixXd loss;  // F x (K_max + 1)
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> guard_triggered;
    int k_hat = 0;
    VectorXd total_loss;  // column sums of loss
    FoldAssignment fold_assignment;
    std::vector<VarianceEstimate> per_fold_variance;  // each fold's fit at k_hat
    std::vector<std::string> warnings;
};

// Cross-validated factor count: fit the alternation path on each training
// complement of a feature fold, score the held-out features under the
// training whitening, pick the k with the smallest summed loss (ties to
// the smaller k).
CbcvReport choose_k(const MatrixXd& Y2, const CovarianceBasis& rotated_basis,
                    const Polytope& poly, int F, int K_max, double eta, std::uint64_t seed,
                    int threads = 0);

}  // namespace corrfactor

#endif
