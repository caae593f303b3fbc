#ifndef CORRFACTOR_SIMULATE_HPP
#define CORRFACTOR_SIMULATE_HPP

#include <cstdint>
#include <limits>
#include <utility>

#include "corrfactor/basis.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// Configuration of the multi-tissue benchmark generator. Defaults reproduce
// the standard setting: 15000 features on 50 individuals x 3 tissues, ten
// latent factors with geometrically decaying strength, spike-and-slab effect
// sizes, and heavy-tailed residuals.
struct SimConfig {
    Eigen::Index p = 15000;
    int n_individuals = 50;
    int n_tissues = 3;
    int K = 10;

    // Factor-loading spike-and-slab: entry k is zero with probability pi[k],
    // otherwise N(0, eta[k]^2). Empty vectors mean "use the geometric-decay
    // defaults" (pi = 0, factor strength n down to 3).
    VectorXd pi;
    VectorXd eta;

    double beta_sparsity = 0.8;  // P(beta_g = 0)
    double beta_sd = 0.4;        // slab sd of beta_g

    // Scale of the shared confounder-vs-treatment loading. NaN means "resolve
    // by calibrate_alpha so confounders explain ~30% of the whitened
    // treatment variable".
    double alpha = std::numeric_limits<double>::quiet_NaN();

    // Residual tail: finite df gives standardized t residuals, +inf Gaussian.
    double residual_df = 4.0;

    // Means of the six Gamma-distributed covariance components
    // (shared-factor variance, two propagation loadings, second factor
    // variance, its loading, idiosyncratic noise); all share one coefficient
    // of variation.
    VectorXd component_means;
    double component_cv = 0.2;

    // Replace each per-feature tissue covariance by its isotropic match
    // (same total variance, zero cross-tissue correlation). Used to build
    // the independent-noise benchmark arm against which the correlated runs
    // are compared.
    bool independent_residuals = false;

    std::uint64_t seed = 1;

    Eigen::Index n() const { return static_cast<Eigen::Index>(n_individuals) * n_tissues; }

    static SimConfig multitissue_defaults(std::uint64_t seed = 1);

    // Resolves empty pi/eta/component_means to defaults and checks shapes.
    // Throws ConfigError.
    SimConfig resolved() const;
};

struct SimulatedDataset {
    FeatureMatrix Y;     // p x n responses
    MatrixXd X;          // n x 1 treatment indicator, replicated over tissues
    MatrixXd Z;          // n x n_tissues tissue intercepts
    MatrixXd C_true;     // n x K confounders
    MatrixXd L_true;     // p x K loadings
    VectorXd beta_true;  // p treatment effects
    MatrixXd tau_true;   // p x b variance multipliers, row g gives V_g
    CovarianceBasis basis;
    Polytope polytope;
    double alpha_used = 0.0;
};

// Six-term per-individual tissue covariance basis plus its constraint cone.
// Terms are I_individuals (x) a a' in the order (11, 12, 13, 22, 23, 33)
// with a_rr = e_r and a_rs = e_r + e_s, so the off-diagonal multipliers are
// the cross-tissue covariances directly. Only the three-tissue layout is
// supported (throws UnsupportedTissueCount otherwise).
std::pair<CovarianceBasis, Polytope> build_tissue_basis(int n_individuals, int n_tissues = 3);

// Six-term twin-study basis on 4-sample blocks per mother, sample order
// (twin1 age0, twin1 age18, twin2 age0, twin2 age18): mother-level,
// twin-pair, two same-age cross-twin terms, and two age-specific diagonal
// terms. Terms adapt to any n divisible by 4.
std::pair<CovarianceBasis, Polytope> build_twin_basis();

// Population tissue covariance implied by the component means (the exact
// mean of the per-feature draws, second moments of the loadings included).
MatrixXd population_tissue_block(const SimConfig& config);

// Scale of the confounder-on-treatment loading such that the Monte Carlo
// mean of the partial R^2 of whitened X on whitened C (tissue intercepts
// partialled out, population covariance whitening) hits target_r2. Pure
// function of the design dimensions; the internal draw stream is fixed, so
// the result does not depend on config.seed. Throws CalibrationFailure when
// no bracket exists or bisection stalls away from the target.
double calibrate_alpha(const SimConfig& config, double target_r2 = 0.30);

SimulatedDataset simulate_multitissue(const SimConfig& config);

// Small generic factor dataset on an arbitrary basis: random design column,
// no nuisance block, feasible per-feature multipliers near the best
// cone-feasible approximation of the identity. For exercising fitting code
// on non-tissue bases (the twin design in particular) and in tests.
SimulatedDataset simulate_generic(const CovarianceBasis& basis, const Polytope& poly,
                                  Eigen::Index p, Eigen::Index n, int K, std::uint64_t seed);

}  // namespace corrfactor

#endif
