#ifndef CORRFACTOR_INFERENCE_HPP
#define CORRFACTOR_INFERENCE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "corrfactor/basis.hpp"
#include "corrfactor/cbcv.hpp"
#include "corrfactor/corrconf.hpp"
#include "corrfactor/icase.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/reml.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

struct GlsFit {
    VectorXd beta;  // primary coefficients only
    MatrixXd M_n;   // d x d sampling covariance, scaled by the row count
};

// Generalized least squares of one response on [X C] under a fixed
// covariance, with the sampling covariance of the primary block assembled
// from its two displayed pieces (information term plus confounder
// propagation). Throws SingularCovariance / RankDeficientDesign.
GlsFit gls_fit(const VectorXd& y, const MatrixXd& X, const MatrixXd& C, const MatrixXd& V);

// The two-piece assembly of the scaled sampling covariance on its own, for
// equivalence checks against the block-inverse route. X and C share the
// frame of V; Qx spans the orthocomplement of X.
MatrixXd mn_matrix(const MatrixXd& X, const MatrixXd& C, const MatrixXd& V, const MatrixXd& Qx);

// Two-sided p-value of a t statistic.
double t_pvalue(double t, double df);

// Benjamini-Hochberg step-up adjustment. NaN entries pass through and do
// not count toward the number of tests.
VectorXd bh_adjust(const VectorXd& p);

struct FeatureInference {
    std::string feature_id;
    VectorXd beta, se, t, p, q;  // one entry per primary coefficient
    MatrixXd M_n;                // scaled sampling covariance of beta
    VectorXd v_g;                // variance coefficients
    bool boundary = false;
    bool converged = false;
    std::string status = "ok";
};

// Fills t, p, and per-coefficient q across features, from beta/se already
// present. Rows whose status is not "ok" keep NaN statistics.
void feature_tests(std::vector<FeatureInference>& fits, double df);

struct InferenceResult {
    std::vector<FeatureInference> features;
    double df = 0.0;
    Eigen::Index n_failed = 0;
};

struct InferenceOptions {
    VectorXd warm_start;  // optional shared variance warm start, data units
    int threads = 0;
};

// Per-feature variance estimation and GLS testing against the design
// [X Z C], where C holds confounders in the original sample frame.
// Per-feature failures are recorded in the row status instead of aborting.
InferenceResult infer_features(const FeatureMatrix& data, const DesignMatrices& designs,
                               const CovarianceBasis& basis, const Polytope& poly,
                               const MatrixXd& C, const InferenceOptions& options = {});

struct PipelineOptions {
    int K = -1;         // factor count; -1 selects it by cross-validation
    int k_max = -1;     // cross-validation search ceiling; -1 uses the default
    int folds = 5;
    double eta = 1.0;
    std::uint64_t seed = 1;
    int threads = 0;
    MatrixXd oracle_C;  // known confounders (original frame); bypasses estimation
};

struct PipelineResult {
    std::vector<FeatureInference> features;
    double df = 0.0;
    Eigen::Index n_failed = 0;
    int k = 0;
    bool k_from_cv = false;
    bool oracle_mode = false;
    IcaseResult path;                // alternation fits for k = 0..K
    ConfounderEstimate confounders;  // empty in oracle mode
    MatrixXd C;                      // n x K confounders, original frame
    MatrixXd Qz;                     // nuisance rotation actually applied
    MatrixXd X1;                     // rotated primary design
    CbcvReport cv;                   // populated when k_from_cv
    std::vector<std::string> warnings;
};

// End-to-end pipeline: nuisance reduction, optional cross-validated factor
// count, alternating factor/variance estimation, confounder reconstruction,
// then per-feature variance + GLS tests. Deterministic given (data, seed,
// config).
PipelineResult run_inference(const FeatureMatrix& Y, const DesignMatrices& designs,
                             const CovarianceBasis& basis, const Polytope& poly,
                             const PipelineOptions& options = {});

}  // namespace corrfactor

#endif
