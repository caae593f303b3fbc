#ifndef CORRFACTOR_REML_HPP
#define CORRFACTOR_REML_HPP

#include <utility>
#include <vector>

#include "corrfactor/basis.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

struct RemlDiagnostics {
    int iterations = 0;
    double pg_norm = 0.0;        // projected-gradient norm at exit
    bool converged = false;
    bool boundary = false;       // stopped against the pd floor / ball
    std::vector<int> active_ineq;  // cone rows active at the solution (1e-6)
};

// Working-model variance estimate, always determinant-normalized:
// log|W(tau)| = 0 in the frame the basis lives in.
struct VarianceEstimate {
    double delta2 = 1.0;
    VectorXd tau;
    MatrixXd W;                  // materialized W(tau)
    double logdet_residual = 0.0;  // log|W(tau)| after normalization, ~0
    RemlDiagnostics diag;
};

// Splits theta into (delta2, tau) with log|W(tau)| = 0. The terms must
// already live in the residual frame (Qx applied); the overload with Qx
// rotates first. Throws NotPositiveDefinite.
std::pair<double, VectorXd> logdet_normalize(const VectorXd& theta,
                                             const std::vector<MatrixXd>& frame_terms);
std::pair<double, VectorXd> logdet_normalize(const VectorXd& theta, const CovarianceBasis& basis,
                                             const MatrixXd& Qx);

// Restricted likelihood of the working model, evaluated through the m x m
// second moment S2 = p^-1 Y2' Y2 and maximized over theta = delta2 * tau in
// the compactified cone. C_perp may have zero columns (the k = 0 fit).
// The returned estimate is normalized. Throws NonConvergence /
// InfeasibleStart.
VarianceEstimate reml_working_model(const MatrixXd& Y2, const MatrixXd& C_perp,
                                    const CovarianceBasis& rotated_basis, const Polytope& poly,
                                    const VectorXd& start = VectorXd());

// Same, with the second moment precomputed (cached once per dataset).
VarianceEstimate reml_working_model_s2(const MatrixXd& S2, const MatrixXd& C_perp,
                                       const std::vector<MatrixXd>& frame_terms,
                                       const Polytope& poly, const VectorXd& start = VectorXd());

// Test hook: the normalized working-model objective and its analytic
// gradient (trace formulas), in scale-normalized units. eval returns the
// objective; grad may be null.
class WorkingModelObjective {
  public:
    WorkingModelObjective(const MatrixXd& S2, const MatrixXd& C_perp,
                          const std::vector<MatrixXd>& frame_terms);
    double eval(const VectorXd& theta_normalized, VectorXd* grad) const;
    double scale() const { return scale_; }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(proj_terms_.size()); }

  private:
    std::vector<MatrixXd> proj_terms_;  // Qc' B_j Qc
    MatrixXd S_;                        // Qc' S2 Qc / scale
    double scale_ = 1.0;
    Eigen::Index m_ = 0;
    friend VarianceEstimate reml_working_model_s2(const MatrixXd&, const MatrixXd&,
                                                  const std::vector<MatrixXd>&, const Polytope&,
                                                  const VectorXd&);
};

struct FeatureVariance {
    VectorXd v;          // b-vector, data units
    bool boundary = false;
    bool converged = false;
    int iterations = 0;
    double scale = 1.0;  // residual mean square used for normalization
};

// Per-feature REML over the compactified cone, single response y against a
// fixed design. Construct once per dataset, fit() is const and safe to call
// from many threads. When every basis term is I_copies (x) small-block the
// whole fit runs on block-level kernels; otherwise it falls back to dense
// projected-frame evaluation. Both paths optimize the same function.
class FeatureRemlEngine {
  public:
    enum class Path { automatic, dense, blocked };

    FeatureRemlEngine(MatrixXd design, const CovarianceBasis& basis, Eigen::Index n,
                      Polytope poly, Path path = Path::automatic);

    FeatureVariance fit(const VectorXd& y, const VectorXd& start = VectorXd()) const;

    // GLS coefficients and the V(v)-weighted design Gram D' V^-1 D.
    struct Gls {
        VectorXd gamma;  // q coefficients, design column order
        MatrixXd gram;   // q x q
    };
    Gls gls(const VectorXd& y, const VectorXd& v) const;

    // Restricted objective in data units (for cross-path equivalence tests):
    // -(log|Qd' V Qd| + y' P y) / (n - q).
    double objective(const VectorXd& y, const VectorXd& v, VectorXd* grad) const;

    bool blocked() const { return blocked_; }
    Eigen::Index residual_dim() const { return n_ - design_.cols(); }

  private:
    struct BlockKernel;

    double scale_of(const VectorXd& y) const;

    MatrixXd design_;    // n x q
    Eigen::Index n_ = 0;
    Polytope poly_;
    CovarianceBasis basis_;
    bool blocked_ = false;
    Eigen::Index copies_ = 0, block_dim_ = 0;
    std::vector<MatrixXd> blocks_;     // T x T per term (blocked path)
    std::vector<MatrixXd> proj_terms_; // Qd' B_j Qd (dense path)
    std::vector<MatrixXd> full_terms_; // n x n (dense path pd-floor checks)
    MatrixXd Qd_;                      // n x (n - q) (dense path)
    double logdet_dtd_ = 0.0;          // log|D'D|, blocked-path constant
    MatrixXd ols_solver_;              // (D'D)^-1 D' for the residual scale
};

// Contract wrapper: one-off per-feature fit.
FeatureVariance reml_feature(const VectorXd& y, const MatrixXd& design,
                             const CovarianceBasis& basis, const Polytope& poly,
                             const VectorXd& start = VectorXd());

}  // namespace corrfactor

#endif
