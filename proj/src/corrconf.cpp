#include "corrfactor/corrconf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <sstream>

#include "corrfactor/linalg.hpp"

namespace corrfactor {

namespace {

// C' W^-1 C and W^-1 C in one Cholesky pass.
struct WeightedGram {
    MatrixXd WinvC;  // m x k
    MatrixXd inner;  // k x k
    Eigen::LLT<MatrixXd> llt_inner;
};

WeightedGram weighted_gram(const MatrixXd& C_perp, const MatrixXd& W_hat) {
    WeightedGram out;
    Eigen::LLT<MatrixXd> lltW(W_hat);
    if (lltW.info() != Eigen::Success)
        throw NotPositiveDefinite("working covariance is not positive definite");
    out.WinvC = lltW.solve(C_perp);
    out.inner = C_perp.transpose() * out.WinvC;
    out.inner = 0.5 * (out.inner + out.inner.transpose()).eval();
    out.llt_inner.compute(out.inner);
    if (out.llt_inner.info() != Eigen::Success)
        throw SingularGram("latent basis is degenerate under the fitted weight");
    return out;
}

}  // namespace

MatrixXd estimate_loadings(const MatrixXd& Y2, const MatrixXd& C_perp, const MatrixXd& W_hat) {
    const Eigen::Index k = C_perp.cols();
    if (k == 0) return MatrixXd(Y2.rows(), 0);
    if (C_perp.rows() != Y2.cols())
        throw ConfigError("latent basis rows do not match residual columns");
    WeightedGram g = weighted_gram(C_perp, W_hat);
    // Row g of the result is (C'W^-1C)^-1 C'W^-1 y_g2.
    return Y2 * g.llt_inner.solve(g.WinvC.transpose()).transpose();
}

MatrixXd omega_bias_corrected(const MatrixXd& Y1, const MatrixXd& L_hat, const MatrixXd& C_perp,
                              const MatrixXd& W_hat, double delta2, Eigen::Index p) {
    const Eigen::Index k = C_perp.cols();
    if (k == 0) return MatrixXd(Y1.cols(), 0);
    WeightedGram g = weighted_gram(C_perp, W_hat);

    MatrixXd LtL = L_hat.transpose() * L_hat;
    LtL = 0.5 * (LtL + LtL.transpose()).eval();
    MatrixXd corrected =
        LtL - static_cast<double>(p) * delta2 * g.llt_inner.solve(MatrixXd::Identity(k, k));
    corrected = 0.5 * (corrected + corrected.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<MatrixXd> es_raw(LtL);
    const double norm_raw = std::max(es_raw.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es_corr(corrected);
    const double min_eig = es_corr.eigenvalues().minCoeff();
    if (min_eig < 1e-8 * norm_raw) {
        std::ostringstream msg;
        msg << "bias-corrected loading Gram has eigenvalue " << min_eig
            << " below threshold " << 1e-8 * norm_raw
            << "; weakest factor is indistinguishable from noise";
        throw BiasCorrectionSingular(msg.str());
    }
    MatrixXd Omega = es_corr.eigenvectors() * es_corr.eigenvalues().cwiseInverse().asDiagonal() *
                     es_corr.eigenvectors().transpose() * (L_hat.transpose() * Y1);
    return Omega.transpose();
}

MatrixXd assemble_confounders(const MatrixXd& X, const MatrixXd& Omega_hat, const MatrixXd& V_hat,
                              const MatrixXd& Qx, const MatrixXd& W_hat,
                              const MatrixXd& C_perp) {
    const Eigen::Index k = C_perp.cols();
    if (k == 0) return MatrixXd(Qx.rows(), 0);
    if (Omega_hat.cols() != k) throw ConfigError("coefficient and latent column counts disagree");
    Eigen::LLT<MatrixXd> lltW(W_hat);
    if (lltW.info() != Eigen::Success)
        throw NotPositiveDefinite("working covariance is not positive definite");
    MatrixXd C = V_hat * (Qx * lltW.solve(C_perp));
    if (X.cols() > 0) C.noalias() += X * Omega_hat;
    return C;
}

ConfounderEstimate estimate_confounders(const SplitData& split, const MatrixXd& X1,
                                        const FactorFit& fit) {
    ConfounderEstimate out;
    out.source_fit = fit;
    out.L_hat = estimate_loadings(split.Y2, fit.C_perp, fit.variance.W);
    try {
        out.Omega_hat = omega_bias_corrected(split.Y1, out.L_hat, fit.C_perp, fit.variance.W,
                                             fit.variance.delta2, split.Y2.rows());
        out.bias_corrected = true;
    } catch (const BiasCorrectionSingular&) {
        // The correction presumes the weakest factor stays clear of the
        // noise level; when that fails we keep the uncorrected projection.
        out.Omega_hat = omega_bias_corrected(split.Y1, out.L_hat, fit.C_perp, fit.variance.W,
                                             0.0, split.Y2.rows());
        out.bias_corrected = false;
    }
    out.C_hat = assemble_confounders(X1, out.Omega_hat, split.G, split.Qx, fit.variance.W,
                                     fit.C_perp);
    return out;
}

}  // namespace corrfactor
