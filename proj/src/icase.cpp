#include "corrfactor/icase.hpp"

#include <cmath>
#include <sstream>

#include "corrfactor/linalg.hpp"

namespace corrfactor {

int default_k_max(Eigen::Index m) {
    int cap = static_cast<int>(m / 2);
    cap = std::min(cap, static_cast<int>(m - 1));
    return std::max(0, std::min(cap, 30));
}

MatrixXd subspace_step_s2(const MatrixXd& S2, const MatrixXd& W, int k, VectorXd* eigenvalues) {
    const Eigen::Index m = S2.rows();
    if (k < 0 || k >= m) throw ConfigError("factor count must lie in [0, m)");
    if (k == 0) {
        if (eigenvalues) eigenvalues->resize(0);
        return MatrixXd(m, 0);
    }
    MatrixXd Wis = sym_inv_sqrt(W);
    MatrixXd T = Wis * S2 * Wis;
    T = 0.5 * (T + T.transpose()).eval();
    VectorXd evals;
    MatrixXd evecs;
    sym_eig_desc(T, evals, evecs);
    const double gap_ref = std::max(std::abs(evals(k - 1)), std::abs(evals(k)));
    if (std::abs(evals(k - 1) - evals(k)) <= 1e-12 * gap_ref) {
        std::ostringstream msg;
        msg << "eigenvalue tie at the cut for k=" << k << " (" << evals(k - 1) << " vs "
            << evals(k) << "), latent subspace is not identified";
        throw DegenerateSpectrum(msg.str());
    }
    if (eigenvalues) *eigenvalues = evals.head(k);
    MatrixXd Uk = evecs.leftCols(k);
    fix_signs(Uk);
    MatrixXd Wsq = sym_sqrt(W);
    return std::sqrt(static_cast<double>(m)) * (Wsq * Uk);
}

std::pair<MatrixXd, VectorXd> subspace_step(const MatrixXd& Y2, const MatrixXd& W_hat, int k) {
    const double p = static_cast<double>(Y2.rows());
    MatrixXd S2 = (Y2.transpose() * Y2) / p;
    VectorXd eigvals;
    MatrixXd C_perp = subspace_step_s2(S2, W_hat, k, &eigvals);
    return {std::move(C_perp), std::move(eigvals)};
}

IcaseResult run_icase_s2(MatrixXd S2, const std::vector<MatrixXd>& frame_terms,
                         const Polytope& poly, int K_max) {
    const Eigen::Index m = S2.rows();
    if (K_max < 0 || K_max >= m) throw ConfigError("factor ceiling must lie in [0, m)");
    S2 = 0.5 * (S2 + S2.transpose()).eval();

    IcaseResult out;
    out.fits.reserve(static_cast<std::size_t>(K_max) + 1);

    auto fit_variance = [&](const MatrixXd& C_perp, const VectorXd& start, int k) {
        try {
            return reml_working_model_s2(S2, C_perp, frame_terms, poly, start);
        } catch (const NonConvergence& e) {
            std::ostringstream msg;
            msg << "variance fit at k=" << k << ": " << e.what();
            throw NonConvergence(msg.str());
        }
    };

    FactorFit base;
    base.k = 0;
    base.C_perp = MatrixXd(m, 0);
    base.variance = fit_variance(base.C_perp, VectorXd(), 0);
    out.fits.push_back(std::move(base));

    for (int k = 1; k <= K_max; ++k) {
        const VarianceEstimate& prev = out.fits.back().variance;

        FactorFit fit;
        fit.k = k;
        fit.warm_start_tau = prev.tau;
        VectorXd warm = prev.delta2 * prev.tau;
        MatrixXd C0 = subspace_step_s2(S2, prev.W, k, nullptr);
        fit.variance = fit_variance(C0, warm, k);
        fit.C_perp = subspace_step_s2(S2, fit.variance.W, k, &fit.eigenvalues);
        out.fits.push_back(std::move(fit));
    }
    out.S2 = std::move(S2);
    return out;
}

IcaseResult run_icase(const MatrixXd& Y2, const CovarianceBasis& rotated_basis,
                      const Polytope& poly, int K_max) {
    const Eigen::Index m = Y2.cols();
    const double p = static_cast<double>(Y2.rows());
    MatrixXd S2 = (Y2.transpose() * Y2) / p;
    return run_icase_s2(std::move(S2), rotated_basis.materialize(m), poly, K_max);
}

}  // namespace corrfactor
