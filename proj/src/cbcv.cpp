#include "corrfactor/cbcv.hpp"

#include <Eigen/QR>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "corrfactor/icase.hpp"
#include "corrfactor/linalg.hpp"
#include "corrfactor/rng.hpp"
#include "corrfactor/threading.hpp"

namespace corrfactor {

std::vector<std::vector<Eigen::Index>> FoldAssignment::groups() const {
    std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(F));
    for (std::size_t g = 0; g < fold_of.size(); ++g)
        out[static_cast<std::size_t>(fold_of[g])].push_back(static_cast<Eigen::Index>(g));
    return out;
}

FoldAssignment partition_folds(Eigen::Index p, int F, std::uint64_t seed) {
    if (F < 2) throw ConfigError("need at least two folds");
    if (static_cast<Eigen::Index>(F) > p) throw ConfigError("more folds than features");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);

    FoldAssignment out;
    out.F = F;
    out.seed = seed;
    out.fold_of.assign(static_cast<std::size_t>(p), 0);
    const Eigen::Index base = p / F;
    const Eigen::Index extra = p % F;
    std::size_t pos = 0;
    for (int f = 0; f < F; ++f) {
        const Eigen::Index size = base + (f < extra ? 1 : 0);
        for (Eigen::Index i = 0; i < size; ++i)
            out.fold_of[static_cast<std::size_t>(order[pos + static_cast<std::size_t>(i)])] = f;
        pos += static_cast<std::size_t>(size);
    }
    return out;
}

double loo_loss(const MatrixXd& Ybar, const MatrixXd& Cbar, double eta, Eigen::Index p_total) {
    const Eigen::Index m = Ybar.cols();
    const Eigen::Index k = Cbar.cols();
    if (k >= m) throw ConfigError("latent basis leaves no residual dimension");
    if (p_total <= 0) p_total = Ybar.rows();

    VectorXd leverage = VectorXd::Zero(m);
    MatrixXd resid = Ybar;
    if (k > 0) {
        if (Cbar.rows() != m) throw ConfigError("latent basis rows do not match held-out columns");
        Eigen::HouseholderQR<MatrixXd> qr(Cbar);
        MatrixXd Q = qr.householderQ() * MatrixXd::Identity(m, k);
        leverage = Q.rowwise().squaredNorm();
        resid.noalias() -= (Ybar * Q) * Q.transpose();
    }

    const double mn =
        std::min(static_cast<double>(m), static_cast<double>(p_total) / static_cast<double>(m));
    const double threshold = 1.0 - eta * std::log(mn) / mn;
    if (leverage.maxCoeff() > threshold) return std::numeric_limits<double>::infinity();

    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double d = 1.0 - leverage[i];
        loss += resid.col(i).squaredNorm() / (d * d);
    }
    return loss;
}

CbcvReport choose_k(const MatrixXd& Y2, const CovarianceBasis& rotated_basis,
                    const Polytope& poly, int F, int K_max, double eta, std::uint64_t seed,
                    int threads) {
    const Eigen::Index p = Y2.rows();
    const Eigen::Index m = Y2.cols();
    if (K_max < 0 || K_max >= m) throw ConfigError("factor ceiling must lie in [0, m)");
    if (!(eta >= 0.0)) throw ConfigError("leverage margin must be nonnegative");

    CbcvReport out;
    out.fold_assignment = partition_folds(p, F, seed);
    if (p < 10 * m) {
        std::ostringstream w;
        w << "feature count " << p << " is below 10x the working dimension " << m
          << "; factor-count selection may be unstable";
        out.warnings.push_back(w.str());
    }

    const std::vector<MatrixXd> frame_terms = rotated_basis.materialize(m);
    const MatrixXd gram_all = Y2.transpose() * Y2;
    const auto groups = out.fold_assignment.groups();

    out.loss.setConstant(F, K_max + 1, std::numeric_limits<double>::quiet_NaN());
    out.guard_triggered.setConstant(F, K_max + 1, false);
    std::vector<IcaseResult> fold_fits(static_cast<std::size_t>(F));

    parallel_for_index(static_cast<std::size_t>(F), threads, [&](std::size_t f) {
        const auto& hold = groups[f];
        MatrixXd Y_hold(static_cast<Eigen::Index>(hold.size()), m);
        for (std::size_t i = 0; i < hold.size(); ++i)
            Y_hold.row(static_cast<Eigen::Index>(i)) = Y2.row(hold[i]);

        const Eigen::Index p_train = p - Y_hold.rows();
        MatrixXd S2_train =
            (gram_all - Y_hold.transpose() * Y_hold) / static_cast<double>(p_train);

        IcaseResult path;
        try {
            path = run_icase_s2(std::move(S2_train), frame_terms, poly, K_max);
        } catch (const NonConvergence& e) {
            std::ostringstream msg;
            msg << "fold " << f << ": " << e.what();
            throw NonConvergence(msg.str());
        } catch (const DegenerateSpectrum& e) {
            std::ostringstream msg;
            msg << "fold " << f << ": " << e.what();
            throw DegenerateSpectrum(msg.str());
        }

        for (int k = 0; k <= K_max; ++k) {
            const FactorFit& fit = path.fits[static_cast<std::size_t>(k)];
            MatrixXd Wis = sym_inv_sqrt(fit.variance.W);
            MatrixXd Ybar = Y_hold * Wis;
            MatrixXd Cbar = Wis * fit.C_perp;
            const double cell = loo_loss(Ybar, Cbar, eta, p);
            out.loss(static_cast<Eigen::Index>(f), k) = cell;
            out.guard_triggered(static_cast<Eigen::Index>(f), k) = std::isinf(cell);
        }
        fold_fits[f] = std::move(path);
    });

    out.total_loss = out.loss.colwise().sum();
    int best = 0;
    for (int k = 1; k <= K_max; ++k)
        if (out.total_loss[k] < out.total_loss[best]) best = k;
    out.k_hat = best;
    if (!std::isfinite(out.total_loss[best]))
        out.warnings.push_back("every candidate factor count hit the leverage guard");

    out.per_fold_variance.reserve(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f)
        out.per_fold_variance.push_back(
            fold_fits[static_cast<std::size_t>(f)].fits[static_cast<std::size_t>(best)].variance);
    return out;
}

}  // namespace corrfactor
