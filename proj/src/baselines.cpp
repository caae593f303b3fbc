#include "corrfactor/baselines.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "corrfactor/linalg.hpp"
#include "corrfactor/rng.hpp"
#include "corrfactor/threading.hpp"

namespace corrfactor {

namespace {

// Singular values of Y via the small-side Gram eigendecomposition,
// descending. Negative eigenvalue dust from roundoff is clamped.
VectorXd singular_values(const MatrixXd& Y) {
    MatrixXd G = Y.transpose() * Y;
    G = 0.5 * (G + G.transpose()).eval();
    VectorXd evals;
    MatrixXd evecs;
    sym_eig_desc(G, evals, evecs);
    (void)evecs;
    return evals.cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

MatrixXd svd_baseline(const MatrixXd& Y2, int k) {
    const Eigen::Index m = Y2.cols();
    if (k < 0 || k >= std::min(Y2.rows(), m))
        throw ConfigError("rank must lie in [0, min(p, m))");
    if (k == 0) return MatrixXd(m, 0);
    MatrixXd G = Y2.transpose() * Y2;
    G = 0.5 * (G + G.transpose()).eval();
    VectorXd evals;
    MatrixXd evecs;
    sym_eig_desc(G, evals, evecs);
    const double gap_ref = std::max(std::abs(evals(k - 1)), std::abs(evals(k)));
    if (std::abs(evals(k - 1) - evals(k)) <= 1e-12 * gap_ref) {
        std::ostringstream msg;
        msg << "singular value tie at the cut for k=" << k;
        throw DegenerateSpectrum(msg.str());
    }
    MatrixXd Uk = evecs.leftCols(k);
    fix_signs(Uk);
    return Uk;
}

int parallel_analysis(const MatrixXd& Y2, int n_perm, double quantile, std::uint64_t seed,
                      int threads) {
    if (n_perm < 19) throw ConfigError("need at least 19 permutations");
    if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("quantile must lie in (0,1)");
    const Eigen::Index p = Y2.rows();
    const Eigen::Index m = Y2.cols();
    const Eigen::Index n_sv = std::min(p, m);

    const VectorXd observed = singular_values(Y2).head(n_sv);

    // null_sv(b, i): i-th singular value of the b-th row-permuted copy.
    MatrixXd null_sv(n_perm, n_sv);
    Rng root(seed);
    parallel_for_index(static_cast<std::size_t>(n_perm), threads, [&](std::size_t b) {
        MatrixXd Yp(p, m);
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
        Rng perm_rng = root.child(static_cast<std::uint64_t>(b));
        for (Eigen::Index g = 0; g < p; ++g) {
            Rng row_rng = perm_rng.child(static_cast<std::uint64_t>(g));
            for (Eigen::Index i = 0; i < m; ++i) perm[static_cast<std::size_t>(i)] = i;
            row_rng.shuffle(perm);
            for (Eigen::Index i = 0; i < m; ++i)
                Yp(g, i) = Y2(g, perm[static_cast<std::size_t>(i)]);
        }
        null_sv.row(static_cast<Eigen::Index>(b)) = singular_values(Yp).head(n_sv).transpose();
    });

    // Order-statistic index for the quantile, 1-based over n_perm draws.
    const auto ord = static_cast<Eigen::Index>(
        std::ceil(quantile * static_cast<double>(n_perm + 1)));
    const Eigen::Index pick = std::min<Eigen::Index>(std::max<Eigen::Index>(ord, 1), n_perm);

    // Retain leading components while they exceed the index-matched null
    // quantile and stop at the first failure. Counting non-consecutive
    // exceedances instead would report ~5% of the trailing indices as
    // factors on pure noise, which defeats the null calibration the
    // procedure exists for.
    int k_hat = 0;
    std::vector<double> column(static_cast<std::size_t>(n_perm));
    for (Eigen::Index i = 0; i < n_sv; ++i) {
        for (int b = 0; b < n_perm; ++b) column[static_cast<std::size_t>(b)] = null_sv(b, i);
        std::nth_element(column.begin(), column.begin() + (pick - 1), column.end());
        if (observed[i] <= column[static_cast<std::size_t>(pick - 1)]) break;
        ++k_hat;
    }
    return k_hat;
}

double subspace_angle(const MatrixXd& A, const MatrixXd& B) {
    if (A.cols() == 0 || B.cols() == 0)
        throw ConfigError("subspace angle needs nonempty bases");
    if (A.rows() != B.rows()) throw ConfigError("subspaces live in different dimensions");
    MatrixXd Qa = orthonormalize(A);
    MatrixXd Qb = orthonormalize(B);
    if (Qa.cols() < A.cols() || Qb.cols() < B.cols())
        throw RankDeficient("subspace basis is rank deficient");
    Eigen::JacobiSVD<MatrixXd> svd(Qa.transpose() * Qb);
    const Eigen::Index k = std::min(Qa.cols(), Qb.cols());
    double smallest = svd.singularValues()[k - 1];
    smallest = std::clamp(smallest, -1.0, 1.0);
    return std::acos(smallest);
}

std::pair<double, double> fdp_trp(const VectorXd& q, const std::vector<bool>& truth_nonnull,
                                  double threshold) {
    if (q.size() != static_cast<Eigen::Index>(truth_nonnull.size()))
        throw ConfigError("q-values and truth labels have different lengths");
    Eigen::Index discoveries = 0, false_disc = 0, true_disc = 0, nonnull = 0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        const bool is_nonnull = truth_nonnull[static_cast<std::size_t>(i)];
        if (is_nonnull) ++nonnull;
        if (std::isfinite(q[i]) && q[i] <= threshold) {
            ++discoveries;
            if (is_nonnull)
                ++true_disc;
            else
                ++false_disc;
        }
    }
    const double fdp = static_cast<double>(false_disc) /
                       static_cast<double>(std::max<Eigen::Index>(1, discoveries));
    const double trp =
        nonnull > 0 ? static_cast<double>(true_disc) / static_cast<double>(nonnull) : 0.0;
    return {fdp, trp};
}

}  // namespace corrfactor
