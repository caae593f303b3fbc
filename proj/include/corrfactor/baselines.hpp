#ifndef CORRFACTOR_BASELINES_HPP
#define CORRFACTOR_BASELINES_HPP

#include <cstdint>
#include <utility>

#include "corrfactor/types.hpp"

namespace corrfactor {

// Top-k right singular vectors of Y2, computed from the small-side
// eigendecomposition. Throws DegenerateSpectrum on an exact tie at the cut.
MatrixXd svd_baseline(const MatrixXd& Y2, int k);

// Permutation-null estimate of the factor count: entries of each row are
// permuted independently (the per-row stream is keyed by row index), and
// K-hat counts observed singular values exceeding the chosen quantile of
// the null singular values at the same index. Quantile is taken as the
// ceil(q * (n_perm + 1)) order statistic.
int parallel_analysis(const MatrixXd& Y2, int n_perm = 99, double quantile = 0.95,
                      std::uint64_t seed = 1, int threads = 0);

// Largest principal angle between the column spans, in radians:
// arccos of the smallest singular value of Qa' Qb. Throws RankDeficient.
double subspace_angle(const MatrixXd& A, const MatrixXd& B);

// Discovery summary at a q-value threshold: false discovery proportion
// (denominator floored at one discovery) and true recovery proportion.
std::pair<double, double> fdp_trp(const VectorXd& q, const std::vector<bool>& truth_nonnull,
                                  double threshold = 0.2);

}  // namespace corrfactor

#endif
