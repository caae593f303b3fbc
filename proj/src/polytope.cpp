#include "corrfactor/polytope.hpp"

#include <Eigen/QR>
#include <cmath>
#include <vector>

namespace corrfactor {

Polytope Polytope::free_cone(Eigen::Index b) {
    Polytope p;
    p.A_eq = MatrixXd(0, b);
    p.A_ineq = MatrixXd(0, b);
    return p;
}

bool Polytope::satisfied(const VectorXd& x, double tol) const {
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    if (A_eq.rows() > 0 && (A_eq * x).cwiseAbs().maxCoeff() > tol * scale) return false;
    if (A_ineq.rows() > 0 && (A_ineq * x).minCoeff() < -tol * scale) return false;
    return true;
}

namespace {

// Projection onto the polar cone via Lawson-Hanson NNLS:
//   min_mu ||x + B' mu||^2,  mu_i >= 0 for inequality rows, free for equality
//   rows (an equality is the pair of opposing inequalities).
// The cone projection is then x + B' mu (Moreau decomposition). B stacks
// A_eq on top of A_ineq.
VectorXd polar_multipliers(const VectorXd& x, const MatrixXd& B, Eigen::Index n_free) {
    const Eigen::Index m = B.rows();
    VectorXd mu = VectorXd::Zero(m);
    if (m == 0) return mu;

    std::vector<bool> passive(static_cast<std::size_t>(m), false);
    for (Eigen::Index i = 0; i < n_free; ++i) passive[static_cast<std::size_t>(i)] = true;

    const double tol = 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff()) *
                       std::max(1.0, B.cwiseAbs().maxCoeff());

    auto solve_passive = [&](VectorXd& out) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < m; ++i)
            if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
        out = VectorXd::Zero(m);
        if (idx.empty()) return;
        MatrixXd Bp(idx.size(), B.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) Bp.row(static_cast<Eigen::Index>(r)) = B.row(idx[r]);
        // min || x + Bp' v ||  ->  v = -(Bp Bp')^+ Bp x, rank-deficient safe.
        Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(Bp.transpose());
        VectorXd v = -cod.solve(x);
        for (std::size_t r = 0; r < idx.size(); ++r) out(idx[r]) = v(static_cast<Eigen::Index>(r));
    };

    // Equality multipliers are free and always passive; solve for them up
    // front so the entering decisions below see the equality-projected point
    // rather than x itself.
    if (n_free > 0) solve_passive(mu);

    // Outer loop: bring in the most violated active constraint; inner loop:
    // classic interpolation when a passive multiplier goes negative.
    const int max_outer = 100 * static_cast<int>(m + 1);
    VectorXd trial;
    for (int outer = 0; outer < max_outer; ++outer) {
        const VectorXd grad = B * (x + B.transpose() * mu);
        Eigen::Index best = -1;
        double best_w = tol;
        for (Eigen::Index i = n_free; i < m; ++i) {
            if (passive[static_cast<std::size_t>(i)]) continue;
            const double w = -grad(i);
            if (w > best_w) {
                best_w = w;
                best = i;
            }
        }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;

        for (int inner = 0; inner < max_outer; ++inner) {
            solve_passive(trial);
            double alpha = 1.0;
            Eigen::Index blocker = -1;
            for (Eigen::Index i = n_free; i < m; ++i) {
                if (!passive[static_cast<std::size_t>(i)]) continue;
                if (trial(i) <= 0.0) {
                    const double denom = mu(i) - trial(i);
                    const double a = denom > 0.0 ? mu(i) / denom : 0.0;
                    if (a < alpha) {
                        alpha = a;
                        blocker = i;
                    }
                }
            }
            if (blocker < 0) {
                mu = trial;
                break;
            }
            mu += alpha * (trial - mu);
            for (Eigen::Index i = n_free; i < m; ++i)
                if (passive[static_cast<std::size_t>(i)] && mu(i) <= tol && i == blocker) {
                    passive[static_cast<std::size_t>(i)] = false;
                    mu(i) = 0.0;
                }
        }
    }
    return mu;
}

}  // namespace

VectorXd polytope_project(const VectorXd& x, const Polytope& poly) {
    const Eigen::Index b = x.size();
    if (!x.allFinite()) throw InfeasiblePolytope("polytope_project: non-finite input");
    if ((poly.A_eq.rows() > 0 && poly.A_eq.cols() != b) ||
        (poly.A_ineq.rows() > 0 && poly.A_ineq.cols() != b))
        throw InfeasiblePolytope("polytope_project: constraint dimension mismatch");

    const Eigen::Index ne = poly.A_eq.rows();
    const Eigen::Index ni = poly.A_ineq.rows();
    MatrixXd B(ne + ni, b);
    if (ne > 0) B.topRows(ne) = poly.A_eq;
    if (ni > 0) B.bottomRows(ni) = poly.A_ineq;

    VectorXd proj = x;
    if (ne + ni > 0) {
        const VectorXd mu = polar_multipliers(x, B, ne);
        proj = x + B.transpose() * mu;
        // Snap tiny constraint residuals to the cone exactly.
        if (ne > 0) {
            // Re-project onto the equality subspace to kill rounding drift.
            Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(poly.A_eq);
            proj -= cod.pseudoInverse() * (poly.A_eq * proj);
        }
        if (ni > 0) {
            // Numerical guard only; NNLS already enforces feasibility to tol.
        }
    }

    const double radius = poly.effective_norm_bound(b);
    const double norm = proj.norm();
    if (norm > radius) proj *= radius / norm;
    return proj;
}

double projection_kkt_residual(const VectorXd& x, const VectorXd& proj, const Polytope& poly) {
    const Eigen::Index b = x.size();
    const double scale = std::max(1.0, x.norm());
    double res = 0.0;
    if (poly.A_eq.rows() > 0) res = std::max(res, (poly.A_eq * proj).cwiseAbs().maxCoeff() / scale);
    if (poly.A_ineq.rows() > 0)
        res = std::max(res, std::max(0.0, -(poly.A_ineq * proj).minCoeff()) / scale);
    const double radius = poly.effective_norm_bound(b);
    res = std::max(res, std::max(0.0, proj.norm() - radius) / scale);

    // Stationarity through the Moreau decomposition: the residual x - proj
    // must be orthogonal to proj and lie in the polar cone. The polar
    // membership is certified by re-projecting the residual direction onto
    // the cone, which must give ~0 (plus the ball multiplier direction when
    // the clamp is active).
    VectorXd r = x - proj;
    if (proj.norm() > 0.0 && proj.norm() >= radius * (1.0 - 1e-12)) {
        // Remove the radial component the ball multiplier accounts for.
        const VectorXd phat = proj / proj.norm();
        const double radial = r.dot(phat);
        if (radial > 0.0) r -= radial * phat;
    }
    res = std::max(res, std::abs(r.dot(proj)) / (scale * scale));
    Polytope cone_only = poly;
    cone_only.norm_bound = 1e300;
    const VectorXd back = polytope_project(r, cone_only);
    res = std::max(res, back.norm() / scale);
    return res;
}

}  // namespace corrfactor
