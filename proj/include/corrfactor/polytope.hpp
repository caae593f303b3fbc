#ifndef CORRFACTOR_POLYTOPE_HPP
#define CORRFACTOR_POLYTOPE_HPP

#include "corrfactor/types.hpp"

namespace corrfactor {

// Constraint cone on the variance multipliers plus the compactification
// bounds. A_eq x = 0, A_ineq x >= 0; norm_bound and pd_floor are expressed in
// scale-normalized units (unit average residual second moment) -- the REML
// routines normalize their inputs before applying them, which is what keeps
// everything exactly scale-equivariant.
struct Polytope {
    MatrixXd A_eq;     // N_E x b (may have zero rows)
    MatrixXd A_ineq;   // N_I x b (may have zero rows)
    double norm_bound = 0.0;  // radius of the ||x||_2 ball; 0 = default 2*b*c2
    double pd_floor = 0.0;    // eigenvalue floor on V(x); 0 = default 1/(2*c2)

    // c2 knob behind the defaults.
    static constexpr double kC2 = 50.0;

    double effective_norm_bound(Eigen::Index b) const {
        return norm_bound > 0.0 ? norm_bound : 2.0 * static_cast<double>(b) * kC2;
    }
    double effective_pd_floor() const { return pd_floor > 0.0 ? pd_floor : 1.0 / (2.0 * kC2); }

    Eigen::Index dim() const {
        return A_eq.rows() > 0 ? A_eq.cols() : A_ineq.cols();
    }

    // Unconstrained cone (no rows), for the d-free fitting paths.
    static Polytope free_cone(Eigen::Index b);

    bool satisfied(const VectorXd& x, double tol = 1e-8) const;
};

// Euclidean projection of x onto {A_eq x' = 0, A_ineq x' >= 0,
// ||x'|| <= norm_bound}; the cone part is a small primal active-set QP, the
// ball is an exact radial clamp afterwards (projection onto cone-intersect-
// ball factorizes that way because the cone is scale-invariant). KKT residual
// of the result is <= 1e-8. Throws InfeasiblePolytope only on malformed
// input (homogeneous constraints always admit 0).
VectorXd polytope_project(const VectorXd& x, const Polytope& poly);

// KKT residual of a claimed projection, for tests and internal asserts.
double projection_kkt_residual(const VectorXd& x, const VectorXd& proj, const Polytope& poly);

}  // namespace corrfactor

#endif
