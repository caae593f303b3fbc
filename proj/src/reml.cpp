#include "corrfactor/reml.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "corrfactor/linalg.hpp"

namespace corrfactor {

namespace {

constexpr double kPgTol = 1e-8;
constexpr int kMaxIter = 500;
constexpr double kActiveTol = 1e-6;

double logdet_from_llt(const Eigen::LLT<MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Maximized objective over the compactified cone. Everything here runs in
// scale-normalized units; callers convert on entry and exit.
struct AscentProblem {
    std::function<double(const VectorXd&, VectorXd*)> eval;
    std::function<bool(const VectorXd&)> floor_ok;
    const Polytope* poly = nullptr;
    VectorXd start;      // unprojected candidate, may be infeasible
    VectorXd reference;  // strictly feasible fallback
    double tol = kPgTol;
    int max_iter = kMaxIter;
};

VectorXd project_feasible(const AscentProblem& prob, const VectorXd& x) {
    VectorXd p = polytope_project(x, *prob.poly);
    if (prob.floor_ok(p)) return p;
    // Walk toward the feasible reference; the constraint set is convex so a
    // feasible point exists on the segment.
    static const double blend[] = {0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 0.85, 1.0};
    for (double t : blend) {
        VectorXd cand = polytope_project((1.0 - t) * p + t * prob.reference, *prob.poly);
        if (prob.floor_ok(cand)) return cand;
    }
    throw InfeasibleStart("no feasible start found inside the compactified cone");
}

VectorXd projected_ascent(const AscentProblem& prob, RemlDiagnostics& diag) {
    const Eigen::Index b = prob.start.size();
    VectorXd theta = project_feasible(prob, prob.start);

    VectorXd grad(b);
    double f = prob.eval(theta, &grad);
    if (!std::isfinite(f)) throw InfeasibleStart("objective not finite at the starting point");

    diag = RemlDiagnostics{};

    auto pg_norm_at = [&](const VectorXd& th, const VectorXd& g) {
        VectorXd pg = polytope_project(th + g, *prob.poly) - th;
        return pg.norm();
    };

    // Inequality rows the iterate itself is pressed against. Only those may
    // restrict the curvature model; a row the step merely approaches must
    // stay out, or the approach gets pinned parallel to it and never lands.
    auto working_set = [&](const VectorXd& th) {
        std::vector<Eigen::Index> rows;
        if (prob.poly->A_ineq.rows() == 0) return rows;
        const double ref = std::max(1.0, th.norm());
        VectorXd slack = prob.poly->A_ineq * th;
        for (Eigen::Index i = 0; i < slack.size(); ++i)
            if (slack[i] <= kActiveTol * ref) rows.push_back(i);
        return rows;
    };

    // Orthonormal basis of the subspace where the working rows and every
    // equality row stay tight; identity when nothing is active, empty at a
    // vertex.
    auto tangent_basis = [&](const std::vector<Eigen::Index>& rows) {
        const Eigen::Index ne = prob.poly->A_eq.rows();
        if (ne == 0 && rows.empty()) return MatrixXd(MatrixXd::Identity(b, b));
        MatrixXd act(b, ne + static_cast<Eigen::Index>(rows.size()));
        for (Eigen::Index j = 0; j < ne; ++j) act.col(j) = prob.poly->A_eq.row(j).transpose();
        for (std::size_t j = 0; j < rows.size(); ++j)
            act.col(ne + static_cast<Eigen::Index>(j)) =
                prob.poly->A_ineq.row(rows[j]).transpose();
        try {
            return null_basis(act);
        } catch (const EmptyNullSpace&) {
            return MatrixXd(b, 0);
        }
    };

    // Quasi-Newton curvature is kept in the tangent coordinates of the
    // current working set. A full-space model goes blind against an active
    // facet: the projection keeps truncating its normal component and the
    // resulting micro-steps feed it useless curvature pairs, which is a
    // textbook way to crawl for hundreds of iterations.
    std::vector<Eigen::Index> work = working_set(theta);
    MatrixXd N = tangent_basis(work);
    MatrixXd H = MatrixXd::Identity(N.cols(), N.cols());
    bool have_curvature = false;

    int it = 0;
    int polish_left = 2;
    for (; it < prob.max_iter; ++it) {
        diag.pg_norm = pg_norm_at(theta, grad);
        if (diag.pg_norm <= prob.tol) {
            diag.converged = true;
            // A couple of steps past the tolerance cost little and move the
            // iterate from tolerance accuracy to near machine accuracy.
            if (polish_left == 0 || diag.pg_norm <= 1e-13) break;
            --polish_left;
        }

        std::vector<Eigen::Index> work_now = working_set(theta);
        if (work_now != work) {
            work = std::move(work_now);
            MatrixXd Nn = tangent_basis(work);
            if (have_curvature && N.cols() > 0 && Nn.cols() > 0) {
                // Carry the curvature over: restrict H to the shared tangent
                // directions and give newly freed ones the average scale.
                // Discarding it outright degrades to steepest ascent whenever
                // the iterate skirts a facet, which is exactly where the
                // surface tends to be worst conditioned.
                const MatrixXd T = Nn.transpose() * N;
                const double fill = H.trace() / static_cast<double>(H.cols());
                H = T * H * T.transpose() +
                    fill * (MatrixXd::Identity(Nn.cols(), Nn.cols()) - T * T.transpose());
            } else {
                H = MatrixXd::Identity(Nn.cols(), Nn.cols());
                have_curvature = false;
            }
            N = std::move(Nn);
        }

        VectorXd theta_new, grad_new(b);
        double f_new = f;
        // Backtracking search along the projected arc of one direction. The
        // ascent test uses the gradient against the realized move because
        // projection can bend the arc away from the nominal direction. A step
        // counts as progress if its gain clears the rounding floor of f, or,
        // once the surface is flat to rounding, if it still contracts the
        // projected gradient decisively; near a quadratic optimum the whole
        // last stretch of parameter accuracy is f-neutral in floating point.
        const double gain_floor = 16.0 * std::numeric_limits<double>::epsilon() * (std::abs(f) + 1.0);
        auto try_arc = [&](const VectorXd& dir) {
            double alpha = 1.0;
            for (int half = 0; half < 60; ++half) {
                VectorXd cand = polytope_project(theta + alpha * dir, *prob.poly);
                alpha *= 0.5;
                if ((cand - theta).norm() == 0.0) continue;
                if (!prob.floor_ok(cand)) continue;
                double fc = prob.eval(cand, &grad_new);
                if (!std::isfinite(fc)) continue;
                double slope = grad.dot(cand - theta);
                if (slope <= 0.0) continue;
                const bool ascended = fc >= f + std::max(1e-4 * slope, gain_floor);
                const bool contracted = fc >= f - gain_floor &&
                                        pg_norm_at(cand, grad_new) <= 0.5 * diag.pg_norm;
                if (ascended || contracted) {
                    theta_new = cand;
                    f_new = fc;
                    return true;
                }
            }
            return false;
        };

        // Quasi-Newton ascent direction inside the working facet. When the
        // facet is nearly exhausted (tangential gradient small against the
        // projected gradient) the remaining ascent lies across a constraint
        // whose multiplier has the releasing sign; the plain gradient arc
        // walks off that facet on its own, the reduced direction never can.
        VectorXd dir = N * (H * (N.transpose() * grad));
        const bool release = (N.transpose() * grad).norm() < 0.1 * diag.pg_norm;
        bool accepted = !release && dir.squaredNorm() > 0.0 && try_arc(dir);
        if (!accepted && (dir - grad).squaredNorm() > 0.0) {
            // Fall back to the projected-gradient arc, which ascends whenever
            // anything does.
            H.setIdentity();
            have_curvature = false;
            accepted = try_arc(grad);
        }

        if (!accepted) {
            if (diag.converged) break;  // polish step failed, the point is fine
            // Certified stall: both arcs exhausted their dyadic steps without
            // a gain above the rounding floor or a decisive projected-gradient
            // contraction, so the surface is flat to floating point here and
            // this is a successful termination. The residual pg_norm stays in
            // the diagnostics. Separately flag contact with the floor or the
            // ball; the floor is not part of the projection, so probe it with
            // an infinitesimal feasible step along the gradient (a radial
            // shrink alone misses non-radial contact).
            diag.pg_norm = pg_norm_at(theta, grad);
            diag.converged = true;
            const double probe_len =
                1e-6 * std::max(1.0, theta.norm()) / std::max(1.0, grad.norm());
            const VectorXd probe = polytope_project(theta + probe_len * grad, *prob.poly);
            if (!prob.floor_ok(probe) || !prob.floor_ok((1.0 - 1e-4) * theta) ||
                theta.norm() >= 0.999 * prob.poly->effective_norm_bound(b))
                diag.boundary = true;
            break;
        }

        // BFGS update in tangent coordinates. Steps that leave the facet are
        // only partially captured; the curvature filter screens those pairs,
        // and the working-set refresh above rebuilds N when the facet
        // actually changes.
        VectorXd s = N.transpose() * (theta_new - theta);
        VectorXd yv = N.transpose() * (grad - grad_new);  // gradient change of -f
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (!have_curvature) {
                H = (sy / yv.squaredNorm()) * MatrixXd::Identity(N.cols(), N.cols());
                have_curvature = true;
            }
            VectorXd Hy = H * yv;
            double yHy = yv.dot(Hy);
            H += ((sy + yHy) / (sy * sy)) * (s * s.transpose());
            H -= (Hy * s.transpose() + s * Hy.transpose()) / sy;
        }

        theta = theta_new;
        f = f_new;
        grad = grad_new;
    }

    diag.iterations = it;
    if (!diag.converged && !diag.boundary) {
        std::ostringstream msg;
        msg << "no convergence after " << prob.max_iter << " iterations, projected gradient "
            << diag.pg_norm;
        throw NonConvergence(msg.str());
    }

    if (prob.poly->A_ineq.rows() > 0) {
        double ref = std::max(1.0, theta.norm());
        VectorXd slack = prob.poly->A_ineq * theta;
        for (Eigen::Index i = 0; i < slack.size(); ++i)
            if (std::abs(slack[i]) <= kActiveTol * ref)
                diag.active_ineq.push_back(static_cast<int>(i));
    }
    return theta;
}

// Least-squares fit of a target second moment onto the basis terms, the
// standard warm start before projection.
VectorXd ls_fit(const std::vector<MatrixXd>& terms, const MatrixXd& target) {
    const auto b = static_cast<Eigen::Index>(terms.size());
    MatrixXd gram(b, b);
    VectorXd rhs(b);
    for (Eigen::Index i = 0; i < b; ++i) {
        rhs[i] = terms[i].cwiseProduct(target).sum();
        for (Eigen::Index j = i; j < b; ++j)
            gram(i, j) = gram(j, i) = terms[i].cwiseProduct(terms[j]).sum();
    }
    return gram.completeOrthogonalDecomposition().solve(rhs);
}

bool floor_ok_terms(const std::vector<MatrixXd>& terms, const VectorXd& theta, double floor) {
    MatrixXd V = build_covariance(theta, terms);
    V.diagonal().array() -= floor;
    return Eigen::LLT<MatrixXd>(V).info() == Eigen::Success;
}

// Data-independent strictly feasible point: the cone projection of the
// least-squares representation of the identity, rescaled if needed.
VectorXd feasible_reference(const std::vector<MatrixXd>& terms, const Polytope& poly) {
    const Eigen::Index dim = terms.front().rows();
    VectorXd tau_id = ls_fit(terms, MatrixXd::Identity(dim, dim));
    const double floor = poly.effective_pd_floor();
    for (double c : {1.0, 2.0, 5.0, 10.0, 0.5}) {
        VectorXd cand = polytope_project(c * tau_id, poly);
        if (floor_ok_terms(terms, cand, floor)) return cand;
    }
    throw InfeasibleStart("cone admits no point clear of the positive-definiteness floor");
}

}  // namespace

std::pair<double, VectorXd> logdet_normalize(const VectorXd& theta,
                                             const std::vector<MatrixXd>& frame_terms) {
    if (theta.size() != static_cast<Eigen::Index>(frame_terms.size()))
        throw ConfigError("coefficient count does not match basis size");
    MatrixXd W = build_covariance(theta, frame_terms);
    const double ld = sym_logdet(W);
    const double m = static_cast<double>(W.rows());
    const double delta2 = std::exp(ld / m);
    return {delta2, theta / delta2};
}

std::pair<double, VectorXd> logdet_normalize(const VectorXd& theta, const CovarianceBasis& basis,
                                             const MatrixXd& Qx) {
    CovarianceBasis rotated = basis.rotate(Qx, Qx.rows());
    std::vector<MatrixXd> terms = rotated.materialize(Qx.cols());
    return logdet_normalize(theta, terms);
}

WorkingModelObjective::WorkingModelObjective(const MatrixXd& S2, const MatrixXd& C_perp,
                                             const std::vector<MatrixXd>& frame_terms) {
    const Eigen::Index m = S2.rows();
    if (S2.cols() != m) throw ConfigError("second moment must be square");
    MatrixXd Qc;
    if (C_perp.cols() == 0) {
        Qc = MatrixXd::Identity(m, m);
    } else {
        if (C_perp.rows() != m) throw ConfigError("latent basis rows do not match second moment");
        Qc = null_basis(C_perp);
    }
    m_ = Qc.cols();
    proj_terms_.reserve(frame_terms.size());
    for (const auto& B : frame_terms) {
        MatrixXd P = Qc.transpose() * B * Qc;
        proj_terms_.push_back(0.5 * (P + P.transpose()));
    }
    S_ = Qc.transpose() * S2 * Qc;
    S_ = 0.5 * (S_ + S_.transpose()).eval();
    scale_ = S_.trace() / static_cast<double>(m_);
    if (!(scale_ > 1e-300)) scale_ = 1.0;
    S_ /= scale_;
}

double WorkingModelObjective::eval(const VectorXd& theta_normalized, VectorXd* grad) const {
    MatrixXd A = build_covariance(theta_normalized, proj_terms_);
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double md = static_cast<double>(m_);
    MatrixXd U = llt.solve(S_);
    double f = -(logdet_from_llt(llt) + U.trace()) / md;
    if (grad) {
        MatrixXd Ainv = llt.solve(MatrixXd::Identity(m_, m_));
        MatrixXd T = U * Ainv;  // A^-1 S A^-1
        grad->resize(static_cast<Eigen::Index>(proj_terms_.size()));
        for (Eigen::Index j = 0; j < grad->size(); ++j) {
            const MatrixXd& B = proj_terms_[j];
            (*grad)[j] = (-Ainv.cwiseProduct(B).sum() + T.cwiseProduct(B).sum()) / md;
        }
    }
    return f;
}

VarianceEstimate reml_working_model_s2(const MatrixXd& S2, const MatrixXd& C_perp,
                                       const std::vector<MatrixXd>& frame_terms,
                                       const Polytope& poly, const VectorXd& start) {
    const auto b = static_cast<Eigen::Index>(frame_terms.size());
    if (b == 0) throw ConfigError("empty covariance basis");
    WorkingModelObjective obj(S2, C_perp, frame_terms);
    const double s = obj.scale();
    const double floor = poly.effective_pd_floor();

    AscentProblem prob;
    prob.eval = [&obj](const VectorXd& th, VectorXd* g) { return obj.eval(th, g); };
    prob.floor_ok = [&](const VectorXd& th) { return floor_ok_terms(frame_terms, th, floor); };
    prob.poly = &poly;
    prob.reference = feasible_reference(frame_terms, poly);
    if (start.size() > 0) {
        if (start.size() != b) throw ConfigError("warm start has wrong length");
        prob.start = start / s;
    } else {
        prob.start = ls_fit(obj.proj_terms_, obj.S_);
    }

    VarianceEstimate est;
    VectorXd theta = s * projected_ascent(prob, est.diag);
    auto [delta2, tau] = logdet_normalize(theta, frame_terms);
    est.delta2 = delta2;
    est.tau = tau;
    est.W = build_covariance(tau, frame_terms);
    est.logdet_residual = sym_logdet(est.W);
    return est;
}

VarianceEstimate reml_working_model(const MatrixXd& Y2, const MatrixXd& C_perp,
                                    const CovarianceBasis& rotated_basis, const Polytope& poly,
                                    const VectorXd& start) {
    const Eigen::Index m = Y2.cols();
    const double p = static_cast<double>(Y2.rows());
    MatrixXd S2 = (Y2.transpose() * Y2) / p;
    return reml_working_model_s2(S2, C_perp, rotated_basis.materialize(m), poly, start);
}

// ---------------------------------------------------------------------------
// Per-feature engine

FeatureRemlEngine::FeatureRemlEngine(MatrixXd design, const CovarianceBasis& basis,
                                     Eigen::Index n, Polytope poly, Path path)
    : design_(std::move(design)), n_(n), poly_(std::move(poly)), basis_(basis) {
    const Eigen::Index q = design_.cols();
    if (design_.rows() != n_) throw ConfigError("design rows do not match sample count");
    if (q >= n_) throw RankDeficientDesign("design leaves no residual degrees of freedom");
    basis_.validate(n_);
    if (poly_.dim() > 0 && poly_.dim() != static_cast<Eigen::Index>(basis_.size()))
        throw ConfigError("constraint columns do not match basis size");

    Eigen::ColPivHouseholderQR<MatrixXd> qr(design_);
    qr.setThreshold(1e-10);
    if (q > 0 && qr.rank() < q) throw RankDeficientDesign("design matrix is rank deficient");

    Eigen::LLT<MatrixXd> dtd(MatrixXd(design_.transpose() * design_));
    if (q > 0) {
        if (dtd.info() != Eigen::Success)
            throw RankDeficientDesign("design Gram is not positive definite");
        logdet_dtd_ = logdet_from_llt(dtd);
        ols_solver_ = dtd.solve(design_.transpose());
    }

    blocked_ = path != Path::dense &&
               basis_.uniform_block_structure(n_, copies_, block_dim_) && copies_ >= 2;
    if (path == Path::blocked && !blocked_)
        throw ConfigError("basis has no uniform block structure for the blocked path");

    if (blocked_) {
        blocks_.reserve(static_cast<std::size_t>(basis_.size()));
        for (Eigen::Index j = 0; j < basis_.size(); ++j)
            blocks_.push_back(basis_.block_of(j, block_dim_));
    } else {
        Qd_ = q > 0 ? null_basis(design_) : MatrixXd::Identity(n_, n_);
        full_terms_ = basis_.materialize(n_);
        proj_terms_.reserve(full_terms_.size());
        for (const auto& B : full_terms_) {
            MatrixXd P = Qd_.transpose() * B * Qd_;
            proj_terms_.push_back(0.5 * (P + P.transpose()));
        }
    }
}

double FeatureRemlEngine::scale_of(const VectorXd& y) const {
    VectorXd r = y;
    if (design_.cols() > 0) r -= design_ * (ols_solver_ * y);
    const double r2 = r.squaredNorm();
    // A response inside the design span has an unbounded restricted
    // likelihood; refuse it instead of optimizing rounding noise.
    if (r2 <= 1e-24 * std::max(1.0, y.squaredNorm()))
        throw SingularCovariance("response has no variance outside the design span");
    return r2 / static_cast<double>(n_ - design_.cols());
}

namespace {

// One blocked likelihood evaluation: V = I_copies (x) M(theta). All the
// heavy objects are q x q or T x T.
struct BlockEval {
    double f = -std::numeric_limits<double>::infinity();
    VectorXd grad;
};

BlockEval blocked_eval(const VectorXd& theta, const VectorXd& y, const MatrixXd& D,
                       const std::vector<MatrixXd>& blocks, Eigen::Index copies,
                       Eigen::Index T, double logdet_dtd, bool want_grad) {
    BlockEval out;
    const Eigen::Index q = D.cols();
    const Eigen::Index n = D.rows();
    const auto b = static_cast<Eigen::Index>(blocks.size());
    const double mdim = static_cast<double>(n - q);

    MatrixXd Mb = MatrixXd::Zero(T, T);
    for (Eigen::Index j = 0; j < b; ++j) Mb += theta[j] * blocks[j];
    Eigen::LLT<MatrixXd> lltM(Mb);
    if (lltM.info() != Eigen::Success) return out;
    const double logdet_M = logdet_from_llt(lltM);
    MatrixXd Minv = lltM.solve(MatrixXd::Identity(T, T));

    MatrixXd U(n, q);
    VectorXd Vy(n);
    for (Eigen::Index i = 0; i < copies; ++i) {
        U.middleRows(i * T, T).noalias() = Minv * D.middleRows(i * T, T);
        Vy.segment(i * T, T).noalias() = Minv * y.segment(i * T, T);
    }
    MatrixXd G = D.transpose() * U;
    G = 0.5 * (G + G.transpose()).eval();
    Eigen::LLT<MatrixXd> lltG(G);
    if (lltG.info() != Eigen::Success) return out;
    VectorXd rhs = D.transpose() * Vy;
    VectorXd gamma = lltG.solve(rhs);
    const double quad = y.dot(Vy) - rhs.dot(gamma);

    out.f = -(static_cast<double>(copies) * logdet_M + logdet_from_llt(lltG) - logdet_dtd +
              quad) /
            mdim;
    if (!want_grad) return out;

    MatrixXd Ginv = lltG.solve(MatrixXd::Identity(q, q));
    VectorXd resid = Vy - U * gamma;  // P y, blockwise
    out.grad.setZero(b);
    std::vector<MatrixXd> Sj(static_cast<std::size_t>(b), MatrixXd::Zero(q, q));
    VectorXd quad_j = VectorXd::Zero(b);
    for (Eigen::Index i = 0; i < copies; ++i) {
        auto Ui = U.middleRows(i * T, T);
        auto ri = resid.segment(i * T, T);
        for (Eigen::Index j = 0; j < b; ++j) {
            const MatrixXd& bj = blocks[j];
            Sj[static_cast<std::size_t>(j)].noalias() += Ui.transpose() * (bj * Ui);
            quad_j[j] += ri.dot(bj * ri);
        }
    }
    for (Eigen::Index j = 0; j < b; ++j) {
        const double trPB = static_cast<double>(copies) * Minv.cwiseProduct(blocks[j]).sum() -
                            Sj[static_cast<std::size_t>(j)].cwiseProduct(Ginv).sum();
        out.grad[j] = (-trPB + quad_j[j]) / mdim;
    }
    return out;
}

}  // namespace

double FeatureRemlEngine::objective(const VectorXd& y, const VectorXd& v, VectorXd* grad) const {
    if (blocked_) {
        BlockEval ev = blocked_eval(v, y, design_, blocks_, copies_, block_dim_, logdet_dtd_,
                                    grad != nullptr);
        if (grad) *grad = ev.grad;
        return ev.f;
    }
    VectorXd z = Qd_.transpose() * y;
    MatrixXd A = build_covariance(v, proj_terms_);
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double mdim = static_cast<double>(z.size());
    VectorXd w = llt.solve(z);
    double f = -(logdet_from_llt(llt) + z.dot(w)) / mdim;
    if (grad) {
        MatrixXd Ainv = llt.solve(MatrixXd::Identity(z.size(), z.size()));
        grad->resize(static_cast<Eigen::Index>(proj_terms_.size()));
        for (Eigen::Index j = 0; j < grad->size(); ++j) {
            const MatrixXd& B = proj_terms_[j];
            (*grad)[j] = (-Ainv.cwiseProduct(B).sum() + w.dot(B * w)) / mdim;
        }
    }
    return f;
}

FeatureVariance FeatureRemlEngine::fit(const VectorXd& y, const VectorXd& start) const {
    if (y.size() != n_) throw ConfigError("response length does not match design");
    const double s = scale_of(y);
    const VectorXd ys = y / std::sqrt(s);
    const double floor = poly_.effective_pd_floor();
    const auto b = static_cast<Eigen::Index>(basis_.size());

    AscentProblem prob;
    prob.poly = &poly_;
    if (blocked_) {
        prob.eval = [&](const VectorXd& th, VectorXd* g) {
            BlockEval ev = blocked_eval(th, ys, design_, blocks_, copies_, block_dim_,
                                        logdet_dtd_, g != nullptr);
            if (g) *g = ev.grad;
            return ev.f;
        };
        prob.floor_ok = [&](const VectorXd& th) { return floor_ok_terms(blocks_, th, floor); };
        prob.reference = feasible_reference(blocks_, poly_);
        // Average residual second moment per block, fitted on the blocks.
        VectorXd r = ys;
        if (design_.cols() > 0) r -= design_ * (ols_solver_ * ys);
        MatrixXd Rbar = MatrixXd::Zero(block_dim_, block_dim_);
        for (Eigen::Index i = 0; i < copies_; ++i) {
            auto ri = r.segment(i * block_dim_, block_dim_);
            Rbar.noalias() += ri * ri.transpose();
        }
        Rbar /= static_cast<double>(copies_);
        prob.start = ls_fit(blocks_, Rbar);
    } else {
        prob.eval = [&](const VectorXd& th, VectorXd* g) { return objective(ys, th, g); };
        prob.floor_ok = [&](const VectorXd& th) { return floor_ok_terms(full_terms_, th, floor); };
        prob.reference = feasible_reference(full_terms_, poly_);
        VectorXd z = Qd_.transpose() * ys;
        prob.start = ls_fit(proj_terms_, MatrixXd(z * z.transpose()));
    }
    if (start.size() > 0) {
        if (start.size() != b) throw ConfigError("warm start has wrong length");
        // A warm start is a hint: a shared covariance estimate suits most
        // features but can sit far from an outlier's own optimum, and
        // starting there costs more iterations than it saves. Keep whichever
        // of the hint and the cold start scores better.
        try {
            const VectorXd warm = start / s;
            const double f_cold = prob.eval(project_feasible(prob, prob.start), nullptr);
            const double f_warm = prob.eval(project_feasible(prob, warm), nullptr);
            if (std::isfinite(f_warm) && (!std::isfinite(f_cold) || f_warm >= f_cold))
                prob.start = warm;
        } catch (const InfeasibleStart&) {
            // keep the cold start; projected_ascent re-checks feasibility
        }
    }

    FeatureVariance out;
    RemlDiagnostics diag;
    VectorXd theta = projected_ascent(prob, diag);
    out.v = s * theta;
    out.boundary = diag.boundary;
    out.converged = diag.converged;
    out.iterations = diag.iterations;
    out.scale = s;
    return out;
}

FeatureRemlEngine::Gls FeatureRemlEngine::gls(const VectorXd& y, const VectorXd& v) const {
    const Eigen::Index q = design_.cols();
    Gls out;
    if (blocked_) {
        MatrixXd Mb = MatrixXd::Zero(block_dim_, block_dim_);
        for (Eigen::Index j = 0; j < v.size(); ++j) Mb += v[j] * blocks_[j];
        Eigen::LLT<MatrixXd> lltM(Mb);
        if (lltM.info() != Eigen::Success)
            throw NotPositiveDefinite("per-feature covariance block is not positive definite");
        MatrixXd Minv = lltM.solve(MatrixXd::Identity(block_dim_, block_dim_));
        MatrixXd U(n_, q);
        VectorXd Vy(n_);
        for (Eigen::Index i = 0; i < copies_; ++i) {
            U.middleRows(i * block_dim_, block_dim_).noalias() =
                Minv * design_.middleRows(i * block_dim_, block_dim_);
            Vy.segment(i * block_dim_, block_dim_).noalias() =
                Minv * y.segment(i * block_dim_, block_dim_);
        }
        out.gram = design_.transpose() * U;
        out.gram = 0.5 * (out.gram + out.gram.transpose()).eval();
        out.gamma = Eigen::LLT<MatrixXd>(out.gram).solve(design_.transpose() * Vy);
        return out;
    }
    MatrixXd V = build_covariance(v, full_terms_);
    Eigen::LLT<MatrixXd> llt(V);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("per-feature covariance is not positive definite");
    MatrixXd U = llt.solve(design_);
    out.gram = design_.transpose() * U;
    out.gram = 0.5 * (out.gram + out.gram.transpose()).eval();
    out.gamma = Eigen::LLT<MatrixXd>(out.gram).solve(U.transpose() * y);
    return out;
}

FeatureVariance reml_feature(const VectorXd& y, const MatrixXd& design,
                             const CovarianceBasis& basis, const Polytope& poly,
                             const VectorXd& start) {
    FeatureRemlEngine engine(design, basis, y.size(), poly);
    return engine.fit(y, start);
}

}  // namespace corrfactor
