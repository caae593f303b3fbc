#include "corrfactor/simulate.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "corrfactor/linalg.hpp"
#include "corrfactor/rng.hpp"

namespace corrfactor {

namespace {

// Factor strengths n down to 3, geometric in between.
VectorXd geometric_strengths(double top, double bottom, int K) {
    VectorXd g(K);
    if (K == 1) {
        g(0) = top;
        return g;
    }
    const double ratio = std::pow(bottom / top, 1.0 / (K - 1));
    double v = top;
    for (int k = 0; k < K; ++k) {
        g(k) = v;
        v *= ratio;
    }
    return g;
}

// Outer-product direction vectors of the six tissue terms, order
// (11, 12, 13, 22, 23, 33).
std::vector<Eigen::Vector3d> tissue_directions() {
    const Eigen::Vector3d e1(1, 0, 0);
    const Eigen::Vector3d e2(0, 1, 0);
    const Eigen::Vector3d e3(0, 0, 1);
    return {e1, e1 + e2, e1 + e3, e2, e2 + e3, e3};
}

Eigen::Matrix3d tissue_block_from_tau(const VectorXd& tau) {
    const auto dirs = tissue_directions();
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    for (int j = 0; j < 6; ++j) M += tau(j) * (dirs[static_cast<std::size_t>(j)] * dirs[static_cast<std::size_t>(j)].transpose());
    return M;
}

// Inverse of the above: off-diagonal multipliers are the covariances, the
// diagonal ones absorb what the shared directions already contribute.
VectorXd tau_from_tissue_block(const Eigen::Matrix3d& M) {
    VectorXd tau(6);
    tau(1) = M(0, 1);
    tau(2) = M(0, 2);
    tau(4) = M(1, 2);
    tau(0) = M(0, 0) - tau(1) - tau(2);
    tau(3) = M(1, 1) - tau(1) - tau(4);
    tau(5) = M(2, 2) - tau(2) - tau(4);
    return tau;
}

// Rows 3i..3i+2 of (I (x) M) A.
MatrixXd per_individual_apply(const Eigen::Matrix3d& M, const MatrixXd& A) {
    MatrixXd out(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); i += 3) out.middleRows(i, 3) = M * A.middleRows(i, 3);
    return out;
}

void make_design(Rng& rng, int n_individuals, int n_tissues, MatrixXd& X, MatrixXd& Z) {
    const Eigen::Index n = static_cast<Eigen::Index>(n_individuals) * n_tissues;
    std::vector<int> order(static_cast<std::size_t>(n_individuals));
    for (int i = 0; i < n_individuals; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<char> treated(static_cast<std::size_t>(n_individuals), 0);
    for (int i = 0; i < n_individuals / 2; ++i) treated[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    X = MatrixXd::Zero(n, 1);
    Z = MatrixXd::Zero(n, n_tissues);
    for (int i = 0; i < n_individuals; ++i)
        for (int t = 0; t < n_tissues; ++t) {
            const Eigen::Index row = static_cast<Eigen::Index>(i) * n_tissues + t;
            X(row, 0) = treated[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            Z(row, t) = 1.0;
        }
}

// log|Q' (I (x) M) Q| for orthonormal Q.
double projected_logdet(const Eigen::Matrix3d& M, const MatrixXd& Q) {
    const MatrixXd QtVQ = Q.transpose() * per_individual_apply(M, Q);
    return sym_logdet(0.5 * (QtVQ + QtVQ.transpose()));
}

struct ConfounderPieces {
    MatrixXd from_treatment;  // n x K, the part multiplied by alpha
    MatrixXd from_noise;      // n x K, the whitened-Gram-normalized part
};

// Confounders are alpha * X 1' plus a Gaussian block normalized so its
// projected, population-whitened sample Gram is exactly I_K.
ConfounderPieces confounder_pieces(const MatrixXd& X, const MatrixXd& Z, const MatrixXd& Xi,
                                   const Eigen::Matrix3d& Mstar) {
    const Eigen::Index n = X.rows();
    const Eigen::Index K = Xi.cols();
    MatrixXd XZ(n, X.cols() + Z.cols());
    XZ << X, Z;
    const MatrixXd Q = null_basis(XZ);
    const Eigen::Index m = Q.cols();

    ConfounderPieces out;
    out.from_treatment = X * Eigen::RowVectorXd::Ones(K);
    if (K == 0) {
        out.from_noise = MatrixXd::Zero(n, 0);
        return out;
    }

    // Population covariance rescaled to unit log-determinant in the
    // projected frame, matching how the generated V_g are normalized.
    const double cstar = std::exp(-projected_logdet(Mstar, Q) / static_cast<double>(m));
    const MatrixXd QtVQ = Q.transpose() * per_individual_apply(Mstar, Q);
    const MatrixXd T = Q.transpose() * Xi;
    Eigen::LLT<MatrixXd> llt(0.5 * (QtVQ + QtVQ.transpose()));
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("population covariance is singular in the projected frame");
    MatrixXd gram = T.transpose() * llt.solve(T) / (static_cast<double>(m) * cstar);
    gram = 0.5 * (gram + gram.transpose());
    out.from_noise = Xi * sym_inv_sqrt(gram);
    return out;
}

double partial_r2(const VectorXd& x_res, double x_norm2, const MatrixXd& C_res) {
    if (C_res.cols() == 0 || x_norm2 <= 0.0) return 0.0;
    const MatrixXd Qc = orthonormalize(C_res);
    return (Qc.transpose() * x_res).squaredNorm() / x_norm2;
}

}  // namespace

SimConfig SimConfig::multitissue_defaults(std::uint64_t seed) {
    SimConfig c;
    c.seed = seed;
    return c.resolved();
}

SimConfig SimConfig::resolved() const {
    SimConfig c = *this;
    if (c.p < 1) throw ConfigError("simulation: p must be positive");
    if (c.n_individuals < 2) throw ConfigError("simulation: at least two individuals required");
    if (c.n_tissues < 1) throw ConfigError("simulation: at least one tissue required");
    if (c.K < 0) throw ConfigError("simulation: K must be non-negative");
    if (c.K > 0 && c.K >= c.n() - c.n_tissues - 1)
        throw ConfigError("simulation: K leaves no residual dimensions");
    if (!(c.residual_df > 2.0))
        throw ConfigError("simulation: residual_df must exceed 2 (or be +inf) so residuals can be standardized");
    if (!(c.component_cv > 0.0)) throw ConfigError("simulation: component_cv must be positive");
    if (!(c.beta_sparsity >= 0.0 && c.beta_sparsity <= 1.0))
        throw ConfigError("simulation: beta_sparsity must lie in [0, 1]");

    if (c.pi.size() == 0) c.pi = VectorXd::Zero(c.K);
    if (c.pi.size() != c.K) throw ConfigError("simulation: pi must have one entry per factor");
    for (int k = 0; k < c.K; ++k)
        if (!(c.pi(k) >= 0.0 && c.pi(k) < 1.0)) throw ConfigError("simulation: pi entries must lie in [0, 1)");

    if (c.eta.size() == 0 && c.K > 0) {
        // Factor strength gamma_k decays geometrically from n to 3; the slab
        // sd compensates for the spike mass so E[l^2] = gamma_k either way.
        const VectorXd gamma = geometric_strengths(static_cast<double>(c.n()), 3.0, c.K);
        c.eta = VectorXd(c.K);
        for (int k = 0; k < c.K; ++k) c.eta(k) = std::sqrt(gamma(k) / (1.0 - c.pi(k)));
    }
    if (c.eta.size() != c.K) throw ConfigError("simulation: eta must have one entry per factor");

    if (c.component_means.size() == 0) {
        c.component_means = VectorXd(6);
        c.component_means << 0.8, 1.25, 0.4, 0.75, 1.0, 0.2;
    }
    if (c.component_means.size() != 6 || c.component_means.minCoeff() <= 0.0)
        throw ConfigError("simulation: component_means must be six positive values");
    return c;
}

std::pair<CovarianceBasis, Polytope> build_tissue_basis(int n_individuals, int n_tissues) {
    if (n_tissues != 3)
        throw UnsupportedTissueCount("tissue covariance basis is only worked out for three tissues, got " +
                                     std::to_string(n_tissues));
    if (n_individuals < 1) throw ConfigError("tissue basis: need at least one individual");

    CovarianceBasis basis;
    for (const auto& a : tissue_directions())
        basis.terms.push_back(BasisTerm::Kronecker(n_individuals, a * a.transpose()));

    // Cross-tissue multipliers are non-negative and each marginal variance
    // v_rr + sum of its shared terms stays non-negative.
    Polytope poly;
    poly.A_eq = MatrixXd::Zero(0, 6);
    poly.A_ineq = MatrixXd::Zero(6, 6);
    poly.A_ineq(0, 1) = 1.0;
    poly.A_ineq(1, 2) = 1.0;
    poly.A_ineq(2, 4) = 1.0;
    poly.A_ineq.row(3) << 1, 1, 1, 0, 0, 0;
    poly.A_ineq.row(4) << 0, 1, 0, 1, 1, 0;
    poly.A_ineq.row(5) << 0, 0, 1, 0, 1, 1;
    return {std::move(basis), std::move(poly)};
}

std::pair<CovarianceBasis, Polytope> build_twin_basis() {
    const Eigen::Vector4d ones = Eigen::Vector4d::Ones();
    const Eigen::Vector4d age0(1, 0, 1, 0);
    const Eigen::Vector4d age18(0, 1, 0, 1);
    MatrixXd pair_block = MatrixXd::Zero(4, 4);
    pair_block.topLeftCorner(2, 2).setOnes();
    pair_block.bottomRightCorner(2, 2).setOnes();

    CovarianceBasis basis;
    basis.terms.push_back(BasisTerm::Kronecker(0, ones * ones.transpose()));
    basis.terms.push_back(BasisTerm::Kronecker(0, pair_block));
    basis.terms.push_back(BasisTerm::Kronecker(0, age0 * age0.transpose()));
    basis.terms.push_back(BasisTerm::Kronecker(0, age18 * age18.transpose()));
    basis.terms.push_back(BasisTerm::Kronecker(0, MatrixXd(age0.asDiagonal())));
    basis.terms.push_back(BasisTerm::Kronecker(0, MatrixXd(age18.asDiagonal())));

    // Shared components non-negative; each age-specific idiosyncratic
    // multiplier may dip negative only as far as the pair and same-age terms
    // cover for it.
    Polytope poly;
    poly.A_eq = MatrixXd::Zero(0, 6);
    poly.A_ineq = MatrixXd::Zero(8, 6);
    poly.A_ineq(0, 0) = 1.0;
    poly.A_ineq(1, 1) = 1.0;
    poly.A_ineq(2, 2) = 1.0;
    poly.A_ineq(3, 3) = 1.0;
    poly.A_ineq.row(4) << 0, 1, 0, 0, 1, 0;
    poly.A_ineq.row(5) << 0, 1, 0, 0, 0, 1;
    poly.A_ineq.row(6) << 0, 0, 1, 0, 1, 0;
    poly.A_ineq.row(7) << 0, 0, 0, 1, 0, 1;
    return {std::move(basis), std::move(poly)};
}

MatrixXd population_tissue_block(const SimConfig& config) {
    const SimConfig c = config.resolved();
    const VectorXd& m = c.component_means;
    const double second = 1.0 + c.component_cv * c.component_cv;  // E[W^2]/E[W]^2 for the Gammas
    Eigen::Matrix3d M;
    M(0, 0) = m(0) + m(5);
    M(0, 1) = m(0) * m(1);
    M(0, 2) = m(0) * m(3);
    M(1, 1) = m(0) * m(1) * m(1) * second + m(2) + m(5);
    M(1, 2) = m(0) * m(1) * m(3) + m(2) * m(4);
    M(2, 2) = m(0) * m(3) * m(3) * second + m(2) * m(4) * m(4) * second + m(5);
    M(1, 0) = M(0, 1);
    M(2, 0) = M(0, 2);
    M(2, 1) = M(1, 2);
    return M;
}

double calibrate_alpha(const SimConfig& config, double target_r2) {
    const SimConfig c = config.resolved();
    if (c.n_tissues != 3)
        throw UnsupportedTissueCount("calibration uses the three-tissue population covariance");
    if (c.K == 0) return 0.0;
    if (!(target_r2 > 0.0 && target_r2 < 1.0))
        throw ConfigError("calibration: target R^2 must lie in (0, 1)");

    const Eigen::Index n = c.n();
    const Eigen::Matrix3d Mstar = population_tissue_block(c);
    const Eigen::Matrix3d Mwhite = sym_inv_sqrt(Mstar);

    // Fixed internal stream: alpha depends on the design dimensions only,
    // never on the replicate seed, so every replicate of a configuration
    // shares one loading scale.
    Rng cal(0x7a11ce5eedULL);

    struct Scenario {
        VectorXd x_res;
        double x_norm2 = 0.0;
        MatrixXd U;   // treatment part after whitening and Z-residualization
        MatrixXd W0;  // noise part, same treatment
    };

    constexpr int kDraws = 64;
    std::vector<Scenario> scenarios;
    scenarios.reserve(kDraws);
    for (int draw = 0; draw < kDraws; ++draw) {
        Rng r = cal.child(static_cast<std::uint64_t>(draw));
        MatrixXd X;
        MatrixXd Z;
        make_design(r, c.n_individuals, c.n_tissues, X, Z);
        MatrixXd Xi(n, c.K);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int k = 0; k < c.K; ++k) Xi(i, k) = r.normal();

        const ConfounderPieces pieces = confounder_pieces(X, Z, Xi, Mstar);

        const MatrixXd wX = per_individual_apply(Mwhite, X);
        const MatrixXd wZ = per_individual_apply(Mwhite, Z);
        const MatrixXd wU = per_individual_apply(Mwhite, pieces.from_treatment);
        const MatrixXd wW0 = per_individual_apply(Mwhite, pieces.from_noise);

        const MatrixXd Qz = orthonormalize(wZ);
        Scenario s;
        s.x_res = wX.col(0) - Qz * (Qz.transpose() * wX.col(0));
        s.x_norm2 = s.x_res.squaredNorm();
        s.U = wU - Qz * (Qz.transpose() * wU);
        s.W0 = wW0 - Qz * (Qz.transpose() * wW0);
        scenarios.push_back(std::move(s));
    }

    auto mean_r2 = [&](double alpha) {
        double acc = 0.0;
        for (const auto& s : scenarios)
            acc += partial_r2(s.x_res, s.x_norm2, alpha * s.U + s.W0);
        return acc / kDraws;
    };

    const double base = mean_r2(0.0);
    if (base >= target_r2)
        throw CalibrationFailure("confounders already explain " + std::to_string(base) +
                                 " of the treatment variable at alpha = 0");

    double lo = 0.0;
    double hi = 1.0;
    int expansions = 0;
    while (mean_r2(hi) < target_r2) {
        hi *= 2.0;
        if (++expansions > 40)
            throw CalibrationFailure("no loading scale reaches the target R^2 " + std::to_string(target_r2));
    }

    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r2 = mean_r2(mid);
        if (std::abs(r2 - target_r2) <= 1e-3) return mid;
        (r2 < target_r2 ? lo : hi) = mid;
        if (hi - lo <= 1e-13 * std::max(1.0, hi)) break;
    }
    throw CalibrationFailure("bisection stalled before reaching the target R^2");
}

SimulatedDataset simulate_multitissue(const SimConfig& config) {
    const SimConfig c = config.resolved();
    auto [basis, poly] = build_tissue_basis(c.n_individuals, c.n_tissues);
    const Eigen::Index n = c.n();
    const Eigen::Index p = c.p;
    const double alpha = std::isnan(c.alpha) ? calibrate_alpha(c) : c.alpha;
    const double shape = 1.0 / (c.component_cv * c.component_cv);
    const VectorXd& means = c.component_means;

    Rng root(c.seed);
    Rng assign_rng = root.child(1);
    Rng component_rng = root.child(2);
    Rng xi_rng = root.child(3);
    Rng loading_rng = root.child(4);
    Rng beta_rng = root.child(5);
    Rng noise_rng = root.child(6);

    SimulatedDataset out;
    out.basis = basis;
    out.polytope = poly;
    out.alpha_used = alpha;
    make_design(assign_rng, c.n_individuals, c.n_tissues, out.X, out.Z);

    // Per-feature tissue covariance: two shared factors with Gamma loadings
    // plus Gamma noise, all with one coefficient of variation.
    out.tau_true = MatrixXd(p, 6);
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = component_rng.child(static_cast<std::uint64_t>(g));
        const double v1 = r.gamma(shape, means(0) / shape);
        const double f2 = r.gamma(shape, means(1) / shape);
        const double v2 = r.gamma(shape, means(2) / shape);
        const double f3 = r.gamma(shape, means(3) / shape);
        const double r3 = r.gamma(shape, means(4) / shape);
        const Eigen::Vector3d sig(r.gamma(shape, means(5) / shape), r.gamma(shape, means(5) / shape),
                                  r.gamma(shape, means(5) / shape));
        const Eigen::Vector3d lam(1.0, f2, f3);
        const Eigen::Vector3d mu(0.0, 1.0, r3);
        Eigen::Matrix3d M = v1 * (lam * lam.transpose()) + v2 * (mu * mu.transpose());
        M += Eigen::Matrix3d(sig.asDiagonal());
        if (c.independent_residuals) M = (M.trace() / 3.0) * Eigen::Matrix3d::Identity();
        out.tau_true.row(g) = tau_from_tissue_block(M).transpose();
    }

    MatrixXd Xi(n, c.K);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < c.K; ++k) Xi(i, k) = xi_rng.normal();
    const Eigen::Matrix3d Mstar = population_tissue_block(c);
    const ConfounderPieces pieces = confounder_pieces(out.X, out.Z, Xi, Mstar);
    out.C_true = alpha * pieces.from_treatment + pieces.from_noise;

    out.L_true = MatrixXd(p, c.K);
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = loading_rng.child(static_cast<std::uint64_t>(g));
        for (int k = 0; k < c.K; ++k) {
            const double u = r.uniform();
            out.L_true(g, k) = u < c.pi(k) ? 0.0 : c.eta(k) * r.normal();
        }
    }

    out.beta_true = VectorXd(p);
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = beta_rng.child(static_cast<std::uint64_t>(g));
        const double u = r.uniform();
        out.beta_true(g) = u < c.beta_sparsity ? 0.0 : c.beta_sd * r.normal();
    }

    // Joint rescale of every V_g so the average has unit log-determinant in
    // the frame orthogonal to [X Z]; the working-model scale parameter is
    // then exactly 1 in population.
    {
        MatrixXd XZ(n, out.X.cols() + out.Z.cols());
        XZ << out.X, out.Z;
        const MatrixXd Q = null_basis(XZ);
        const Eigen::Matrix3d Mbar = tissue_block_from_tau(out.tau_true.colwise().mean().transpose());
        const double scale = std::exp(-projected_logdet(Mbar, Q) / static_cast<double>(Q.cols()));
        out.tau_true *= scale;
    }

    const bool gaussian = std::isinf(c.residual_df);
    const double t_scale = gaussian ? 1.0 : std::sqrt(c.residual_df / (c.residual_df - 2.0));
    MatrixXd Y = out.beta_true * out.X.transpose() + out.L_true * out.C_true.transpose();
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = noise_rng.child(static_cast<std::uint64_t>(g));
        const Eigen::Matrix3d Ms = sym_sqrt(tissue_block_from_tau(out.tau_true.row(g).transpose()));
        for (int i = 0; i < c.n_individuals; ++i) {
            Eigen::Vector3d t;
            for (int j = 0; j < 3; ++j) t(j) = gaussian ? r.normal() : r.student_t(c.residual_df) / t_scale;
            Y.row(g).segment(static_cast<Eigen::Index>(i) * 3, 3) += (Ms * t).transpose();
        }
    }

    out.Y.values = std::move(Y);
    out.Y.feature_ids.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index g = 0; g < p; ++g) out.Y.feature_ids.push_back("feature_" + std::to_string(g + 1));
    out.Y.sample_ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < c.n_individuals; ++i)
        for (int t = 0; t < c.n_tissues; ++t)
            out.Y.sample_ids.push_back("ind" + std::to_string(i + 1) + "_t" + std::to_string(t + 1));
    out.Y.validate();
    return out;
}

SimulatedDataset simulate_generic(const CovarianceBasis& basis, const Polytope& poly, Eigen::Index p,
                                  Eigen::Index n, int K, std::uint64_t seed) {
    basis.validate(n);
    const Eigen::Index b = basis.size();
    if (p < 1 || K < 0 || n < 2) throw ConfigError("generic simulation: need p >= 1, n >= 2, K >= 0");
    const std::vector<MatrixXd> terms = basis.materialize(n);

    // Best cone-feasible approximation of the identity anchors the
    // per-feature multipliers.
    MatrixXd gram(b, b);
    VectorXd rhs(b);
    for (Eigen::Index i = 0; i < b; ++i) {
        rhs(i) = terms[static_cast<std::size_t>(i)].trace();
        for (Eigen::Index j = 0; j < b; ++j)
            gram(i, j) = (terms[static_cast<std::size_t>(i)].array() * terms[static_cast<std::size_t>(j)].array()).sum();
    }
    const VectorXd tau_id = polytope_project(gram.llt().solve(rhs), poly);
    {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(build_covariance(tau_id, terms));
        if (!(eig.eigenvalues().minCoeff() > 1e-6))
            throw ConfigError("generic simulation: no feasible positive definite point near the identity");
    }

    Rng root(seed);
    Rng tau_rng = root.child(11);
    Rng loading_rng = root.child(12);
    Rng beta_rng = root.child(13);
    Rng conf_rng = root.child(14);
    Rng design_rng = root.child(15);
    Rng noise_rng = root.child(16);

    SimulatedDataset out;
    out.basis = basis;
    out.polytope = poly;
    out.X = MatrixXd(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) out.X(i, 0) = design_rng.normal();
    out.Z = MatrixXd(n, 0);

    MatrixXd Craw(n, K);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) Craw(i, k) = conf_rng.normal();
    out.C_true = K > 0 ? MatrixXd(std::sqrt(static_cast<double>(n)) * orthonormalize(Craw))
                       : MatrixXd(n, 0);

    const VectorXd strength = K > 0 ? geometric_strengths(static_cast<double>(n), 3.0, K) : VectorXd();
    out.L_true = MatrixXd(p, K);
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = loading_rng.child(static_cast<std::uint64_t>(g));
        for (int k = 0; k < K; ++k) out.L_true(g, k) = std::sqrt(strength(k)) * r.normal();
    }

    out.beta_true = VectorXd(p);
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = beta_rng.child(static_cast<std::uint64_t>(g));
        const double u = r.uniform();
        out.beta_true(g) = u < 0.8 ? 0.0 : 0.4 * r.normal();
    }

    out.tau_true = MatrixXd(p, b);
    const double spread = 0.25 * std::max(tau_id.norm(), 1.0) / std::sqrt(static_cast<double>(b));
    MatrixXd Y = out.beta_true * out.X.transpose() + out.L_true * out.C_true.transpose();
    for (Eigen::Index g = 0; g < p; ++g) {
        Rng r = tau_rng.child(static_cast<std::uint64_t>(g));
        VectorXd tau = tau_id;
        for (int attempt = 0; attempt < 40; ++attempt) {
            VectorXd cand(b);
            for (Eigen::Index j = 0; j < b; ++j) cand(j) = tau_id(j) + spread * r.normal();
            cand = polytope_project(cand, poly);
            const MatrixXd V = build_covariance(cand, terms);
            Eigen::SelfAdjointEigenSolver<MatrixXd> eig(V);
            if (eig.eigenvalues().minCoeff() > 0.05 * V.trace() / static_cast<double>(n)) {
                tau = cand;
                break;
            }
        }
        out.tau_true.row(g) = tau.transpose();

        Rng nr = noise_rng.child(static_cast<std::uint64_t>(g));
        const MatrixXd Ms = sym_sqrt(build_covariance(tau, terms));
        VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = nr.normal();
        Y.row(g) += (Ms * z).transpose();
    }

    out.Y = FeatureMatrix::from_values(std::move(Y));
    out.alpha_used = 0.0;
    return out;
}

}  // namespace corrfactor
