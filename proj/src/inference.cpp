#include "corrfactor/inference.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "corrfactor/linalg.hpp"
#include "corrfactor/model.hpp"
#include "corrfactor/threading.hpp"

namespace corrfactor {

MatrixXd mn_matrix(const MatrixXd& X, const MatrixXd& C, const MatrixXd& V, const MatrixXd& Qx) {
    const double n = static_cast<double>(X.rows());
    Eigen::LLT<MatrixXd> lltV(V);
    if (lltV.info() != Eigen::Success)
        throw SingularCovariance("covariance is not positive definite");
    MatrixXd VinvX = lltV.solve(X);
    MatrixXd info = X.transpose() * VinvX;
    info = 0.5 * (info + info.transpose()).eval();
    Eigen::LLT<MatrixXd> llt_info(info);
    if (llt_info.info() != Eigen::Success)
        throw RankDeficientDesign("primary design is rank deficient under the covariance metric");
    MatrixXd out = n * llt_info.solve(MatrixXd::Identity(X.cols(), X.cols()));

    if (C.cols() > 0) {
        MatrixXd Omega = llt_info.solve(VinvX.transpose() * C);  // d x K
        MatrixXd W = Qx.transpose() * V * Qx;
        W = 0.5 * (W + W.transpose()).eval();
        MatrixXd C_perp = Qx.transpose() * C;
        MatrixXd gram = C_perp.transpose() * Eigen::LLT<MatrixXd>(W).solve(C_perp);
        gram = 0.5 * (gram + gram.transpose()).eval();
        Eigen::LLT<MatrixXd> llt_gram(gram);
        if (llt_gram.info() != Eigen::Success)
            throw RankDeficientDesign("confounders are degenerate in the residual frame");
        out.noalias() += n * Omega * llt_gram.solve(Omega.transpose());
    }
    return 0.5 * (out + out.transpose()).eval();
}

GlsFit gls_fit(const VectorXd& y, const MatrixXd& X, const MatrixXd& C, const MatrixXd& V) {
    const Eigen::Index n = y.size();
    const Eigen::Index d = X.cols();
    if (X.rows() != n || V.rows() != n || V.cols() != n || (C.cols() > 0 && C.rows() != n))
        throw ConfigError("response, design, and covariance dimensions disagree");

    MatrixXd D(n, d + C.cols());
    D.leftCols(d) = X;
    if (C.cols() > 0) D.rightCols(C.cols()) = C;

    Eigen::LLT<MatrixXd> lltV(V);
    if (lltV.info() != Eigen::Success)
        throw SingularCovariance("covariance is not positive definite");
    MatrixXd U = lltV.solve(D);
    MatrixXd gram = D.transpose() * U;
    gram = 0.5 * (gram + gram.transpose()).eval();
    Eigen::LLT<MatrixXd> lltG(gram);
    if (lltG.info() != Eigen::Success)
        throw RankDeficientDesign("design is rank deficient under the covariance metric");

    GlsFit out;
    out.beta = lltG.solve(U.transpose() * y).head(d);
    MatrixXd Qx = d > 0 ? null_basis(X) : MatrixXd::Identity(n, n);
    out.M_n = mn_matrix(X, C, V, Qx);
    return out;
}

double t_pvalue(double t, double df) {
    if (!std::isfinite(t)) return std::numeric_limits<double>::quiet_NaN();
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

VectorXd bh_adjust(const VectorXd& p) {
    const Eigen::Index n = p.size();
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::isfinite(p[i])) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        return p[a] < p[b] || (p[a] == p[b] && a < b);
    });

    VectorXd q = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    const double total = static_cast<double>(idx.size());
    double running = 1.0;
    for (std::size_t r = idx.size(); r-- > 0;) {
        double value = p[idx[r]] * total / static_cast<double>(r + 1);
        running = std::min(running, value);
        q[idx[r]] = running;
    }
    return q;
}

void feature_tests(std::vector<FeatureInference>& fits, double df) {
    if (df < 1.0) throw ConfigError("no residual degrees of freedom for the t reference");
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    for (auto& row : fits) {
        const Eigen::Index d = row.beta.size();
        row.t = VectorXd::Constant(d, nan);
        row.p = VectorXd::Constant(d, nan);
        row.q = VectorXd::Constant(d, nan);
        if (row.status != "ok") continue;
        for (Eigen::Index j = 0; j < d; ++j) {
            row.t[j] = row.beta[j] / row.se[j];
            row.p[j] = t_pvalue(row.t[j], df);
        }
    }
    const Eigen::Index d = fits.empty() ? 0 : fits.front().beta.size();
    const auto p_count = static_cast<Eigen::Index>(fits.size());
    for (Eigen::Index j = 0; j < d; ++j) {
        VectorXd pj(p_count);
        for (Eigen::Index g = 0; g < p_count; ++g)
            pj[g] = fits[static_cast<std::size_t>(g)].p[j];
        VectorXd qj = bh_adjust(pj);
        for (Eigen::Index g = 0; g < p_count; ++g)
            fits[static_cast<std::size_t>(g)].q[j] = qj[g];
    }
}

InferenceResult infer_features(const FeatureMatrix& data, const DesignMatrices& designs,
                               const CovarianceBasis& basis, const Polytope& poly,
                               const MatrixXd& C, const InferenceOptions& options) {
    data.validate();
    designs.validate();
    const Eigen::Index n = data.n();
    const Eigen::Index d = designs.d();
    const Eigen::Index r = designs.r();
    const Eigen::Index K = C.cols();
    if (designs.n() != n) throw ConfigError("design rows do not match sample count");
    if (C.rows() != 0 && C.rows() != n)
        throw ConfigError("confounder rows do not match sample count");

    MatrixXd D(n, d + r + K);
    if (d > 0) D.leftCols(d) = designs.X;
    if (r > 0) D.middleCols(d, r) = designs.Z;
    if (K > 0) D.rightCols(K) = C;

    InferenceResult out;
    out.df = static_cast<double>(n - d - r - K);
    if (out.df < 1.0) throw ConfigError("no residual degrees of freedom for the t reference");
    const double n1 = static_cast<double>(n - r);

    FeatureRemlEngine engine(D, basis, n, poly);
    const Eigen::Index p = data.p();
    out.features.resize(static_cast<std::size_t>(p));

    parallel_for_index(static_cast<std::size_t>(p), options.threads, [&](std::size_t g) {
        FeatureInference& row = out.features[g];
        row.feature_id = data.feature_ids[g];
        const auto nan = std::numeric_limits<double>::quiet_NaN();
        row.beta = row.se = VectorXd::Constant(d, nan);
        row.v_g = VectorXd::Constant(static_cast<Eigen::Index>(basis.size()), nan);
        try {
            VectorXd y = data.values.row(static_cast<Eigen::Index>(g)).transpose();
            FeatureVariance fv = engine.fit(y, options.warm_start);
            row.v_g = fv.v;
            row.boundary = fv.boundary;
            row.converged = fv.converged;

            FeatureRemlEngine::Gls gls = engine.gls(y, fv.v);
            Eigen::LLT<MatrixXd> lltG(gls.gram);
            if (lltG.info() != Eigen::Success)
                throw RankDeficientDesign("design Gram is not positive definite");
            MatrixXd Ginv = lltG.solve(MatrixXd::Identity(gls.gram.rows(), gls.gram.rows()));
            // The primary corner of the inverted joint Gram carries the
            // confounder propagation term; scaling by the reduced-frame row
            // count reproduces the two-piece assembly.
            row.M_n = n1 * Ginv.topLeftCorner(d, d);
            row.beta = gls.gamma.head(d);
            for (Eigen::Index j = 0; j < d; ++j) row.se[j] = std::sqrt(Ginv(j, j));
        } catch (const Error& e) {
            row.status = e.what();
        }
    });

    for (const auto& row : out.features)
        if (row.status != "ok") ++out.n_failed;

    feature_tests(out.features, out.df);
    return out;
}

PipelineResult run_inference(const FeatureMatrix& Y, const DesignMatrices& designs,
                             const CovarianceBasis& basis, const Polytope& poly,
                             const PipelineOptions& options) {
    Y.validate();
    designs.validate();
    const Eigen::Index n = Y.n();
    if (designs.n() != n) throw ConfigError("design rows do not match sample count");
    basis.validate(n);

    PipelineResult out;
    RotatedModel rot = residualize_nuisance(Y.values, designs.X, designs.Z, basis);
    out.Qz = rot.Qz;
    out.X1 = rot.X;
    const Eigen::Index n1 = rot.Y.cols();

    MatrixXd Qx = designs.d() > 0 ? null_basis(rot.X) : MatrixXd::Identity(n1, n1);
    MatrixXd Y2 = rot.Y * Qx;
    CovarianceBasis basis2 = rot.basis.rotate(Qx, n1);

    out.oracle_mode = options.oracle_C.cols() > 0 || options.oracle_C.rows() > 0;
    if (out.oracle_mode) {
        if (options.oracle_C.rows() != n)
            throw ConfigError("oracle confounder rows do not match sample count");
        out.k = static_cast<int>(options.oracle_C.cols());
        out.C = options.oracle_C;
        // A single plain variance fit still supplies the per-feature warm
        // start.
        out.path = run_icase(Y2, basis2, poly, 0);
    } else {
        if (options.K >= 0) {
            out.k = options.K;
        } else {
            int ceiling = options.k_max >= 0 ? options.k_max : default_k_max(Y2.cols());
            out.cv = choose_k(Y2, basis2, poly, options.folds, ceiling, options.eta,
                              options.seed, options.threads);
            out.k = out.cv.k_hat;
            out.k_from_cv = true;
            for (const auto& w : out.cv.warnings) out.warnings.push_back(w);
        }
        out.path = run_icase(Y2, basis2, poly, out.k);
        const FactorFit& chosen = out.path.fits.back();

        MatrixXd V1 = build_covariance(chosen.variance.tau, rot.basis.materialize(n1));
        SplitData split = split_data(rot.Y, rot.X, V1);
        out.confounders = estimate_confounders(split, rot.X, chosen);
        out.C = rot.Qz * out.confounders.C_hat;
        if (!out.confounders.bias_corrected)
            out.warnings.push_back(
                "noise-bias correction was singular; confounder coefficients are uncorrected");
    }

    InferenceOptions opts;
    opts.threads = options.threads;
    const VarianceEstimate& shared = out.path.fits.back().variance;
    opts.warm_start = shared.delta2 * shared.tau;
    InferenceResult stats = infer_features(Y, designs, basis, poly, out.C, opts);
    out.features = std::move(stats.features);
    out.df = stats.df;
    out.n_failed = stats.n_failed;
    return out;
}

}  // namespace corrfactor
