#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <limits>

#include "corrfactor/inference.hpp"
#include "corrfactor/linalg.hpp"
#include "corrfactor/rng.hpp"
#include "corrfactor/simulate.hpp"
#include "support/oracles.hpp"

using namespace corrfactor;

namespace {

MatrixXd gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
    MatrixXd out(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) out(i, j) = rng.normal();
    return out;
}

MatrixXd random_spd(Rng& rng, Eigen::Index m, double lo, double hi) {
    const MatrixXd G = gaussian(rng, m, m);
    const Eigen::HouseholderQR<MatrixXd> qr(G);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(m, m);
    VectorXd eigs(m);
    for (Eigen::Index i = 0; i < m; ++i) eigs(i) = lo + (hi - lo) * rng.uniform();
    return Q * eigs.asDiagonal() * Q.transpose();
}

// Step-up adjustment written the slow, obvious way.
VectorXd bh_oracle(const VectorXd& p) {
    const Eigen::Index n = p.size();
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::isfinite(p[i])) idx.push_back(i);
    std::sort(idx.begin(), idx.end(),
              [&](Eigen::Index a, Eigen::Index b) { return p[a] < p[b]; });
    VectorXd q = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    const double total = static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        double best = 1.0;
        for (std::size_t s = r; s < idx.size(); ++s)
            best = std::min(best, p[idx[s]] * total / static_cast<double>(s + 1));
        q[idx[r]] = best;
    }
    return q;
}

}  // namespace

TEST_CASE("generalized least squares matches the explicit solve") {
    Rng rng(91);
    const Eigen::Index n = 20, d = 3, k = 2;
    const MatrixXd X = gaussian(rng, n, d);
    const MatrixXd C = gaussian(rng, n, k);
    const MatrixXd V = random_spd(rng, n, 0.5, 2.0);
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.normal();

    const GlsFit fit = gls_fit(y, X, C, V);
    MatrixXd D(n, d + k);
    D << X, C;
    const MatrixXd Vi = V.inverse();
    const VectorXd full = (D.transpose() * Vi * D).inverse() * D.transpose() * Vi * y;
    CHECK((fit.beta - full.head(d)).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE(fit.M_n.rows() == d);

    CHECK_THROWS_AS((void)gls_fit(y, X, C, -V), SingularCovariance);
    MatrixXd Xdup(n, 2);
    Xdup << X.col(0), X.col(0);
    CHECK_THROWS_AS((void)gls_fit(y, Xdup, C, V), RankDeficientDesign);
    CHECK_THROWS_AS((void)gls_fit(y, X.topRows(n - 1), C, V), ConfigError);
}

TEST_CASE("the two-piece sampling covariance equals the block-inverse corner") {
    Rng rng(92);
    const Eigen::Index n = 24, d = 2, k = 3;
    const MatrixXd X = gaussian(rng, n, d);
    const MatrixXd C = gaussian(rng, n, k);
    const MatrixXd V = random_spd(rng, n, 0.4, 2.2);
    const MatrixXd Qx = null_basis(X);

    const MatrixXd two_piece = mn_matrix(X, C, V, Qx);

    MatrixXd D(n, d + k);
    D << X, C;
    const MatrixXd Vi = V.inverse();
    const MatrixXd joint = (D.transpose() * Vi * D).inverse();
    const MatrixXd corner = static_cast<double>(n) * joint.topLeftCorner(d, d);
    CHECK((two_piece - corner).cwiseAbs().maxCoeff() < 1e-8 * corner.cwiseAbs().maxCoeff());

    // Without confounders it is the plain information inverse.
    const MatrixXd bare = mn_matrix(X, MatrixXd(n, 0), V, Qx);
    const MatrixXd info = static_cast<double>(n) * (X.transpose() * Vi * X).inverse();
    CHECK((bare - info).cwiseAbs().maxCoeff() < 1e-8 * info.cwiseAbs().maxCoeff());

    // The confounder propagation piece can only widen the covariance.
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(two_piece - bare);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("t reference probabilities hit textbook values") {
    CHECK(std::abs(t_pvalue(2.228138852, 10.0) - 0.05) < 1e-6);
    CHECK(std::abs(t_pvalue(1.0, 1.0) - 0.5) < 1e-12);  // Cauchy quartile
    CHECK(t_pvalue(0.0, 7.0) == 1.0);
    CHECK(t_pvalue(-3.0, 12.0) == t_pvalue(3.0, 12.0));
    CHECK(t_pvalue(8.0, 30.0) < 1e-7);
    CHECK(std::isnan(t_pvalue(std::numeric_limits<double>::quiet_NaN(), 5.0)));
    CHECK(std::isnan(t_pvalue(std::numeric_limits<double>::infinity(), 5.0)));
}

TEST_CASE("the step-up adjustment matches hand values and the slow oracle") {
    VectorXd p(4);
    p << 0.01, 0.04, 0.03, 0.005;
    const VectorXd q = bh_adjust(p);
    CHECK(std::abs(q[0] - 0.02) < 1e-15);
    CHECK(std::abs(q[1] - 0.04) < 1e-15);
    CHECK(std::abs(q[2] - 0.04) < 1e-15);
    CHECK(std::abs(q[3] - 0.02) < 1e-15);

    // NaN entries pass through and shrink the effective test count.
    VectorXd pn(3);
    pn << 0.01, std::numeric_limits<double>::quiet_NaN(), 0.02;
    const VectorXd qn = bh_adjust(pn);
    CHECK(std::abs(qn[0] - 0.02) < 1e-15);
    CHECK(std::isnan(qn[1]));
    CHECK(std::abs(qn[2] - 0.02) < 1e-15);

    CHECK(bh_adjust(VectorXd()).size() == 0);

    Rng rng(93);
    VectorXd pr(60);
    for (Eigen::Index i = 0; i < pr.size(); ++i) pr(i) = rng.uniform();
    pr(7) = pr(31);  // make a tie
    pr(12) = std::numeric_limits<double>::quiet_NaN();
    const VectorXd fast = bh_adjust(pr);
    const VectorXd slow = bh_oracle(pr);
    for (Eigen::Index i = 0; i < pr.size(); ++i) {
        if (std::isnan(pr(i)))
            CHECK(std::isnan(fast(i)));
        else
            CHECK(std::abs(fast(i) - slow(i)) < 1e-14);
    }
}

TEST_CASE("per-feature tests fill statistics only for clean rows") {
    std::vector<FeatureInference> rows(3);
    for (auto& r : rows) {
        r.beta = VectorXd(2);
        r.se = VectorXd(2);
    }
    rows[0].beta << 1.0, -0.5;
    rows[0].se << 0.25, 0.5;
    rows[1].beta << 0.0, 2.0;
    rows[1].se << 1.0, 0.4;
    rows[2].beta << 9.0, 9.0;
    rows[2].se << 1.0, 1.0;
    rows[2].status = "fit failed";

    feature_tests(rows, 20.0);
    CHECK(std::abs(rows[0].t[0] - 4.0) < 1e-15);
    CHECK(std::abs(rows[0].t[1] + 1.0) < 1e-15);
    CHECK(std::abs(rows[0].p[0] - t_pvalue(4.0, 20.0)) < 1e-15);
    CHECK(std::isnan(rows[2].t[0]));
    CHECK(std::isnan(rows[2].p[0]));
    CHECK(std::isnan(rows[2].q[0]));

    // Adjustment runs per coefficient across the clean rows.
    VectorXd p0(2);
    p0 << rows[0].p[0], rows[1].p[0];
    const VectorXd q0 = bh_adjust(p0);
    CHECK(std::abs(rows[0].q[0] - q0[0]) < 1e-15);
    CHECK(std::abs(rows[1].q[0] - q0[1]) < 1e-15);

    CHECK_THROWS_AS(feature_tests(rows, 0.5), ConfigError);
}

TEST_CASE("feature-level inference on simulated data is calibrated and robust") {
    SimConfig cfg;
    cfg.seed = 41;
    cfg.p = 300;
    cfg.n_individuals = 12;
    cfg.K = 2;
    cfg.alpha = 0.5;
    cfg.residual_df = std::numeric_limits<double>::infinity();
    SimulatedDataset sim = simulate_multitissue(cfg.resolved());
    const Eigen::Index n = sim.Y.n();

    // Plant one degenerate feature; it must fail in isolation.
    sim.Y.values.row(5).setZero();

    DesignMatrices designs;
    designs.X = sim.X;
    designs.Z = sim.Z;
    const InferenceResult res =
        infer_features(sim.Y, designs, sim.basis, sim.polytope, sim.C_true);

    CHECK(res.df == static_cast<double>(n - 1 - 3 - 2));
    CHECK(res.n_failed == 1);
    REQUIRE(res.features.size() == 300);
    CHECK(res.features[5].status != "ok");
    CHECK(std::isnan(res.features[5].beta[0]));
    CHECK(std::isnan(res.features[5].q[0]));

    int low_p_null = 0, null_count = 0;
    for (Eigen::Index g = 0; g < 300; ++g) {
        if (g == 5) continue;
        const auto& row = res.features[static_cast<std::size_t>(g)];
        REQUIRE(row.status == "ok");
        CHECK(row.converged);
        CHECK(row.beta.size() == 1);
        CHECK(row.se[0] > 0.0);
        CHECK(row.p[0] >= 0.0);
        CHECK(row.p[0] <= 1.0);
        CHECK(row.q[0] >= row.p[0] - 1e-15);
        CHECK(row.M_n(0, 0) > 0.0);
        CHECK(row.v_g.allFinite());
        if (sim.beta_true[g] == 0.0) {
            ++null_count;
            if (row.p[0] < 0.05) ++low_p_null;
        }
    }
    // Null features should reject within shouting distance of the nominal
    // rate. At 36 samples the per-feature variance estimate is noisy enough
    // to inflate the tails well past 0.05 (observed around 0.12 to 0.15
    // here); the bound only needs to catch broken se or p wiring, which
    // lands far above it.
    const double fpr = static_cast<double>(low_p_null) / static_cast<double>(null_count);
    CHECK(fpr < 0.2);

    // A confounder block too wide for the sample count is refused up front.
    MatrixXd huge = MatrixXd::Zero(n, n - 4);
    CHECK_THROWS_AS(
        (void)infer_features(sim.Y, designs, sim.basis, sim.polytope, huge), ConfigError);
}

TEST_CASE("the pipeline selects, reconstructs, and tests end to end") {
    SimConfig cfg;
    cfg.seed = 43;
    cfg.p = 250;
    cfg.n_individuals = 10;
    cfg.K = 1;
    cfg.alpha = 0.6;
    cfg.residual_df = std::numeric_limits<double>::infinity();
    const SimulatedDataset sim = simulate_multitissue(cfg.resolved());
    const Eigen::Index n = sim.Y.n();

    DesignMatrices designs;
    designs.X = sim.X;
    designs.Z = sim.Z;

    PipelineOptions opt;
    opt.k_max = 3;
    opt.folds = 3;
    opt.seed = 17;
    const PipelineResult out = run_inference(sim.Y, designs, sim.basis, sim.polytope, opt);

    CHECK(out.k_from_cv);
    CHECK(out.k == 1);
    CHECK_FALSE(out.oracle_mode);
    CHECK(out.df == static_cast<double>(n - 1 - 3 - out.k));
    CHECK(out.n_failed == 0);
    CHECK(out.C.rows() == n);
    CHECK(out.C.cols() == out.k);
    CHECK(out.Qz.cols() == n - 3);
    CHECK(out.X1.rows() == n - 3);
    CHECK(out.cv.k_hat == out.k);
    REQUIRE(static_cast<int>(out.path.fits.size()) == out.k + 1);

    // The reconstructed confounders restrict back to the latent basis that
    // produced them: Qx' Qz' C equals the reported C_perp.
    const MatrixXd Qx = null_basis(out.X1);
    const MatrixXd back = Qx.transpose() * (out.Qz.transpose() * out.C);
    CHECK((back - out.path.fits.back().C_perp).cwiseAbs().maxCoeff() < 1e-8);

    // The estimated confounder span should track the truth closely in its
    // nuisance-reduced frame.
    const MatrixXd truth2 = Qx.transpose() * (out.Qz.transpose() * sim.C_true);
    const MatrixXd est2 = back;
    const double cosine =
        (truth2.col(0).normalized().transpose() * est2.col(0).normalized()).cwiseAbs()(0, 0);
    CHECK(cosine > 0.95);

    // Deterministic end to end.
    const PipelineResult redo = run_inference(sim.Y, designs, sim.basis, sim.polytope, opt);
    CHECK(redo.k == out.k);
    for (std::size_t g : {std::size_t{0}, std::size_t{100}, std::size_t{249}}) {
        CHECK(redo.features[g].beta[0] == out.features[g].beta[0]);
        CHECK(redo.features[g].p[0] == out.features[g].p[0]);
    }

    // Fixing K skips cross-validation but keeps the rest of the path.
    PipelineOptions fixed;
    fixed.K = 2;
    fixed.seed = 17;
    const PipelineResult forced = run_inference(sim.Y, designs, sim.basis, sim.polytope, fixed);
    CHECK_FALSE(forced.k_from_cv);
    CHECK(forced.k == 2);
    CHECK(forced.C.cols() == 2);

    // Oracle confounders bypass estimation entirely.
    PipelineOptions oracle;
    oracle.oracle_C = sim.C_true;
    const PipelineResult known = run_inference(sim.Y, designs, sim.basis, sim.polytope, oracle);
    CHECK(known.oracle_mode);
    CHECK(known.k == 1);
    CHECK(known.C == sim.C_true);
    CHECK(known.confounders.L_hat.size() == 0);
    CHECK(known.n_failed == 0);
}
