#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "corrfactor/basis.hpp"
#include "corrfactor/icase.hpp"
#include "corrfactor/linalg.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/rng.hpp"
#include "corrfactor/simulate.hpp"
#include "support/oracles.hpp"

using namespace corrfactor;

namespace {

Polytope free_cone(Eigen::Index b) {
    Polytope poly;
    poly.A_eq = MatrixXd(0, b);
    poly.A_ineq = MatrixXd(0, b);
    return poly;
}

bool bitwise_equal(const MatrixXd& a, const MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

MatrixXd random_spd(Rng& rng, Eigen::Index m, double lo, double hi) {
    MatrixXd G(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) G(i, j) = rng.normal();
    const Eigen::HouseholderQR<MatrixXd> qr(G);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(m, m);
    VectorXd eigs(m);
    for (Eigen::Index i = 0; i < m; ++i) eigs(i) = lo + (hi - lo) * rng.uniform();
    return Q * eigs.asDiagonal() * Q.transpose();
}

// Rows of Y2 drawn as V^1/2 z so that E[Y2'Y2 / p] = V.
MatrixXd sample_rows(Rng& rng, const MatrixXd& V, Eigen::Index p) {
    const MatrixXd R = sym_sqrt(V);
    MatrixXd Y(p, V.rows());
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < V.cols(); ++j) Y(i, j) = rng.normal();
    return Y * R;
}

}  // namespace

TEST_CASE("the default factor ceiling tracks the residual dimension") {
    CHECK(default_k_max(1) == 0);
    CHECK(default_k_max(2) == 1);
    CHECK(default_k_max(7) == 3);
    CHECK(default_k_max(12) == 6);
    CHECK(default_k_max(60) == 30);
    CHECK(default_k_max(61) == 30);
    CHECK(default_k_max(400) == 30);
}

TEST_CASE("k = 0 yields empty outputs and bad counts are rejected") {
    Rng rng(31);
    const Eigen::Index m = 7;
    const MatrixXd S2 = random_spd(rng, m, 0.5, 4.0);
    const MatrixXd W = random_spd(rng, m, 0.8, 1.4);

    VectorXd eigs(3);
    const MatrixXd C = subspace_step_s2(S2, W, 0, &eigs);
    CHECK(C.rows() == m);
    CHECK(C.cols() == 0);
    CHECK(eigs.size() == 0);

    CHECK_THROWS_AS((void)subspace_step_s2(S2, W, -1, nullptr), ConfigError);
    CHECK_THROWS_AS((void)subspace_step_s2(S2, W, static_cast<int>(m), nullptr), ConfigError);
}

TEST_CASE("the latent basis is the whitened principal subspace at the declared scale") {
    Rng rng(32);
    const Eigen::Index m = 9;
    const MatrixXd S2 = random_spd(rng, m, 0.3, 5.0);
    const MatrixXd W = random_spd(rng, m, 0.6, 1.8);
    const MatrixXd Wi = W.llt().solve(MatrixXd::Identity(m, m));

    for (int k : {1, 3, 5}) {
        VectorXd eigs;
        const MatrixXd C = subspace_step_s2(S2, W, k, &eigs);
        REQUIRE(C.cols() == k);
        REQUIRE(eigs.size() == k);

        // C'W^-1C = m I_k, the normalization every downstream stage assumes.
        const MatrixXd gram = C.transpose() * Wi * C;
        CHECK((gram - static_cast<double>(m) * MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <
              1e-8);

        // Columns span the same space as the top-k whitened eigenvectors and
        // the reported eigenvalues match an independent decomposition.
        const MatrixXd Wis = sym_inv_sqrt(W);
        MatrixXd T = Wis * S2 * Wis;
        T = 0.5 * (T + T.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
        for (int j = 0; j < k; ++j)
            CHECK(std::abs(eigs(j) - es.eigenvalues()(m - 1 - j)) < 1e-10 * es.eigenvalues()(m - 1));
        for (int j = 1; j < k; ++j) CHECK(eigs(j - 1) > eigs(j));

        const MatrixXd U = es.eigenvectors().rightCols(k);  // ascending order in Eigen
        const MatrixXd back = Wis * C / std::sqrt(static_cast<double>(m));
        // back should have orthonormal columns spanning col(U).
        CHECK((back.transpose() * back - MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-10);
        const MatrixXd residual = back - U * (U.transpose() * back);
        CHECK(residual.cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("the sign convention makes repeated calls bitwise identical") {
    Rng rng(33);
    const Eigen::Index m = 8;
    const MatrixXd S2 = random_spd(rng, m, 0.4, 3.0);
    const MatrixXd W = random_spd(rng, m, 0.7, 1.5);

    VectorXd e1, e2;
    const MatrixXd C1 = subspace_step_s2(S2, W, 3, &e1);
    const MatrixXd C2 = subspace_step_s2(S2, W, 3, &e2);
    CHECK(bitwise_equal(C1, C2));
    CHECK(bitwise_equal(e1, e2));

    // The Y2 overload agrees with the precomputed-moment entry point.
    const MatrixXd Y2 = sample_rows(rng, S2, 40);
    const MatrixXd S2y = (Y2.transpose() * Y2) / 40.0;
    auto [Cy, ey] = subspace_step(Y2, W, 2);
    VectorXd ey2;
    const MatrixXd Cy2 = subspace_step_s2(S2y, W, 2, &ey2);
    CHECK(bitwise_equal(Cy, Cy2));
    CHECK(bitwise_equal(ey, ey2));
}

TEST_CASE("an eigenvalue tie at the cut is refused") {
    const Eigen::Index m = 6;
    MatrixXd S2 = MatrixXd::Identity(m, m);
    S2(0, 0) = 3.0;  // spectrum 3, 1, 1, 1, 1, 1
    const MatrixXd W = MatrixXd::Identity(m, m);

    CHECK_NOTHROW((void)subspace_step_s2(S2, W, 1, nullptr));
    CHECK_THROWS_AS((void)subspace_step_s2(S2, W, 2, nullptr), DegenerateSpectrum);
    // A fully flat spectrum fails already at k = 1.
    CHECK_THROWS_AS((void)subspace_step_s2(MatrixXd::Identity(m, m), W, 1, nullptr),
                    DegenerateSpectrum);
}

TEST_CASE("with an identity basis the path reduces to principal components") {
    // One identity term and a free cone force W(tau) = I after the unit
    // log-determinant split, so every quantity has a closed form: the latent
    // basis is sqrt(m) times the top eigenvectors of S2 and the variance
    // level at k is the mean of the trailing eigenvalues.
    Rng rng(34);
    const Eigen::Index m = 12;
    VectorXd u(m), w(m);
    for (Eigen::Index i = 0; i < m; ++i) u(i) = rng.normal();
    u.normalize();
    w = VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) w(i) = rng.normal();
    w -= u * u.dot(w);
    w.normalize();
    MatrixXd S2 = sample_rows(rng, MatrixXd::Identity(m, m), 300);
    S2 = (S2.transpose() * S2 / 300.0).eval();
    S2 += 6.0 * u * u.transpose() + 2.5 * w * w.transpose();

    const std::vector<MatrixXd> terms = {MatrixXd::Identity(m, m)};
    const IcaseResult out = run_icase_s2(S2, terms, free_cone(1), 2);
    REQUIRE(out.fits.size() == 3);

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S2 + S2.transpose()));
    const VectorXd lam = es.eigenvalues().reverse();

    for (int k = 0; k <= 2; ++k) {
        const FactorFit& fit = out.fits[static_cast<std::size_t>(k)];
        CHECK(fit.k == k);
        CHECK(fit.variance.diag.converged);
        // tau = 1 exactly up to rounding; delta2 carries the whole level.
        CHECK(std::abs(fit.variance.tau(0) - 1.0) < 1e-12);
        const double tail = lam.tail(m - k).sum() / static_cast<double>(m - k);
        CHECK(std::abs(fit.variance.delta2 - tail) < 1e-8 * tail);
        if (k > 0) {
            for (int j = 0; j < k; ++j)
                CHECK(std::abs(fit.eigenvalues(j) - lam(j)) < 1e-8 * lam(0));
            MatrixXd oracle = es.eigenvectors().rightCols(k).rowwise().reverse().eval();
            fix_signs(oracle);
            const MatrixXd got = fit.C_perp / std::sqrt(static_cast<double>(m));
            CHECK((got - oracle).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("the alternation path reports a basis whitened by its own variance fit") {
    Rng rng(35);
    auto [basis, poly] = build_tissue_basis(5);
    const Eigen::Index n = 15;
    const std::vector<MatrixXd> terms = basis.materialize(n);

    VectorXd tau_true(6);
    tau_true << 1.0, 0.3, 0.2, 1.3, 0.25, 0.9;
    const MatrixXd V = build_covariance(tau_true, terms);
    VectorXd v1(n), v2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v1(i) = rng.normal();
        v2(i) = rng.normal();
    }
    v1.normalize();
    v2 -= v1 * v1.dot(v2);
    v2.normalize();
    MatrixXd target = V + 4.0 * v1 * v1.transpose() + 1.7 * v2 * v2.transpose();
    const MatrixXd Y2 = sample_rows(rng, target, 600);

    const IcaseResult out = run_icase(Y2, basis, poly, 3);
    REQUIRE(out.fits.size() == 4);
    CHECK(bitwise_equal(out.S2, 0.5 * ((Y2.transpose() * Y2 / 600.0) +
                                       (Y2.transpose() * Y2 / 600.0).transpose())));

    for (int k = 0; k <= 3; ++k) {
        const FactorFit& fit = out.fits[static_cast<std::size_t>(k)];
        CHECK(fit.variance.diag.converged);
        CHECK(poly.satisfied(fit.variance.tau));
        CHECK(std::abs(fit.variance.logdet_residual) < 1e-8);

        if (k == 0) {
            CHECK(fit.C_perp.cols() == 0);
            CHECK(fit.warm_start_tau.size() == 0);
            continue;
        }
        // Warm starts walk down the path.
        CHECK(bitwise_equal(fit.warm_start_tau, out.fits[static_cast<std::size_t>(k - 1)].variance.tau));

        // The reported basis is exactly one subspace pass under the reported
        // fit's whitening, and carries the declared normalization.
        VectorXd eigs;
        const MatrixXd again = subspace_step_s2(out.S2, fit.variance.W, k, &eigs);
        CHECK(bitwise_equal(fit.C_perp, again));
        CHECK(bitwise_equal(fit.eigenvalues, eigs));

        const MatrixXd Wi = fit.variance.W.llt().solve(MatrixXd::Identity(n, n));
        const MatrixXd gram = fit.C_perp.transpose() * Wi * fit.C_perp;
        CHECK((gram - static_cast<double>(n) * MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <
              1e-8);
        for (int j = 1; j < k; ++j) CHECK(fit.eigenvalues(j - 1) > fit.eigenvalues(j));
    }

    // The planted directions dominate the two leading whitened eigenvalues.
    CHECK(out.fits[2].eigenvalues(0) > out.fits[2].eigenvalues(1));
    CHECK(out.fits[2].eigenvalues(1) > 1.5);

    // Rerunning from the matrix entry point with the same moment is bitwise
    // identical, fit by fit.
    const IcaseResult redo = run_icase_s2(Y2.transpose() * Y2 / 600.0, terms, poly, 3);
    for (std::size_t k = 0; k < out.fits.size(); ++k) {
        CHECK(bitwise_equal(redo.fits[k].C_perp, out.fits[k].C_perp));
        CHECK(bitwise_equal(redo.fits[k].variance.tau, out.fits[k].variance.tau));
        CHECK(redo.fits[k].variance.delta2 == out.fits[k].variance.delta2);
    }
}

TEST_CASE("path-level failures carry their factor count or spectrum diagnosis") {
    const Eigen::Index m = 6;
    const std::vector<MatrixXd> terms = {MatrixXd::Identity(m, m)};
    CHECK_THROWS_AS((void)run_icase_s2(MatrixXd::Identity(m, m), terms, free_cone(1), 1),
                    DegenerateSpectrum);
    CHECK_THROWS_AS((void)run_icase_s2(MatrixXd::Identity(m, m), terms, free_cone(1), -1),
                    ConfigError);
    CHECK_THROWS_AS(
        (void)run_icase_s2(MatrixXd::Identity(m, m), terms, free_cone(1), static_cast<int>(m)),
        ConfigError);
}
