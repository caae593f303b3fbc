#include "corrfactor/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <string>

#include "corrfactor/linalg.hpp"

namespace corrfactor {

void FeatureMatrix::validate() const {
    if (p() < 1 || n() < 2) throw ConfigError("feature matrix: need p >= 1 and n >= 2");
    if (!values.allFinite()) throw ConfigError("feature matrix: non-finite entries");
    if (!feature_ids.empty() && static_cast<Eigen::Index>(feature_ids.size()) != p())
        throw ConfigError("feature matrix: feature id count does not match row count");
    if (!sample_ids.empty() && static_cast<Eigen::Index>(sample_ids.size()) != n())
        throw ConfigError("feature matrix: sample id count does not match column count");
}

FeatureMatrix FeatureMatrix::from_values(MatrixXd values) {
    FeatureMatrix fm;
    fm.values = std::move(values);
    fm.feature_ids.reserve(static_cast<std::size_t>(fm.p()));
    for (Eigen::Index g = 0; g < fm.p(); ++g) fm.feature_ids.push_back("feature_" + std::to_string(g + 1));
    fm.sample_ids.reserve(static_cast<std::size_t>(fm.n()));
    for (Eigen::Index i = 0; i < fm.n(); ++i) fm.sample_ids.push_back("sample_" + std::to_string(i + 1));
    return fm;
}

void DesignMatrices::validate() const {
    const Eigen::Index nn = n();
    if (X.cols() > 0) {
        if (X.rows() != nn) throw RankDeficientDesign("design: X row count mismatch");
        Eigen::JacobiSVD<MatrixXd> svd(X);
        const double smin = svd.singularValues().minCoeff();
        if (!(smin / std::sqrt(static_cast<double>(nn)) > 1e-10))
            throw RankDeficientDesign("design: X is numerically rank-deficient");
    }
    if (Z.cols() > 0 && Z.rows() != nn) throw RankDeficientDesign("design: Z row count mismatch");
    if (X.cols() > 0 && Z.cols() > 0) {
        MatrixXd XZ(nn, X.cols() + Z.cols());
        XZ << X, Z;
        Eigen::ColPivHouseholderQR<MatrixXd> qr(XZ);
        qr.setThreshold(1e-10);
        if (qr.rank() < XZ.cols()) throw RankDeficientDesign("design: [X Z] is rank-deficient");
    }
}

RotatedModel residualize_nuisance(const MatrixXd& Y, const MatrixXd& X, const MatrixXd& Z,
                                  const CovarianceBasis& basis) {
    const Eigen::Index n = Y.cols();
    RotatedModel out;
    if (Z.cols() == 0) {
        out.Y = Y;
        out.X = X;
        out.Qz = MatrixXd::Identity(n, n);
        out.basis = basis;
        return out;
    }
    if (Z.rows() != n) throw RankDeficientDesign("residualize_nuisance: Z row count mismatch");
    if (X.cols() > 0) {
        MatrixXd XZ(n, X.cols() + Z.cols());
        XZ << X, Z;
        Eigen::ColPivHouseholderQR<MatrixXd> qr(XZ);
        qr.setThreshold(1e-10);
        if (qr.rank() < XZ.cols())
            throw RankDeficientDesign("residualize_nuisance: [X Z] is rank-deficient");
    }
    out.Qz = null_basis(Z);
    out.Y = Y * out.Qz;
    out.X = X.cols() > 0 ? MatrixXd(out.Qz.transpose() * X) : MatrixXd(out.Qz.cols(), 0);
    out.basis = basis.rotate(out.Qz, n);
    return out;
}

SplitData split_data(const MatrixXd& Y, const MatrixXd& X, const MatrixXd& G) {
    const Eigen::Index n = Y.cols();
    SplitData out;
    out.G = G;
    if (X.cols() == 0) {
        out.Qx = MatrixXd::Identity(n, n);
        out.Y1 = MatrixXd(Y.rows(), 0);
        out.Y2 = Y;
        return out;
    }
    if (G.rows() != n || G.cols() != n) throw SingularWeight("split_data: G dimension mismatch");
    Eigen::LLT<MatrixXd> llt(0.5 * (G + G.transpose()));
    if (llt.info() != Eigen::Success) throw SingularWeight("split_data: G is not positive definite");
    {
        // Smallest eigenvalue guard; LLT succeeds on some nearly singular
        // inputs where the downstream solve would be garbage.
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (G + G.transpose()));
        if (!(eig.eigenvalues().minCoeff() > 1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff())))
            throw SingularWeight("split_data: G is numerically singular");
    }

    const MatrixXd Ginv_X = llt.solve(X);             // n x d
    const MatrixXd gram = X.transpose() * Ginv_X;     // d x d
    Eigen::LLT<MatrixXd> gram_llt(gram);
    if (gram_llt.info() != Eigen::Success)
        throw RankDeficientDesign("split_data: X' G^-1 X is singular");
    // Row g of Y1 is (X' G^-1 X)^-1 X' G^-1 y_g.
    out.Y1 = gram_llt.solve(Ginv_X.transpose() * Y.transpose()).transpose();
    out.Qx = null_basis(X);
    out.Y2 = Y * out.Qx;
    return out;
}

}  // namespace corrfactor
