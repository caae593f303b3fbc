#include "corrfactor/basis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

namespace corrfactor {

BasisTerm BasisTerm::Dense(MatrixXd m) {
    BasisTerm t;
    t.kind = Kind::dense;
    t.dense = std::move(m);
    return t;
}

BasisTerm BasisTerm::Identity() {
    BasisTerm t;
    t.kind = Kind::identity;
    return t;
}

BasisTerm BasisTerm::BlockPartition(std::vector<int> labels) {
    BasisTerm t;
    t.kind = Kind::block_partition;
    t.labels = std::move(labels);
    return t;
}

BasisTerm BasisTerm::Kronecker(Eigen::Index copies, MatrixXd block) {
    BasisTerm t;
    t.kind = Kind::kronecker;
    t.copies = copies;
    t.block = std::move(block);
    return t;
}

BasisTerm BasisTerm::DiagonalIndicator(std::vector<int> mask) {
    BasisTerm t;
    t.kind = Kind::diagonal_indicator;
    t.mask = std::move(mask);
    return t;
}

Eigen::Index BasisTerm::fixed_dim() const {
    switch (kind) {
        case Kind::dense: return dense.rows();
        case Kind::identity: return 0;
        case Kind::block_partition: return static_cast<Eigen::Index>(labels.size());
        case Kind::kronecker: return copies * block.rows();
        case Kind::diagonal_indicator: return static_cast<Eigen::Index>(mask.size());
    }
    return 0;
}

MatrixXd BasisTerm::materialize(Eigen::Index n) const {
    switch (kind) {
        case Kind::dense:
            return dense;
        case Kind::identity:
            return MatrixXd::Identity(n, n);
        case Kind::block_partition: {
            MatrixXd B = MatrixXd::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
                        B(i, j) = 1.0;
            return B;
        }
        case Kind::kronecker: {
            const Eigen::Index t = block.rows();
            Eigen::Index reps = copies;
            if (reps == 0) {
                if (t <= 0 || n % t != 0)
                    throw ConfigError("kronecker basis term: dimension " + std::to_string(n) +
                                      " is not a multiple of the block size " + std::to_string(t));
                reps = n / t;
            }
            MatrixXd B = MatrixXd::Zero(n, n);
            for (Eigen::Index c = 0; c < reps; ++c) B.block(c * t, c * t, t, t) = block;
            return B;
        }
        case Kind::diagonal_indicator: {
            MatrixXd B = MatrixXd::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i) B(i, i) = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            return B;
        }
    }
    return MatrixXd();
}

std::vector<MatrixXd> CovarianceBasis::materialize(Eigen::Index n) const {
    std::vector<MatrixXd> out;
    out.reserve(terms.size());
    for (const auto& t : terms) out.push_back(t.materialize(n));
    return out;
}

void CovarianceBasis::validate(Eigen::Index n) const {
    if (terms.empty()) throw ConfigError("covariance basis: at least one term required");
    const Eigen::Index b = size();
    MatrixXd gram(b, b);
    std::vector<MatrixXd> mats = materialize(n);
    for (Eigen::Index j = 0; j < b; ++j) {
        const MatrixXd& B = mats[static_cast<std::size_t>(j)];
        if (B.rows() != n || B.cols() != n)
            throw ConfigError("covariance basis: term " + std::to_string(j) + " has wrong dimension");
        if (!B.allFinite())
            throw ConfigError("covariance basis: term " + std::to_string(j) + " has non-finite entries");
        const double asym = (B - B.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * std::max(1.0, B.cwiseAbs().maxCoeff()))
            throw ConfigError("covariance basis: term " + std::to_string(j) + " is not symmetric");
    }
    for (Eigen::Index i = 0; i < b; ++i)
        for (Eigen::Index j = 0; j < b; ++j)
            gram(i, j) = (mats[static_cast<std::size_t>(i)].array() * mats[static_cast<std::size_t>(j)].array()).sum();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    if (!(lmin > 1e-10 * std::max(lmax, 1e-300)))
        throw ConfigError("covariance basis: vec(B_j) are numerically linearly dependent");
}

CovarianceBasis CovarianceBasis::rotate(const MatrixXd& Q, Eigen::Index n) const {
    CovarianceBasis out;
    out.terms.reserve(terms.size());
    for (const auto& t : terms) {
        const MatrixXd B = t.materialize(n);
        MatrixXd R = Q.transpose() * B * Q;
        R = 0.5 * (R + R.transpose());
        out.terms.push_back(BasisTerm::Dense(std::move(R)));
    }
    return out;
}

bool CovarianceBasis::uniform_block_structure(Eigen::Index n, Eigen::Index& copies,
                                              Eigen::Index& block_dim) const {
    copies = 0;
    block_dim = 0;
    for (const auto& t : terms) {
        if (t.kind == BasisTerm::Kind::kronecker) {
            const Eigen::Index bd = t.block.rows();
            if (bd <= 0 || n % bd != 0) return false;
            const Eigen::Index reps = t.copies == 0 ? n / bd : t.copies;
            if (copies == 0) {
                copies = reps;
                block_dim = bd;
            } else if (reps != copies || bd != block_dim) {
                return false;
            }
        } else if (t.kind != BasisTerm::Kind::identity) {
            return false;
        }
    }
    if (copies == 0) return false;  // nothing pinned the block shape
    return copies * block_dim == n;
}

MatrixXd CovarianceBasis::block_of(Eigen::Index j, Eigen::Index block_dim) const {
    const BasisTerm& t = terms[static_cast<std::size_t>(j)];
    if (t.kind == BasisTerm::Kind::kronecker) return t.block;
    return MatrixXd::Identity(block_dim, block_dim);
}

MatrixXd build_covariance(const VectorXd& tau, const CovarianceBasis& basis, Eigen::Index n) {
    if (tau.size() != basis.size()) throw ConfigError("build_covariance: tau length mismatch");
    MatrixXd V = MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < basis.size(); ++j)
        V += tau(j) * basis.terms[static_cast<std::size_t>(j)].materialize(n);
    return V;
}

MatrixXd build_covariance(const VectorXd& tau, const std::vector<MatrixXd>& terms) {
    if (terms.empty()) throw ConfigError("build_covariance: empty basis");
    MatrixXd V = MatrixXd::Zero(terms[0].rows(), terms[0].cols());
    for (std::size_t j = 0; j < terms.size(); ++j) V += tau(static_cast<Eigen::Index>(j)) * terms[j];
    return V;
}

}  // namespace corrfactor
