#ifndef CORRFACTOR_BASIS_HPP
#define CORRFACTOR_BASIS_HPP

#include <vector>

#include "corrfactor/types.hpp"

namespace corrfactor {

// One positive semi-definite term of the covariance combination. Structured
// kinds are kept symbolic and materialized lazily; the data-scale sims and
// the twin design are all I_copies (x) small-block, and per-feature fitting
// exploits exactly that shape.
struct BasisTerm {
    enum class Kind { dense, identity, block_partition, kronecker, diagonal_indicator };

    Kind kind = Kind::identity;
    MatrixXd dense;                // kind == dense
    std::vector<int> labels;       // kind == block_partition: group label per sample
    Eigen::Index copies = 0;       // kind == kronecker: number of identical blocks (0 adapts to n)
    MatrixXd block;                // kind == kronecker: the small dense block
    std::vector<int> mask;         // kind == diagonal_indicator: 0/1 per sample

    static BasisTerm Dense(MatrixXd m);
    static BasisTerm Identity();
    static BasisTerm BlockPartition(std::vector<int> labels);
    static BasisTerm Kronecker(Eigen::Index copies, MatrixXd block);
    static BasisTerm DiagonalIndicator(std::vector<int> mask);

    // Dense n x n realization of the term.
    MatrixXd materialize(Eigen::Index n) const;

    // Dimension the term pins down, or 0 when it adapts (identity).
    Eigen::Index fixed_dim() const;
};

struct CovarianceBasis {
    std::vector<BasisTerm> terms;

    Eigen::Index size() const { return static_cast<Eigen::Index>(terms.size()); }

    // Symmetry of each materialized term to 1e-12, b >= 1, finite entries,
    // and linear independence of {vec(B_j)} via the Gram matrix condition.
    // Throws ConfigError with the offending term index.
    void validate(Eigen::Index n) const;

    // Dense realizations, cached by the caller if reused.
    std::vector<MatrixXd> materialize(Eigen::Index n) const;

    // Congruence transform Q' B_j Q for every term; the result is dense.
    CovarianceBasis rotate(const MatrixXd& Q, Eigen::Index n) const;

    // True when every term is I_copies (x) small-block with one shared
    // "copies" count (identity terms qualify); the blocked per-feature
    // kernels require this. block_dim receives the small-block size.
    bool uniform_block_structure(Eigen::Index n, Eigen::Index& copies, Eigen::Index& block_dim) const;

    // Small-block realization of term j under the uniform block structure.
    MatrixXd block_of(Eigen::Index j, Eigen::Index block_dim) const;
};

// V = sum_j tau_j B_j. Positive definiteness is the caller's concern.
MatrixXd build_covariance(const VectorXd& tau, const CovarianceBasis& basis, Eigen::Index n);

// Same combination over pre-materialized terms.
MatrixXd build_covariance(const VectorXd& tau, const std::vector<MatrixXd>& terms);

}  // namespace corrfactor

#endif
