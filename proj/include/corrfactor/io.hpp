#ifndef CORRFACTOR_IO_HPP
#define CORRFACTOR_IO_HPP

#include <string>
#include <vector>

#include "corrfactor/basis.hpp"
#include "corrfactor/polytope.hpp"
#include "corrfactor/simulate.hpp"
#include "corrfactor/types.hpp"

namespace corrfactor {

// All writers are atomic: content goes to a sibling temp file that is
// renamed over the target, so a crash never leaves a half-written output.
// Reals are written with 17 significant digits and round-trip exactly.
// Failures of any kind surface as IoError with the path in the message.

std::string format_real(double x);

void atomic_write_text(const std::string& path, const std::string& content);

// Feature-by-sample table: header "feature_id" + sample ids, one row per
// feature with its id in the first column.
void write_feature_tsv(const std::string& path, const FeatureMatrix& Y);
FeatureMatrix read_feature_tsv(const std::string& path);

// Generic numeric table with a leading id column.
void write_matrix_tsv(const std::string& path, const MatrixXd& M, const std::string& id_header,
                      const std::vector<std::string>& row_ids, const std::vector<std::string>& col_names);
MatrixXd read_matrix_tsv(const std::string& path, std::vector<std::string>* row_ids = nullptr,
                         std::vector<std::string>* col_names = nullptr);

// Covariance basis as a JSON list of terms, each tagged with "kind"
// (dense | identity | block_partition | kronecker | diagonal_indicator).
void write_basis_json(const std::string& path, const CovarianceBasis& basis);
CovarianceBasis read_basis_json(const std::string& path);

// Constraint cone: A_eq, A_ineq, and the compactification knobs (zero means
// "library default").
void write_polytope_json(const std::string& path, const Polytope& poly);
Polytope read_polytope_json(const std::string& path);

// Ground truth of a simulated dataset: confounders, loadings, effects, and
// per-feature variance multipliers.
void write_truth_json(const std::string& path, const SimulatedDataset& data);

}  // namespace corrfactor

#endif
