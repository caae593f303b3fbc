#ifndef CORRFACTOR_TYPES_HPP
#define CORRFACTOR_TYPES_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrfactor {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error taxonomy. Everything derives from Error so the CLI can map any
// library failure to exit code 3 while tests can catch the precise type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyNullSpace : Error { using Error::Error; };
struct RankDeficientDesign : Error { using Error::Error; };
struct SingularWeight : Error { using Error::Error; };
struct NotPositiveDefinite : Error { using Error::Error; };
struct InfeasiblePolytope : Error { using Error::Error; };
struct InfeasibleStart : Error { using Error::Error; };
struct NonConvergence : Error { using Error::Error; };
struct DegenerateSpectrum : Error { using Error::Error; };
struct SingularGram : Error { using Error::Error; };
struct SingularCovariance : Error { using Error::Error; };
struct RankDeficient : Error { using Error::Error; };
struct BiasCorrectionSingular : Error { using Error::Error; };
struct UnsupportedTissueCount : Error { using Error::Error; };
struct CalibrationFailure : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// Response matrix, features in rows, samples in columns.
struct FeatureMatrix {
    MatrixXd values;                       // p x n
    std::vector<std::string> feature_ids;  // length p
    std::vector<std::string> sample_ids;   // length n

    Eigen::Index p() const { return values.rows(); }
    Eigen::Index n() const { return values.cols(); }

    // Throws ConfigError on shape/id mismatch or non-finite entries.
    void validate() const;

    // Fills feature_ids/sample_ids with synthetic names when empty.
    static FeatureMatrix from_values(MatrixXd values);
};

struct DesignMatrices {
    MatrixXd X;  // n x d, covariates of interest; d may be 0
    MatrixXd Z;  // n x r, nuisance covariates; r may be 0

    Eigen::Index n() const { return X.rows() > 0 ? X.rows() : Z.rows(); }
    Eigen::Index d() const { return X.cols(); }
    Eigen::Index r() const { return Z.cols(); }

    // Checks joint rank of [X Z] and that the smallest singular value of
    // X / sqrt(n) stays above tolerance. Throws RankDeficientDesign.
    void validate() const;
};

}  // namespace corrfactor

#endif
