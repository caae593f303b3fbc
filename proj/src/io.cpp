#include "corrfactor/io.hpp"

#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace corrfactor {

namespace {

using nlohmann::json;

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

// strtod rather than stod: stod rejects subnormals as out of range, and a
// table we wrote ourselves must always read back.
double parse_real(const std::string& token, const std::string& path) {
    const char* begin = token.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (token.empty() || end != begin + token.size())
        throw IoError(path + ": not a number: '" + token + "'");
    if (errno == ERANGE && std::abs(v) == HUGE_VAL)
        throw IoError(path + ": number out of range: '" + token + "'");
    return v;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError(path + ": read failed");
    return buf.str();
}

json matrix_to_json(const MatrixXd& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd json_to_matrix(const json& rows, const std::string& path, Eigen::Index expect_cols = -1) {
    if (!rows.is_array()) throw IoError(path + ": expected an array of rows");
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    Eigen::Index cols = expect_cols;
    if (r == 0) return MatrixXd(0, std::max<Eigen::Index>(cols, 0));
    if (!rows[0].is_array()) throw IoError(path + ": expected rows to be arrays");
    if (cols < 0) cols = static_cast<Eigen::Index>(rows[0].size());
    MatrixXd M(r, cols);
    for (Eigen::Index i = 0; i < r; ++i) {
        const json& row = rows[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw IoError(path + ": ragged rows in matrix");
        for (Eigen::Index j = 0; j < cols; ++j) {
            const json& cell = row[static_cast<std::size_t>(j)];
            if (!cell.is_number()) throw IoError(path + ": non-numeric matrix entry");
            M(i, j) = cell.get<double>();
        }
    }
    return M;
}

json vector_to_json(const VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json parse_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid JSON: " + e.what());
    }
}

}  // namespace

std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void atomic_write_text(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        if (ec) throw IoError(path + ": cannot create parent directory: " + ec.message());
    }
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp.string() + ": cannot open for writing");
        out << content;
        out.flush();
        if (!out) throw IoError(tmp.string() + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError(path + ": rename failed");
    }
}

void write_feature_tsv(const std::string& path, const FeatureMatrix& Y) {
    Y.validate();
    std::ostringstream out;
    out << "feature_id";
    for (const auto& s : Y.sample_ids) out << '\t' << s;
    out << '\n';
    for (Eigen::Index g = 0; g < Y.p(); ++g) {
        out << Y.feature_ids[static_cast<std::size_t>(g)];
        for (Eigen::Index i = 0; i < Y.n(); ++i) out << '\t' << format_real(Y.values(g, i));
        out << '\n';
    }
    atomic_write_text(path, out.str());
}

FeatureMatrix read_feature_tsv(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty file");
    const std::vector<std::string> header = split_tabs(line);
    if (header.size() < 2) throw IoError(path + ": header needs an id column and at least one sample");

    FeatureMatrix Y;
    Y.sample_ids.assign(header.begin() + 1, header.end());
    const Eigen::Index n = static_cast<Eigen::Index>(Y.sample_ids.size());
    std::vector<VectorXd> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_tabs(line);
        if (static_cast<Eigen::Index>(cells.size()) != n + 1)
            throw IoError(path + ": row " + std::to_string(rows.size() + 2) + " has " +
                          std::to_string(cells.size()) + " cells, expected " + std::to_string(n + 1));
        Y.feature_ids.push_back(cells[0]);
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = parse_real(cells[static_cast<std::size_t>(i + 1)], path);
        rows.push_back(std::move(v));
    }
    Y.values = MatrixXd(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t g = 0; g < rows.size(); ++g) Y.values.row(static_cast<Eigen::Index>(g)) = rows[g].transpose();
    Y.validate();
    return Y;
}

void write_matrix_tsv(const std::string& path, const MatrixXd& M, const std::string& id_header,
                      const std::vector<std::string>& row_ids, const std::vector<std::string>& col_names) {
    if (static_cast<Eigen::Index>(row_ids.size()) != M.rows() ||
        static_cast<Eigen::Index>(col_names.size()) != M.cols())
        throw IoError(path + ": id/name counts do not match the matrix shape");
    std::ostringstream out;
    out << id_header;
    for (const auto& c : col_names) out << '\t' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        out << row_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < M.cols(); ++j) out << '\t' << format_real(M(i, j));
        out << '\n';
    }
    atomic_write_text(path, out.str());
}

MatrixXd read_matrix_tsv(const std::string& path, std::vector<std::string>* row_ids,
                         std::vector<std::string>* col_names) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty file");
    const std::vector<std::string> header = split_tabs(line);
    if (header.empty()) throw IoError(path + ": missing header");
    if (col_names) col_names->assign(header.begin() + 1, header.end());
    const Eigen::Index cols = static_cast<Eigen::Index>(header.size()) - 1;

    std::vector<VectorXd> rows;
    if (row_ids) row_ids->clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_tabs(line);
        if (static_cast<Eigen::Index>(cells.size()) != cols + 1)
            throw IoError(path + ": row " + std::to_string(rows.size() + 2) + " has " +
                          std::to_string(cells.size()) + " cells, expected " + std::to_string(cols + 1));
        if (row_ids) row_ids->push_back(cells[0]);
        VectorXd v(cols);
        for (Eigen::Index j = 0; j < cols; ++j) v(j) = parse_real(cells[static_cast<std::size_t>(j + 1)], path);
        rows.push_back(std::move(v));
    }
    MatrixXd M(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) M.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return M;
}

void write_basis_json(const std::string& path, const CovarianceBasis& basis) {
    json terms = json::array();
    for (const auto& t : basis.terms) {
        json jt;
        switch (t.kind) {
            case BasisTerm::Kind::dense:
                jt["kind"] = "dense";
                jt["matrix"] = matrix_to_json(t.dense);
                break;
            case BasisTerm::Kind::identity:
                jt["kind"] = "identity";
                break;
            case BasisTerm::Kind::block_partition:
                jt["kind"] = "block_partition";
                jt["labels"] = t.labels;
                break;
            case BasisTerm::Kind::kronecker:
                jt["kind"] = "kronecker";
                jt["copies"] = t.copies;
                jt["block"] = matrix_to_json(t.block);
                break;
            case BasisTerm::Kind::diagonal_indicator:
                jt["kind"] = "diagonal_indicator";
                jt["mask"] = t.mask;
                break;
        }
        terms.push_back(std::move(jt));
    }
    json root;
    root["terms"] = std::move(terms);
    atomic_write_text(path, root.dump(2) + "\n");
}

CovarianceBasis read_basis_json(const std::string& path) {
    const json root = parse_json(path);
    if (!root.contains("terms") || !root["terms"].is_array())
        throw IoError(path + ": expected a top-level 'terms' array");
    CovarianceBasis basis;
    for (const auto& jt : root["terms"]) {
        if (!jt.contains("kind") || !jt["kind"].is_string())
            throw IoError(path + ": basis term without a 'kind' tag");
        const std::string kind = jt["kind"].get<std::string>();
        try {
            if (kind == "dense") {
                basis.terms.push_back(BasisTerm::Dense(json_to_matrix(jt.at("matrix"), path)));
            } else if (kind == "identity") {
                basis.terms.push_back(BasisTerm::Identity());
            } else if (kind == "block_partition") {
                basis.terms.push_back(BasisTerm::BlockPartition(jt.at("labels").get<std::vector<int>>()));
            } else if (kind == "kronecker") {
                basis.terms.push_back(BasisTerm::Kronecker(jt.at("copies").get<Eigen::Index>(),
                                                           json_to_matrix(jt.at("block"), path)));
            } else if (kind == "diagonal_indicator") {
                basis.terms.push_back(BasisTerm::DiagonalIndicator(jt.at("mask").get<std::vector<int>>()));
            } else {
                throw IoError(path + ": unknown basis term kind '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw IoError(path + ": malformed '" + kind + "' term: " + e.what());
        }
    }
    if (basis.terms.empty()) throw IoError(path + ": basis has no terms");
    return basis;
}

void write_polytope_json(const std::string& path, const Polytope& poly) {
    json root;
    root["A_eq"] = matrix_to_json(poly.A_eq);
    root["A_ineq"] = matrix_to_json(poly.A_ineq);
    root["norm_bound"] = poly.norm_bound;
    root["pd_floor"] = poly.pd_floor;
    root["dim"] = poly.dim();
    atomic_write_text(path, root.dump(2) + "\n");
}

Polytope read_polytope_json(const std::string& path) {
    const json root = parse_json(path);
    Polytope poly;
    Eigen::Index dim = -1;
    if (root.contains("dim") && root["dim"].is_number_integer()) dim = root["dim"].get<Eigen::Index>();
    poly.A_eq = json_to_matrix(root.value("A_eq", json::array()), path, dim);
    poly.A_ineq = json_to_matrix(root.value("A_ineq", json::array()), path, dim);
    if (root.contains("norm_bound")) poly.norm_bound = root["norm_bound"].get<double>();
    if (root.contains("pd_floor")) poly.pd_floor = root["pd_floor"].get<double>();
    if (poly.A_eq.rows() > 0 && poly.A_ineq.rows() > 0 && poly.A_eq.cols() != poly.A_ineq.cols())
        throw IoError(path + ": A_eq and A_ineq disagree on the multiplier dimension");
    return poly;
}

void write_truth_json(const std::string& path, const SimulatedDataset& data) {
    json root;
    root["alpha"] = data.alpha_used;
    root["C"] = matrix_to_json(data.C_true);
    root["L"] = matrix_to_json(data.L_true);
    root["beta"] = vector_to_json(data.beta_true);
    root["tau"] = matrix_to_json(data.tau_true);
    atomic_write_text(path, root.dump() + "\n");
}

}  // namespace corrfactor
