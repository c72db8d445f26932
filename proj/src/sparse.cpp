#include "spaqr/sparse.h"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace spaqr {

SparseMatrix SparseMatrix::from_triplets(Index rows, Index cols,
                                         const std::vector<Eigen::Triplet<double>>& t) {
    SparseMatrix A(rows, cols);
    A.m_.setFromTriplets(t.begin(), t.end());  // sums duplicates, sorts rows
    A.m_.prune(0.0, 0.0);                      // drop exact zeros
    A.m_.makeCompressed();
    return A;
}

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

SparseMatrix read_matrix_market(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");

    long lineno = 0;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    ++lineno;

    std::istringstream hs(line);
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket")
        throw ParseError(path, lineno, "missing %%MatrixMarket banner");
    if (lower(object) != "matrix" || lower(format) != "coordinate")
        throw ParseError(path, lineno, "expected 'matrix coordinate'");
    if (lower(field) != "real")
        throw ParseError(path, lineno, "unsupported field '" + field + "' (only real)");
    const std::string sym = lower(symmetry);
    if (sym != "general" && sym != "symmetric")
        throw ParseError(path, lineno, "unsupported symmetry '" + symmetry + "'");

    // Skip comments and blank lines up to the size line.
    long rows = -1, cols = -1, entries = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        if (!(ss >> rows >> cols >> entries))
            throw ParseError(path, lineno, "malformed size line");
        break;
    }
    if (rows < 0 || cols < 0 || entries < 0)
        throw ParseError(path, lineno, "missing size line");

    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<size_t>(entries) * (sym == "symmetric" ? 2 : 1));
    long seen = 0;
    while (seen < entries) {
        if (!std::getline(in, line))
            throw ParseError(path, lineno + 1, "unexpected end of file: expected " +
                                                   std::to_string(entries) + " entries, got " +
                                                   std::to_string(seen));
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        long i, j;
        double v;
        if (!(ss >> i >> j >> v))
            throw ParseError(path, lineno, "malformed entry");
        if (i < 1 || i > rows || j < 1 || j > cols)
            throw ParseError(path, lineno, "index out of range");
        t.emplace_back(static_cast<Index>(i - 1), static_cast<Index>(j - 1), v);
        if (sym == "symmetric" && i != j)
            t.emplace_back(static_cast<Index>(j - 1), static_cast<Index>(i - 1), v);
        ++seen;
    }
    return SparseMatrix::from_triplets(static_cast<Index>(rows), static_cast<Index>(cols), t);
}

void write_matrix_market(const SparseMatrix& A, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << A.rows() << " " << A.cols() << " " << A.nnz() << "\n";
    char buf[64];
    const auto& m = A.eigen();
    for (Index j = 0; j < A.cols(); ++j) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, j); it; ++it) {
            std::snprintf(buf, sizeof buf, "%d %d %.17g\n", static_cast<int>(it.row() + 1),
                          static_cast<int>(j + 1), it.value());
            out << buf;
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

VectorXd read_vector(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::vector<double> vals;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        double v;
        if (!(ss >> v)) throw ParseError(path, lineno, "malformed value");
        vals.push_back(v);
    }
    return Eigen::Map<VectorXd>(vals.data(), static_cast<Index>(vals.size()));
}

void write_vector(const VectorXd& v, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    char buf[48];
    for (Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g\n", v(i));
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

VectorXd scale_columns(SparseMatrix& A) {
    VectorXd d(A.cols());
    auto& m = A.eigen();
    for (Index j = 0; j < A.cols(); ++j) {
        double s = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, j); it; ++it)
            s += it.value() * it.value();
        if (s == 0.0)
            throw std::invalid_argument("column " + std::to_string(j) + " is exactly zero");
        d(j) = std::sqrt(s);
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, j); it; ++it)
            it.valueRef() /= d(j);
    }
    return d;
}

VectorXd diag_preconditioner(const SparseMatrix& A) {
    VectorXd w(A.cols());
    const auto& m = A.eigen();
    for (Index j = 0; j < A.cols(); ++j) {
        double s = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, j); it; ++it)
            s += it.value() * it.value();
        w(j) = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    }
    return w;
}

VectorXd spmv(const SparseMatrix& A, const VectorXd& x) { return A.eigen() * x; }

VectorXd spmv_t(const SparseMatrix& A, const VectorXd& y) {
    return A.eigen().transpose() * y;
}

PatternGraph ata_graph(const SparseMatrix& A) {
    // Row cliques: every pair of columns sharing a row becomes an edge.
    const Index m = A.rows(), n = A.cols();
    std::vector<std::vector<Index>> rows(m);
    const auto& M = A.eigen();
    for (Index j = 0; j < n; ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it)
            rows[it.row()].push_back(j);

    PatternGraph g;
    g.n = n;
    g.adj.resize(n);
    for (Index i = 0; i < m; ++i) {
        const auto& r = rows[i];
        for (size_t a = 0; a < r.size(); ++a)
            for (size_t b = a + 1; b < r.size(); ++b) {
                g.adj[r[a]].push_back(r[b]);
                g.adj[r[b]].push_back(r[a]);
            }
    }
    for (auto& lst : g.adj) {
        std::sort(lst.begin(), lst.end());
        lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
    }
    return g;
}

SparseMatrix permute_columns(const SparseMatrix& A, const std::vector<Index>& perm) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(A.nnz());
    const auto& m = A.eigen();
    for (Index j = 0; j < static_cast<Index>(perm.size()); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, perm[j]); it; ++it)
            t.emplace_back(static_cast<Index>(it.row()), j, it.value());
    return SparseMatrix::from_triplets(A.rows(), static_cast<Index>(perm.size()), t);
}

}  // namespace spaqr
