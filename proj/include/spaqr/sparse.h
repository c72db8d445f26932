#pragma once

#include <string>
#include <tuple>
#include <vector>

#include <Eigen/SparseCore>

#include "spaqr/types.h"

namespace spaqr {

// Compressed sparse column matrix with canonical storage: per column, entries
// sorted by strictly increasing row, duplicates summed, explicit zeros pruned.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(Index rows, Index cols) : m_(rows, cols) { m_.makeCompressed(); }

    static SparseMatrix from_triplets(Index rows, Index cols,
                                      const std::vector<Eigen::Triplet<double>>& t);

    Index rows() const { return static_cast<Index>(m_.rows()); }
    Index cols() const { return static_cast<Index>(m_.cols()); }
    Index nnz() const { return static_cast<Index>(m_.nonZeros()); }

    const Eigen::SparseMatrix<double>& eigen() const { return m_; }
    Eigen::SparseMatrix<double>& eigen() { return m_; }

    const Index* outer() const { return m_.outerIndexPtr(); }
    const Index* inner() const { return m_.innerIndexPtr(); }
    const double* values() const { return m_.valuePtr(); }

    MatrixXd dense() const { return MatrixXd(m_); }

private:
    Eigen::SparseMatrix<double> m_;
};

// Matrix Market exchange format, coordinate real, general or symmetric
// (symmetric inputs are expanded). 1-based on disk, 0-based in memory.
// Throws ParseError with the offending line number on malformed input.
SparseMatrix read_matrix_market(const std::string& path);
void write_matrix_market(const SparseMatrix& A, const std::string& path);

// Dense vector files: one value per line (comments starting with '%' allowed).
VectorXd read_vector(const std::string& path);
void write_vector(const VectorXd& v, const std::string& path);

// Scale every column to unit 2-norm; returns the original norms d so that
// A_scaled = A * diag(1/d). Throws std::invalid_argument naming the index of
// any exactly zero column.
VectorXd scale_columns(SparseMatrix& A);

// Reciprocal column norms: the diagonal right preconditioner for the normal
// equations. Zero columns get weight 0 (flagged by scale_columns instead).
VectorXd diag_preconditioner(const SparseMatrix& A);

VectorXd spmv(const SparseMatrix& A, const VectorXd& x);    // A x
VectorXd spmv_t(const SparseMatrix& A, const VectorXd& y);  // A^T y

// Undirected graph on the columns of A: j ~ k iff some row has nonzeros in
// both (the pattern of A^T A, built from row cliques; A^T A is never formed
// numerically). Adjacency lists are sorted, unique, and exclude self-loops.
struct PatternGraph {
    Index n = 0;
    std::vector<std::vector<Index>> adj;
};
PatternGraph ata_graph(const SparseMatrix& A);

// A with columns gathered by perm: result column j = A column perm[j].
SparseMatrix permute_columns(const SparseMatrix& A, const std::vector<Index>& perm);

}  // namespace spaqr
