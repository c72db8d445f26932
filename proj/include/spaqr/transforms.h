#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "spaqr/dense_kernels.h"
#include "spaqr/types.h"

namespace spaqr {

// One upper-triangular factor of W acting on a column subset: the pivot block
// R on `cols` plus the coupling C into `coupled` (empty for a pure scaling).
// As a matrix: z_cols <- R z_cols + C z_coupled, identity elsewhere.
struct TriangularScale {
    std::vector<Index> cols;
    MatrixXd R;  // |cols| x |cols| upper triangular
    std::vector<Index> coupled;
    MatrixXd C;  // |cols| x |coupled|
};

// One orthogonal factor of W acting on a column subset: z_cols <- Q^T z_cols
// (Q is the rotation that compressed the subset; its transpose lands in W).
struct ColumnRotation {
    std::vector<Index> cols;
    ReflectorSet Q;
};

using WFactor = std::variant<TriangularScale, ColumnRotation>;

// One orthogonal factor of Q acting on a row subset. The factorization applied
// H^T to these rows; the factor recorded in Q is H itself.
struct RowReflect {
    std::vector<Index> rows;
    ReflectorSet H;
};

// Per-stage statistics collected during factorization.
struct StageStats {
    int stage = 0;
    double t_eliminate = 0, t_reassign = 0, t_scale = 0, t_sparsify = 0, t_merge = 0;
    std::vector<int> front_cols;       // active interface widths after sparsification
    std::vector<double> front_aspect;  // rows/cols of the same snapshot (cols > 0)
    int top_rows = 0, top_cols = 0;    // root-separator totals at the snapshot
    long long nnz_w = 0;               // cumulative nnz(W) after this stage
};

// The outcome of the hierarchical factorization: Q^T A W^{-1} ~ I up to the
// sparsification tolerance, where A is the scaled, permuted input. W is the
// chronological product of the recorded factors (earliest applied first to a
// vector); Q likewise. Vectors are in permuted column coordinates.
struct Factorization {
    Index M = 0, N = 0;
    double eps = 0.0;
    std::vector<WFactor> W;
    std::vector<RowReflect> Q;        // kept only when store_q was set
    std::vector<Index> pivot_row;     // column -> row paired with it (size N)
    std::vector<Index> dropped_rows;  // rows discarded by row sparsification
    std::vector<Index> trailing_rows; // rows left over (exactly zero) at the end
    std::vector<StageStats> stages;
    bool has_q = false;

    long long nnz_w() const;

    void w_apply(VectorXd& z) const;   // z <- W z
    void w_solve(VectorXd& z) const;   // z <- W^{-1} z
    void wt_apply(VectorXd& z) const;  // z <- W^T z
    void wt_solve(VectorXd& z) const;  // z <- W^{-T} z
    void q_apply_t(VectorXd& y) const; // y <- Q^T y   (length M)
    void q_apply(VectorXd& y) const;   // y <- Q y
};

// Versioned little-endian binary round-trip of a Factorization.
void save_factorization(const Factorization& f, const std::string& path);
Factorization load_factorization(const std::string& path);

}  // namespace spaqr
