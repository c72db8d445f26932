#pragma once

#include <cstdint>

#include "spaqr/sparse.h"
#include "spaqr/types.h"

namespace spaqr {

// Gauss-Newton Jacobian (transposed) of an inverse Poisson coefficient fit on
// an n^d grid of nodes with a z-field on the (n+1)^d surrounding cells:
// rows are the unknown perturbations (u at every node, then z on every cell),
// columns are the residual equations (one per node). A constant patch of the
// fields (u = 1, z = 1 on a centered sub-square/cube) makes the z-rows inside
// the patch vanish exactly, which tunes the aspect ratio alpha = M/N: the
// larger the patch, the smaller alpha. Zero rows are deleted from A.
struct InverseProblem {
    SparseMatrix A;   // M x N, M >= N
    MatrixXd coords;  // N x dim: grid point of each column's equation
    int dim = 2;
    int n = 0;
    double alpha = 0.0;  // achieved M/N
    int region_side = 0;
    VectorXd u, z;                   // the fields the Jacobian was taken at
    std::vector<Index> var_of_row;   // row -> variable id (u block, then z block)
    std::vector<Index> row_of_var;   // variable -> row (-1 for deleted z rows)
};

// dim in {2,3}; the region side is tuned (monotone bisection) so that the
// achieved alpha is as close as possible to target_alpha; warns on stderr and
// clamps when the target is outside the attainable range. Deterministic in
// (dim, n, target_alpha, seed).
InverseProblem make_inverse_problem(int dim, int n, double target_alpha, std::uint64_t seed);

// Independent consistency check of the assembled Jacobian against central
// finite differences of the residual evaluation (step 1e-6), over every
// stencil entry of every equation, including ones absent from A (which must
// differentiate to ~0). Returns the maximum absolute discrepancy.
double jacobian_fd_error(const InverseProblem& p);

// Plain coordinate files: one row of `dim` numbers per column.
MatrixXd read_coords(const std::string& path);
void write_coords(const MatrixXd& coords, const std::string& path);

// Partition files: one leaf id per column (used with import_partition).
std::vector<int> read_parts(const std::string& path);

}  // namespace spaqr
