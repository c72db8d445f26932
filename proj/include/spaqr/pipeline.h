#pragma once

#include <optional>

#include "spaqr/factorize.h"
#include "spaqr/partition.h"
#include "spaqr/solve.h"
#include "spaqr/sparse.h"

namespace spaqr {

enum class SolverKind { Spaqr, Direct, Diag };

struct PipelineOptions {
    double eps = 1e-2;
    int levels = 0;        // separator levels; 0 = pick from the column count
    int skip_levels = 3;   // leaf stages finished before sparsification starts
    bool store_q = false;
    SolverKind solver = SolverKind::Spaqr;
    double tol = 1e-12;
    int maxit = 500;
    int refine = 1;        // refinement rounds of the seminormal direct solve
};

struct PipelineTimings {
    double t_partition = 0;  // dissection, interfaces, ordering, row assignment
    double t_factorize = 0;
};

// End-to-end driver: scales the columns, orders them by nested dissection,
// assigns rows, factorizes, and solves min ||A x - b|| in the ORIGINAL column
// order and scaling. SolverKind::Direct is the same pipeline with the
// tolerance forced to 0 (exact factorization); SolverKind::Diag skips the
// factorization entirely and runs CGLS on the unit-column scaled system.
class Pipeline {
public:
    // coords: one point per column (N x 2 or N x 3) switches the dissection to
    // geometric bisection; parts (column -> leaf in [0, 2^L)) overrides both.
    Pipeline(const SparseMatrix& A, const PipelineOptions& opt,
             const MatrixXd* coords = nullptr, const std::vector<int>* parts = nullptr,
             FactorizeObserver* obs = nullptr);
    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    // Preconditioned CGLS (per the configured solver). Negative tol/maxit fall
    // back to the constructor options.
    VectorXd solve(const VectorXd& b, SolveReport* rep = nullptr, double tol = -1.0,
                   int maxit = -1) const;

    // Seminormal-equations direct solve with refinement; requires a
    // factorization (not available for SolverKind::Diag).
    VectorXd solve_direct(const VectorXd& b, SolveReport* rep = nullptr) const;

    Index rows() const { return Aw_.rows(); }
    Index cols() const { return Aw_.cols(); }
    const PipelineOptions& options() const { return opt_; }
    const Factorization* factorization() const { return F_ ? &*F_ : nullptr; }
    const ClusterHierarchy& hierarchy() const { return h_; }
    const std::vector<Index>& permutation() const { return perm_; }  // perm[new] = old
    const VectorXd& column_norms() const { return d_; }              // original order
    const SparseMatrix& scaled() const { return Aw_; }               // scaled + permuted
    const PipelineTimings& timings() const { return t_; }

    // Map a solution of the scaled, permuted system back to original columns.
    VectorXd unscale(const VectorXd& u) const;

private:
    PipelineOptions opt_;
    SparseMatrix Aw_;
    VectorXd d_;                // original column norms
    std::vector<Index> perm_;
    VectorXd weights_;          // weights_[i] = d_[perm_[i]], for residual reporting
    SeparatorTree tree_;
    ClusterHierarchy h_;
    std::optional<Factorization> F_;
    PipelineTimings t_;
};

// The default benchmark right-hand side: b = A x* + eta ||A x*|| g_perp with a
// seeded random x* and noise projected (approximately, with the pipeline's own
// solver) onto the complement of the range, so x* stays the true solution.
struct RhsSample {
    VectorXd b;
    VectorXd x_star;
};
RhsSample make_rhs(const SparseMatrix& A, const Pipeline& p, unsigned long seed,
                   double eta = 1e-8);

}  // namespace spaqr
