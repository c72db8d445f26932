#pragma once

#include "spaqr/sparse.h"
#include "spaqr/transforms.h"

namespace spaqr {

struct SolveReport {
    int iterations = 0;
    bool converged = false;
    // Relative weighted normal residual ||w . A^T r|| / ||w . A^T b||, one
    // entry per iteration starting at the initial 1.0.
    std::vector<double> residual_history;
    double t_solve = 0.0;
    Index dropped_rows = 0;  // echoed from the factorization by the caller
};

struct CglsOptions {
    double tol = 1e-12;
    int maxit = 500;
};

// Conjugate gradient on the normal equations for min ||A u - b||_2, cold
// started at u = 0 and right-preconditioned by W when given (the iteration
// runs in y with u = W^{-1} y). Convergence test per iteration:
// ||w . (A^T r)|| / ||w . (A^T b)|| <= tol, with optional per-column weights
// w (to report the residual of an equivalent differently-scaled system).
// A zero-curvature breakdown stops early with converged = false; A^T b = 0
// returns u = 0, converged, history {0.0}.
SolveReport cgls(const SparseMatrix& A, const Factorization* W, const VectorXd& b,
                 VectorXd& u, const CglsOptions& opt, const VectorXd* weights = nullptr);

// Seminormal-equations solve u = W^{-1} W^{-T} A^T b followed by `refine`
// rounds of refinement against the true residual. With an exact factorization
// one round recovers the least-squares solution to working accuracy. When rep
// is given, the weighted relative normal residual is recomputed from scratch
// after the initial solve and after each refinement pass (refine+1 entries);
// converged means the final entry reached tol.
VectorXd csne_solve(const SparseMatrix& A, const Factorization& W, const VectorXd& b,
                    int refine = 1, SolveReport* rep = nullptr,
                    const VectorXd* weights = nullptr, double tol = 1e-12);

}  // namespace spaqr
