#pragma once

#include <map>
#include <vector>

#include "spaqr/partition.h"
#include "spaqr/sparse.h"
#include "spaqr/transforms.h"
#include "spaqr/types.h"

namespace spaqr {

struct FactorizeOptions {
    double eps = 1e-2;    // sparsification tolerance; 0 = exact elimination only
    int skip_levels = 3;  // stages from the leaves before sparsification starts
    bool store_q = false; // keep the orthogonal row factors (tests, diagnostics)
};

// A front: the active rows owned by one cluster, as dense blocks keyed by the
// column cluster they couple. Every block has rows.size() rows and as many
// columns as the key cluster currently has active columns. n1/n2 row split:
// the first min(|cols|, rows) rows are the pivot candidates (identity rows
// once scaled), the rest are the extra rows.
struct Front {
    int cluster = -1;
    std::vector<Index> rows;          // global row ids
    std::map<int, MatrixXd> blocks;   // column-cluster id -> dense block
    bool scaled_ok = false;           // diagonal block is exactly [I; 0] this stage
};

// Read-only view of the engine state handed to observers after each phase.
struct EngineView {
    const std::map<int, Front>* fronts = nullptr;            // by cluster id
    const std::vector<std::vector<Index>>* cols = nullptr;   // active columns per cluster
    Index pivots = 0, dropped = 0, trailing = 0;             // row accounting so far
};

// Instrumentation hook: phase is one of "eliminate", "scale", "sparsify_rows",
// "sparsify_cols", "merge"; detail is the cluster just eliminated (else -1).
struct FactorizeObserver {
    virtual ~FactorizeObserver() = default;
    virtual void on_phase(const char* phase, int stage, int detail, const EngineView& v) = 0;
};

// Hierarchical factorization of the scaled, permuted matrix A: eliminates the
// stage-k clusters bottom-up, then (for eps > 0) rescales every remaining
// interface to an identity diagonal block and, once past the skip window,
// compresses extra rows and redundant interface columns against their
// neighborhood at tolerance eps, then merges one level and repeats.
// row_owner assigns every row of A to a stage-(L+1) cluster.
Factorization spaqr_factorize(const SparseMatrix& A, const ClusterHierarchy& h,
                              const std::vector<int>& row_owner, const FactorizeOptions& opt,
                              FactorizeObserver* obs = nullptr);

}  // namespace spaqr
