#pragma once

#include <array>
#include <optional>
#include <vector>

#include "spaqr/sparse.h"
#include "spaqr/types.h"

namespace spaqr {

// Recursive bisection tree over the columns. Internal nodes are separators
// (level 1 = root .. L = deepest); leaves sit at level L+1 and hold the
// interior columns. node.vertices is the full subset owned by the node;
// for internal nodes vertices = separator + child vertex sets (disjoint).
struct SeparatorTree {
    struct Node {
        int id = -1;
        int level = 0;
        int parent = -1;
        std::array<int, 2> child{-1, -1};
        std::vector<Index> vertices;
        std::vector<Index> separator;   // empty for leaves
        bool leaf() const { return child[0] < 0; }
    };
    int num_levels = 0;  // L: number of separator levels
    int root = 0;
    std::vector<Node> nodes;
};

// L = ceil(log2(N / 64)), at least 1: leaf interiors of roughly 64 columns.
int default_num_levels(Index n);

enum class BisectMethod { Geometric, Graph };

// Nested dissection of the column connectivity graph. With coords (one point
// per column, 2 or 3 columns wide) the split is geometric (median along the
// longest bounding-box axis); otherwise a double-BFS layering bisection.
// Separators are minimal: every separator vertex is adjacent to both sides.
SeparatorTree nested_dissection(const PatternGraph& g, int num_levels,
                                const MatrixXd* coords);

// Build the tree from an externally supplied partition: parts[v] = leaf id in
// [0, 2^L). Leaf k owns the vertices whose id has the bit path of k; separators
// are carved out of the second half at every split, as above.
SeparatorTree import_partition(const PatternGraph& g, int num_levels,
                               const std::vector<int>& parts);

// Interfaces: every separator is subdivided, per coarsening stage k, into the
// pieces that interact with distinct sets of level-k regions (connected
// components within each such set). Pieces at stage k+1 merge into their
// containing piece at stage k. Interior leaves are single clusters at stage
// L+1. A cluster's stage is when it is eliminated: interiors and the finest
// separator pieces live through stages L+1 .. level(sep), where the separator
// is eliminated as a single cluster.
struct ClusterHierarchy {
    struct Cluster {
        int id = -1;
        int tree_node = -1;    // owning SeparatorTree node
        int level = 0;         // granularity stage k (interiors: L+1)
        int parent = -1;       // containing cluster at stage k-1 (-1 if none)
        int stage = 0;         // elimination stage; 0 if merged away earlier
        bool interior = false;
        std::vector<Index> cols;  // original column ids, sorted
    };
    int num_levels = 0;  // L
    std::vector<Cluster> clusters;
    std::vector<int> finest_of_col;  // column -> cluster at stage L+1
    const SeparatorTree* tree = nullptr;

    int leaf_stage() const { return num_levels + 1; }
    std::vector<int> active_at_stage(int k) const;  // clusters live at stage k
    // True iff the owning tree nodes are on one root-to-leaf path.
    bool related(int cluster_a, int cluster_b) const;
};

ClusterHierarchy build_interfaces(const SeparatorTree& tree, const PatternGraph& g);

// Column elimination order: interior leaves first (tree order), then
// separators by decreasing level; inside a separator, coarse-to-fine piece
// order with columns contiguous at every granularity. Returns perm with
// perm[new_pos] = original column. Rewrites the hierarchy's column ids into
// the permuted space (so cluster columns become contiguous ranges).
std::vector<Index> order_columns(ClusterHierarchy& h);

// Bipartite row-column matching on the pattern of A, preferring large |A_ij|:
// greedy seeding by weight, then augmenting paths to maximum cardinality.
struct RowMatching {
    std::vector<Index> row_of_col;  // size N; -1 if column unmatched
    std::vector<Index> col_of_row;  // size M; -1 if row unmatched
    Index size = 0;
};
RowMatching match_rows(const SparseMatrix& A);

// Every row goes to a stage-(L+1) cluster: its matched column's cluster, or
// for unmatched rows the cluster maximizing sum of squared entries (ties to
// the lowest cluster id; structurally empty rows go to the lowest-id finest
// piece of the root separator).
std::vector<int> assign_rows(const SparseMatrix& A, const ClusterHierarchy& h,
                             const RowMatching& m);

}  // namespace spaqr
