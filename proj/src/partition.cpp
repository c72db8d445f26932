#include "spaqr/partition.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace spaqr {

int default_num_levels(Index n) {
    if (n <= 64) return 1;
    const int L = static_cast<int>(std::ceil(std::log2(static_cast<double>(n) / 64.0)));
    return std::max(1, L);
}

namespace {

// Split `subset` roughly in half, deterministically. Side 2 donates the separator.
using Split = std::pair<std::vector<Index>, std::vector<Index>>;

Split bisect_geometric(const std::vector<Index>& subset, const MatrixXd& coords) {
    const int dim = static_cast<int>(coords.cols());
    int axis = 0;
    double best = -1.0;
    for (int d = 0; d < dim; ++d) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (Index v : subset) {
            lo = std::min(lo, coords(v, d));
            hi = std::max(hi, coords(v, d));
        }
        if (hi - lo > best) {
            best = hi - lo;
            axis = d;
        }
    }
    std::vector<Index> order = subset;
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (coords(a, axis) != coords(b, axis)) return coords(a, axis) < coords(b, axis);
        return a < b;
    });
    const size_t half = order.size() / 2;
    return {std::vector<Index>(order.begin(), order.begin() + half),
            std::vector<Index>(order.begin() + half, order.end())};
}

Split bisect_graph(const std::vector<Index>& subset, const PatternGraph& g,
                   const std::vector<char>& member) {
    // Double BFS: approximate a diameter endpoint, then peel by distance.
    auto bfs = [&](Index src, std::vector<int>& dist) {
        std::fill(dist.begin(), dist.end(), -1);
        std::deque<Index> q;
        dist[src] = 0;
        q.push_back(src);
        Index far = src;
        while (!q.empty()) {
            Index v = q.front();
            q.pop_front();
            if (dist[v] > dist[far] || (dist[v] == dist[far] && v < far)) far = v;
            for (Index u : g.adj[v])
                if (member[u] && dist[u] < 0) {
                    dist[u] = dist[v] + 1;
                    q.push_back(u);
                }
        }
        return far;
    };
    std::vector<int> dist(g.n, -1);
    const Index seed = *std::min_element(subset.begin(), subset.end());
    const Index far = bfs(seed, dist);
    bfs(far, dist);

    std::vector<Index> order = subset;
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        const int da = dist[a] < 0 ? std::numeric_limits<int>::max() : dist[a];
        const int db = dist[b] < 0 ? std::numeric_limits<int>::max() : dist[b];
        if (da != db) return da < db;
        return a < b;
    });
    const size_t half = order.size() / 2;
    return {std::vector<Index>(order.begin(), order.begin() + half),
            std::vector<Index>(order.begin() + half, order.end())};
}

struct TreeBuilder {
    const PatternGraph& g;
    const MatrixXd* coords;
    const std::vector<int>* parts;
    int L;
    SeparatorTree tree;
    std::vector<char> member;  // scratch: membership of the current subset
    std::vector<int> side;     // scratch: 0 = side1, 1 = side2, 2 = separator

    TreeBuilder(const PatternGraph& g_, const MatrixXd* c, const std::vector<int>* p, int L_)
        : g(g_), coords(c), parts(p), L(L_), member(g_.n, 0), side(g_.n, -1) {}

    // Carve a minimal separator out of side2: keep only vertices adjacent to
    // side1, then push the rest back until every kept vertex touches both sides.
    void minimalize(std::vector<Index>& s1, std::vector<Index>& s2, std::vector<Index>& sep) {
        for (Index v : s1) side[v] = 0;
        for (Index v : s2) side[v] = 1;
        sep.clear();
        std::vector<Index> cand;
        for (Index v : s2)
            for (Index u : g.adj[v])
                if (member[u] && side[u] == 0) {
                    cand.push_back(v);
                    break;
                }
        for (Index v : cand) side[v] = 2;
        bool changed = true;
        while (changed) {
            changed = false;
            for (Index v : cand) {
                if (side[v] != 2) continue;
                bool touch1 = false, touch2 = false;
                for (Index u : g.adj[v]) {
                    if (!member[u]) continue;
                    if (side[u] == 0) touch1 = true;
                    if (side[u] == 1) touch2 = true;
                }
                if (!(touch1 && touch2)) {
                    side[v] = touch2 ? 1 : 0;  // neither side: fold into side 1
                    changed = true;
                }
            }
        }
        std::vector<Index> n1, n2;
        for (Index v : s1) n1.push_back(v);
        for (Index v : cand)
            if (side[v] == 0) n1.push_back(v);
        for (Index v : s2)
            if (side[v] == 1) n2.push_back(v);
        for (Index v : cand)
            if (side[v] == 2) sep.push_back(v);
        std::sort(n1.begin(), n1.end());
        std::sort(n2.begin(), n2.end());
        std::sort(sep.begin(), sep.end());
        for (Index v : s1) side[v] = -1;
        for (Index v : s2) side[v] = -1;
        s1 = std::move(n1);
        s2 = std::move(n2);
    }

    int build(std::vector<Index> subset, int level, int parent, int path) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes[id].id = id;
        tree.nodes[id].level = level;
        tree.nodes[id].parent = parent;
        std::sort(subset.begin(), subset.end());
        tree.nodes[id].vertices = subset;
        if (level == L + 1) return id;

        std::vector<Index> s1, s2;
        if (parts) {
            const int bit = L - level;  // leaf id bit for this depth
            for (Index v : subset)
                (((*parts)[v] >> bit) & 1 ? s2 : s1).push_back(v);
        } else if (!subset.empty()) {
            for (Index v : subset) member[v] = 1;
            Split sp = coords ? bisect_geometric(subset, *coords) : bisect_graph(subset, g, member);
            s1 = std::move(sp.first);
            s2 = std::move(sp.second);
        }
        std::vector<Index> sep;
        if (!subset.empty()) {
            for (Index v : subset) member[v] = 1;
            minimalize(s1, s2, sep);
            for (Index v : subset) member[v] = 0;
        }
        tree.nodes[id].separator = sep;
        const int c0 = build(std::move(s1), level + 1, id, path << 1);
        const int c1 = build(std::move(s2), level + 1, id, (path << 1) | 1);
        tree.nodes[id].child = {c0, c1};
        return id;
    }
};

}  // namespace

SeparatorTree nested_dissection(const PatternGraph& g, int num_levels, const MatrixXd* coords) {
    if (num_levels < 1) throw std::invalid_argument("num_levels must be >= 1");
    TreeBuilder b(g, coords, nullptr, num_levels);
    std::vector<Index> all(g.n);
    std::iota(all.begin(), all.end(), 0);
    b.tree.num_levels = num_levels;
    b.tree.root = b.build(std::move(all), 1, -1, 0);
    return b.tree;
}

SeparatorTree import_partition(const PatternGraph& g, int num_levels,
                               const std::vector<int>& parts) {
    if (num_levels < 1) throw std::invalid_argument("num_levels must be >= 1");
    if (static_cast<Index>(parts.size()) != g.n)
        throw std::invalid_argument("partition vector has " + std::to_string(parts.size()) +
                                    " entries for " + std::to_string(g.n) + " columns");
    const int limit = 1 << num_levels;
    for (size_t v = 0; v < parts.size(); ++v)
        if (parts[v] < 0 || parts[v] >= limit)
            throw std::invalid_argument("part id " + std::to_string(parts[v]) + " of column " +
                                        std::to_string(v) + " outside [0," +
                                        std::to_string(limit) + ")");
    TreeBuilder b(g, nullptr, &parts, num_levels);
    std::vector<Index> all(g.n);
    std::iota(all.begin(), all.end(), 0);
    b.tree.num_levels = num_levels;
    b.tree.root = b.build(std::move(all), 1, -1, 0);
    return b.tree;
}

std::vector<int> ClusterHierarchy::active_at_stage(int k) const {
    std::vector<int> out;
    for (const auto& c : clusters)
        if (c.level == k) out.push_back(c.id);
    return out;
}

bool ClusterHierarchy::related(int a, int b) const {
    int ta = clusters[a].tree_node, tb = clusters[b].tree_node;
    if (tree->nodes[ta].level > tree->nodes[tb].level) std::swap(ta, tb);
    while (tb != -1 && tree->nodes[tb].level > tree->nodes[ta].level)
        tb = tree->nodes[tb].parent;
    return ta == tb;
}

ClusterHierarchy build_interfaces(const SeparatorTree& tree, const PatternGraph& g) {
    ClusterHierarchy h;
    h.num_levels = tree.num_levels;
    h.tree = &tree;
    const int L = tree.num_levels;

    // Owning node of every column (its leaf, or the separator that holds it).
    std::vector<int> node_of(g.n, -1);
    for (const auto& nd : tree.nodes) {
        if (nd.leaf())
            for (Index v : nd.vertices) node_of[v] = nd.id;
        else
            for (Index v : nd.separator) node_of[v] = nd.id;
    }
    auto region_at = [&](Index u, int k) {
        int t = node_of[u];
        while (tree.nodes[t].level > k) t = tree.nodes[t].parent;
        return t;
    };

    // Interior leaves, in tree order.
    for (const auto& nd : tree.nodes) {
        if (!nd.leaf() || nd.vertices.empty()) continue;
        ClusterHierarchy::Cluster c;
        c.id = static_cast<int>(h.clusters.size());
        c.tree_node = nd.id;
        c.level = L + 1;
        c.stage = L + 1;
        c.interior = true;
        c.cols = nd.vertices;
        h.clusters.push_back(std::move(c));
    }

    // Separator pieces, coarse separators last in elimination order but built
    // here per node; ids grouped by (level desc, node id).
    std::vector<const SeparatorTree::Node*> seps;
    for (const auto& nd : tree.nodes)
        if (!nd.leaf() && !nd.separator.empty()) seps.push_back(&nd);
    std::sort(seps.begin(), seps.end(), [](auto* a, auto* b) {
        if (a->level != b->level) return a->level > b->level;
        return a->id < b->id;
    });

    for (const auto* nd : seps) {
        const int l = nd->level;
        std::map<Index, int> piece_of;  // col -> cluster id at the previous stage
        for (int k = l; k <= L + 1; ++k) {
            std::vector<std::vector<Index>> pieces;
            if (k == l) {
                pieces.push_back(nd->separator);
            } else {
                // Group by the set of level-k regions each column touches, then
                // split every group into connected components.
                std::map<Index, std::vector<Index>> sig_of;
                std::map<std::vector<Index>, std::vector<Index>> groups;
                for (Index v : nd->separator) {
                    std::vector<Index> sig;
                    for (Index u : g.adj[v])
                        if (node_of[u] != nd->id) sig.push_back(region_at(u, k));
                    std::sort(sig.begin(), sig.end());
                    sig.erase(std::unique(sig.begin(), sig.end()), sig.end());
                    groups[sig].push_back(v);
                }
                std::map<Index, int> gid;
                int gi = 0;
                for (auto& [sig, members] : groups) {
                    for (Index v : members) gid[v] = gi;
                    ++gi;
                }
                std::set<Index> todo(nd->separator.begin(), nd->separator.end());
                while (!todo.empty()) {
                    Index seed = *todo.begin();
                    std::vector<Index> comp{seed};
                    todo.erase(todo.begin());
                    std::deque<Index> q{seed};
                    while (!q.empty()) {
                        Index v = q.front();
                        q.pop_front();
                        for (Index u : g.adj[v]) {
                            auto it = todo.find(u);
                            if (it != todo.end() && gid[u] == gid[v]) {
                                todo.erase(it);
                                comp.push_back(u);
                                q.push_back(u);
                            }
                        }
                    }
                    std::sort(comp.begin(), comp.end());
                    pieces.push_back(std::move(comp));
                }
                std::sort(pieces.begin(), pieces.end(),
                          [](const auto& a, const auto& b) { return a.front() < b.front(); });
            }
            std::map<Index, int> next_piece_of;
            for (auto& p : pieces) {
                ClusterHierarchy::Cluster c;
                c.id = static_cast<int>(h.clusters.size());
                c.tree_node = nd->id;
                c.level = k;
                c.stage = (k == l) ? l : 0;
                c.interior = false;
                c.parent = (k == l) ? -1 : piece_of.at(p.front());
                c.cols = p;
                for (Index v : p) next_piece_of[v] = c.id;
                h.clusters.push_back(std::move(c));
            }
            piece_of = std::move(next_piece_of);
        }
    }

    h.finest_of_col.assign(g.n, -1);
    for (const auto& c : h.clusters)
        if (c.level == L + 1)
            for (Index v : c.cols) h.finest_of_col[v] = c.id;
    return h;
}

std::vector<Index> order_columns(ClusterHierarchy& h) {
    const SeparatorTree& tree = *h.tree;
    const int L = h.num_levels;
    std::vector<Index> perm;
    perm.reserve(h.finest_of_col.size());

    // Interior leaves first, in tree order.
    for (const auto& c : h.clusters)
        if (c.interior) perm.insert(perm.end(), c.cols.begin(), c.cols.end());

    // Children pieces of every cluster, for the coarse-to-fine expansion.
    std::vector<std::vector<int>> kids(h.clusters.size());
    for (const auto& c : h.clusters)
        if (c.parent >= 0) kids[c.parent].push_back(c.id);
    for (auto& ks : kids)
        std::sort(ks.begin(), ks.end(), [&](int a, int b) {
            return h.clusters[a].cols.front() < h.clusters[b].cols.front();
        });

    // Separators by decreasing level; DFS through nested pieces keeps every
    // granularity contiguous.
    std::vector<int> roots;
    for (const auto& c : h.clusters)
        if (!c.interior && c.parent < 0) roots.push_back(c.id);
    std::sort(roots.begin(), roots.end(), [&](int a, int b) {
        const auto& ca = h.clusters[a];
        const auto& cb = h.clusters[b];
        const int la = tree.nodes[ca.tree_node].level, lb = tree.nodes[cb.tree_node].level;
        if (la != lb) return la > lb;
        return ca.tree_node < cb.tree_node;
    });
    auto expand = [&](auto&& self, int c) -> void {
        if (h.clusters[c].level == L + 1) {
            perm.insert(perm.end(), h.clusters[c].cols.begin(), h.clusters[c].cols.end());
            return;
        }
        for (int k : kids[c]) self(self, k);
    };
    for (int r : roots) expand(expand, r);

    assert(perm.size() == h.finest_of_col.size());
    std::vector<Index> newpos(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) newpos[perm[i]] = static_cast<Index>(i);
    for (auto& c : h.clusters) {
        for (Index& v : c.cols) v = newpos[v];
        std::sort(c.cols.begin(), c.cols.end());
    }
    std::vector<int> finest(perm.size());
    for (size_t old = 0; old < perm.size(); ++old) finest[newpos[old]] = h.finest_of_col[old];
    h.finest_of_col = std::move(finest);
    return perm;
}

RowMatching match_rows(const SparseMatrix& A) {
    const Index m = A.rows(), n = A.cols();
    RowMatching res;
    res.row_of_col.assign(n, -1);
    res.col_of_row.assign(m, -1);
    const auto& M = A.eigen();

    // Greedy seed: heaviest available row per column.
    for (Index j = 0; j < n; ++j) {
        Index best = -1;
        double bestv = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it) {
            if (res.col_of_row[it.row()] >= 0) continue;
            const double a = std::abs(it.value());
            if (a > bestv) {
                bestv = a;
                best = static_cast<Index>(it.row());
            }
        }
        if (best >= 0) {
            res.row_of_col[j] = best;
            res.col_of_row[best] = j;
            ++res.size;
        }
    }

    // Complete to maximum cardinality: BFS over alternating paths from each
    // still-free column, flipping the first path that reaches a free row.
    std::vector<Index> visited(m, -1);
    std::vector<Index> reached_from(m, -1);
    std::deque<Index> q;
    for (Index j0 = 0; j0 < n; ++j0) {
        if (res.row_of_col[j0] >= 0) continue;
        q.assign(1, j0);
        Index free_row = -1;
        while (!q.empty() && free_row < 0) {
            const Index j = q.front();
            q.pop_front();
            for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it) {
                const Index r = static_cast<Index>(it.row());
                if (visited[r] == j0) continue;
                visited[r] = j0;
                reached_from[r] = j;
                if (res.col_of_row[r] < 0) {
                    free_row = r;
                    break;
                }
                q.push_back(res.col_of_row[r]);
            }
        }
        if (free_row < 0) continue;
        for (Index r = free_row;;) {
            const Index j = reached_from[r];
            const Index prev = res.row_of_col[j];
            res.row_of_col[j] = r;
            res.col_of_row[r] = j;
            if (j == j0) break;
            r = prev;
        }
        ++res.size;
    }
    return res;
}

std::vector<int> assign_rows(const SparseMatrix& A, const ClusterHierarchy& h,
                             const RowMatching& m) {
    const Index M = A.rows();
    std::vector<int> owner(M, -1);

    // Root fallback: lowest-id finest piece of the root separator (or the
    // lowest-id finest cluster at all if the root separator is empty).
    int root_cluster = -1;
    for (const auto& c : h.clusters) {
        if (c.level != h.leaf_stage()) continue;
        if (!c.interior && c.tree_node == h.tree->root) {
            root_cluster = c.id;
            break;
        }
    }
    if (root_cluster < 0)
        for (const auto& c : h.clusters)
            if (c.level == h.leaf_stage()) {
                root_cluster = c.id;
                break;
            }

    std::vector<std::vector<std::pair<int, double>>> per_row(M);  // (cluster, value)
    const auto& S = A.eigen();
    for (Index j = 0; j < A.cols(); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(S, j); it; ++it)
            per_row[it.row()].emplace_back(h.finest_of_col[j], it.value());

    for (Index r = 0; r < M; ++r) {
        if (m.col_of_row[r] >= 0) {
            owner[r] = h.finest_of_col[m.col_of_row[r]];
            continue;
        }
        if (per_row[r].empty()) {
            owner[r] = root_cluster;
            continue;
        }
        std::map<int, double> w;
        for (auto& [c, v] : per_row[r]) w[c] += v * v;
        int best = -1;
        double bestw = -1.0;
        for (auto& [c, ww] : w)
            if (ww > bestw) {
                bestw = ww;
                best = c;
            }
        owner[r] = best;
    }
    return owner;
}

}  // namespace spaqr
