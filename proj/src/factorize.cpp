#include "spaqr/factorize.h"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <set>

namespace spaqr {

namespace {

double now() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

struct Engine {
    const SparseMatrix& A;
    const ClusterHierarchy& h;
    const FactorizeOptions opt;
    FactorizeObserver* obs;

    int L;
    std::map<int, Front> fronts;
    std::vector<std::vector<Index>> cols;  // active column ids per cluster
    std::vector<char> eliminated;
    std::map<int, std::set<int>> holders;  // key cluster -> fronts holding a block for it
    Factorization out;
    Index npivots = 0;
    double reassign_time = 0.0;  // accumulated inside eliminate()

    Engine(const SparseMatrix& A_, const ClusterHierarchy& h_, const std::vector<int>& owner,
           const FactorizeOptions& o, FactorizeObserver* ob)
        : A(A_), h(h_), opt(o), obs(ob), L(h_.num_levels) {
        out.M = A.rows();
        out.N = A.cols();
        out.eps = opt.eps;
        out.has_q = opt.store_q;
        out.pivot_row.assign(out.N, -1);
        cols.resize(h.clusters.size());
        eliminated.assign(h.clusters.size(), 0);

        for (const auto& c : h.clusters)
            if (c.level == L + 1) {
                cols[c.id] = c.cols;
                Front f;
                f.cluster = c.id;
                fronts.emplace(c.id, std::move(f));
            }
        // Distribute rows (ascending) into their owner fronts.
        std::vector<Index> local(out.M);
        for (Index r = 0; r < out.M; ++r) {
            Front& f = fronts.at(owner[r]);
            local[r] = static_cast<Index>(f.rows.size());
            f.rows.push_back(r);
        }
        // Column position inside its cluster.
        std::vector<Index> colpos(out.N);
        for (const auto& c : h.clusters)
            if (c.level == L + 1)
                for (size_t i = 0; i < c.cols.size(); ++i) colpos[c.cols[i]] = static_cast<Index>(i);

        // Allocate and fill the initial blocks.
        const auto& M = A.eigen();
        std::set<std::pair<int, int>> pairs;
        for (Index j = 0; j < out.N; ++j) {
            const int q = h.finest_of_col[j];
            for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it)
                pairs.insert({owner[it.row()], q});
        }
        for (auto [f, q] : pairs) {
            fronts.at(f).blocks[q] =
                MatrixXd::Zero(static_cast<Index>(fronts.at(f).rows.size()),
                               static_cast<Index>(cols[q].size()));
            holders[q].insert(f);
        }
        for (Index j = 0; j < out.N; ++j) {
            const int q = h.finest_of_col[j];
            for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it)
                fronts.at(owner[it.row()]).blocks.at(q)(local[it.row()], colpos[j]) = it.value();
        }
    }

    Index width(int key) const { return static_cast<Index>(cols[key].size()); }

    void notify(const char* phase, int stage, int detail) {
        if (!obs) return;
        EngineView v;
        v.fronts = &fronts;
        v.cols = &cols;
        v.pivots = npivots;
        v.dropped = static_cast<Index>(out.dropped_rows.size());
        v.trailing = static_cast<Index>(out.trailing_rows.size());
        obs->on_phase(phase, stage, detail, v);
    }

    // Nearest ancestor separator of c with a live cluster; lowest id wins.
    int ancestor_target(int c) const {
        int node = h.clusters[c].tree_node;
        node = h.tree->nodes[node].parent;
        while (node != -1) {
            for (const auto& [id, f] : fronts)
                if (h.clusters[id].tree_node == node && !eliminated[id]) return id;
            node = h.tree->nodes[node].parent;
        }
        return -1;
    }

    // Move the listed rows (with their block content) from src to dst. Blocks
    // the target already has are grown in place; only keys it has never seen
    // are allocated fresh.
    void append_rows(int dst, const Front& src, const std::vector<Index>& lrows) {
        Front& ft = fronts.at(dst);
        const Index old_nr = static_cast<Index>(ft.rows.size());
        const Index add = static_cast<Index>(lrows.size());
        for (auto& [key, blk] : ft.blocks) {
            blk.conservativeResize(old_nr + add, Eigen::NoChange);
            auto is = src.blocks.find(key);
            if (is != src.blocks.end())
                for (Index t = 0; t < add; ++t) blk.row(old_nr + t) = is->second.row(lrows[t]);
            else
                blk.bottomRows(add).setZero();
        }
        for (const auto& [key, sb] : src.blocks) {
            if (width(key) == 0 || ft.blocks.count(key)) continue;
            MatrixXd nb = MatrixXd::Zero(old_nr + add, width(key));
            for (Index t = 0; t < add; ++t) nb.row(old_nr + t) = sb.row(lrows[t]);
            ft.blocks.emplace(key, std::move(nb));
            holders[key].insert(dst);
        }
        for (Index i : lrows) ft.rows.push_back(src.rows[i]);
        ft.scaled_ok = false;  // appended rows may carry a nonzero diagonal part
    }

    // Redistribute the surviving rows of an eliminated cluster. Candidates are
    // the live clusters whose rows entered the stack and that c's front still
    // has a block for; each row goes where its squared norm is largest.
    void move_extras(int c, const std::vector<int>& parts) {
        Front& fc = fronts.at(c);
        if (!fc.rows.empty()) {
            std::vector<int> cand;
            for (int m : parts)
                if (m != c && !eliminated[m] && fronts.count(m) && width(m) > 0 &&
                    fc.blocks.count(m))
                    cand.push_back(m);
            std::map<int, std::vector<Index>> dest;
            std::vector<Index> to_trailing;
            const Index nr = static_cast<Index>(fc.rows.size());
            for (Index i = 0; i < nr; ++i) {
                int best = -1;
                double bestw = -1.0;
                for (int m : cand) {
                    const double w = fc.blocks.at(m).row(i).squaredNorm();
                    if (w > bestw) {
                        bestw = w;
                        best = m;
                    }
                }
                if (best < 0) best = ancestor_target(c);
                if (best < 0)
                    to_trailing.push_back(i);
                else
                    dest[best].push_back(i);
            }
            for (const auto& [tgt, lrows] : dest) append_rows(tgt, fc, lrows);
            for (Index i : to_trailing) out.trailing_rows.push_back(fc.rows[i]);
        }
        for (const auto& [key, blk] : fc.blocks) {
            auto it = holders.find(key);
            if (it != holders.end()) it->second.erase(c);
        }
        fronts.erase(c);
        eliminated[c] = 1;
    }

    void eliminate(int c) {
        Front& fc = fronts.at(c);
        const Index cs = width(c);
        std::vector<int> parts;
        if (cs > 0) {
            // Stack participants: every front coupling c's columns, c first.
            auto hit = holders.find(c);
            if (hit != holders.end())
                for (int m : hit->second)
                    if (m != c) parts.push_back(m);
            if (fc.blocks.count(c)) parts.insert(parts.begin(), c);

            // Only rows genuinely coupled to the c block enter the stack: the
            // reflectors have zero support on the rest, so those rows stay in
            // their fronts as they are. With a tolerance in play, "coupled"
            // also excludes rows whose coupling is negligible next to the
            // strongest one; every QR smears roundoff residue across the
            // union of the stacked supports, and taking it at face value
            // recruits the whole domain into single eliminations within a few
            // stages. The floor sits two orders of magnitude below eps, so
            // the skipped residue is invisible next to the truncation the
            // factor already tolerates; the exact mode (eps = 0) keeps the
            // exact-zero test.
            std::map<int, std::vector<Index>> sel;
            Index total_rows = 0;
            double tau2 = 0.0;
            if (opt.eps > 0.0) {
                double max2 = 0.0;
                for (int m : parts) {
                    const MatrixXd& B = fronts.at(m).blocks.at(c);
                    for (Index i = 0; i < B.rows(); ++i)
                        max2 = std::max(max2, B.row(i).squaredNorm());
                }
                tau2 = max2 * opt.eps * opt.eps * 1e-4;
            }
            auto select = [&](double floor2) {
                sel.clear();
                total_rows = 0;
                for (int m : parts) {
                    const MatrixXd& B = fronts.at(m).blocks.at(c);
                    auto& s = sel[m];
                    for (Index i = 0; i < B.rows(); ++i) {
                        const bool in = floor2 > 0.0 ? B.row(i).squaredNorm() > floor2
                                                     : !B.row(i).isZero(0.0);
                        if (in) s.push_back(i);
                    }
                    total_rows += static_cast<Index>(s.size());
                }
            };
            select(tau2);
            if (total_rows < cs && tau2 > 0.0) select(0.0);
            if (total_rows < cs)
                throw SingularFrontError(c, "only " + std::to_string(total_rows) +
                                                " rows couple " + std::to_string(cs) + " columns");

            // Fill can only land in columns some stacked row already touches:
            // a column block that is zero on every stacked row stays zero
            // under the reflectors, so it does not enter the stack at all.
            // The same noise floor applies: support below it is left in place
            // untransformed rather than allowed to recruit the key.
            std::set<int> keyset;
            for (int m : parts) {
                if (sel[m].empty()) continue;
                for (const auto& [key, blk] : fronts.at(m).blocks) {
                    if (key == c || width(key) == 0 || keyset.count(key)) continue;
                    for (Index i : sel[m]) {
                        const bool in = tau2 > 0.0 ? blk.row(i).squaredNorm() > tau2
                                                   : !blk.row(i).isZero(0.0);
                        if (in) {
                            keyset.insert(key);
                            break;
                        }
                    }
                }
            }
            std::vector<int> keys{c};
            keys.insert(keys.end(), keyset.begin(), keyset.end());
            std::vector<Index> off(keys.size() + 1, 0);
            for (size_t i = 0; i < keys.size(); ++i) off[i + 1] = off[i] + width(keys[i]);
            const Index total_cols = off.back();

            MatrixXd S = MatrixXd::Zero(total_rows, total_cols);
            Index roff = 0;
            for (int m : parts) {
                Front& fm = fronts.at(m);
                const auto& s = sel[m];
                for (size_t ki = 0; ki < keys.size(); ++ki) {
                    auto bi = fm.blocks.find(keys[ki]);
                    if (bi == fm.blocks.end()) continue;
                    const Index w = width(keys[ki]);
                    for (size_t i = 0; i < s.size(); ++i)
                        S.block(roff + static_cast<Index>(i), off[ki], 1, w) =
                            bi->second.row(s[i]);
                }
                roff += static_cast<Index>(s.size());
            }

            ReflectorSet H;
            MatrixXd Rss;
            block_householder_qr(S.leftCols(cs), H, Rss);
            try {
                check_diag_invertible(Rss);
            } catch (const SingularFrontError& e) {
                throw SingularFrontError(c, e.reason);
            }
            if (total_cols > cs) {
                auto rest = S.rightCols(total_cols - cs);
                apply_reflectors_left_t(H, rest);
            }

            TriangularScale t;
            t.cols = cols[c];
            t.R = Rss;
            {
                // The pivot rows pick up the same smeared residue as the rest
                // of the stack: a neighbor whose whole column slice sits below
                // the noise floor is not a coupling worth recording. Dropping
                // it keeps the stored factor (and every later solve with it)
                // as narrow as the data warrants; exact mode records all.
                const auto piv = S.topRows(cs);
                double floor_ = 0.0;
                if (opt.eps > 0.0 && total_cols > cs)
                    floor_ = piv.rightCols(total_cols - cs).cwiseAbs().maxCoeff() *
                             opt.eps * 1e-2;
                std::vector<size_t> keep;
                Index kept_cols = 0;
                for (size_t ki = 1; ki < keys.size(); ++ki) {
                    const Index w = width(keys[ki]);
                    const bool live =
                        floor_ > 0.0
                            ? piv.middleCols(off[ki], w).cwiseAbs().maxCoeff() > floor_
                            : !piv.middleCols(off[ki], w).isZero(0.0);
                    if (live) {
                        keep.push_back(ki);
                        kept_cols += w;
                    }
                }
                t.C.resize(cs, kept_cols);
                Index o = 0;
                for (size_t ki : keep) {
                    const Index w = width(keys[ki]);
                    t.coupled.insert(t.coupled.end(), cols[keys[ki]].begin(),
                                     cols[keys[ki]].end());
                    t.C.middleCols(o, w) = piv.middleCols(off[ki], w);
                    o += w;
                }
            }
            out.W.emplace_back(std::move(t));
            if (opt.store_q) {
                RowReflect q;
                for (int m : parts)
                    for (Index i : sel[m]) q.rows.push_back(fronts.at(m).rows[i]);
                q.H = H;
                out.Q.push_back(std::move(q));
            }

            // The first cs stack rows become the pivots of c's columns.
            {
                Index pos = 0;
                for (int m : parts) {
                    for (Index i : sel[m]) {
                        if (pos >= cs) break;
                        out.pivot_row[cols[c][pos]] = fronts.at(m).rows[i];
                        ++pos;
                    }
                    if (pos >= cs) break;
                }
                npivots += cs;
            }

            // Scatter the transformed rows back; pivot rows are consumed, c's
            // columns vanish, and the stacked rows pick up their fill blocks.
            // Rows that stayed out of the stack keep their old data (and are
            // zero in any key their front did not already hold).
            roff = 0;
            for (int m : parts) {
                Front& fm = fronts.at(m);
                const auto& s = sel[m];
                if (s.empty()) {
                    fm.blocks.erase(c);
                    continue;
                }
                const Index nr = static_cast<Index>(fm.rows.size());
                if (roff >= cs) {
                    // None of this front's rows became pivots, so its row set
                    // is unchanged: write the transformed rows back into the
                    // stack keys in place instead of rebuilding every block.
                    for (size_t ki = 1; ki < keys.size(); ++ki) {
                        const Index w = width(keys[ki]);
                        auto bi = fm.blocks.find(keys[ki]);
                        if (bi == fm.blocks.end())
                            bi = fm.blocks.emplace(keys[ki], MatrixXd::Zero(nr, w)).first;
                        for (size_t i = 0; i < s.size(); ++i)
                            bi->second.row(s[i]) =
                                S.block(roff + static_cast<Index>(i), off[ki], 1, w);
                        holders[keys[ki]].insert(m);
                    }
                    fm.blocks.erase(c);
                    fm.scaled_ok = false;
                    roff += static_cast<Index>(s.size());
                    continue;
                }
                std::vector<Index> spos(nr, -1);
                for (size_t i = 0; i < s.size(); ++i) spos[s[i]] = roff + static_cast<Index>(i);
                std::vector<Index> keep;
                for (Index i = 0; i < nr; ++i)
                    if (spos[i] < 0 || spos[i] >= cs) keep.push_back(i);
                std::vector<Index> nrows(keep.size());
                for (size_t i = 0; i < keep.size(); ++i) nrows[i] = fm.rows[keep[i]];
                std::map<int, MatrixXd> nblocks;
                // Blocks outside the stack carry at most noise-floor values
                // on stacked rows (anything more would have pulled the key
                // in); keep them, minus the pivot rows, whose leftovers are
                // below the floor anyway.
                for (const auto& [key, blk] : fm.blocks) {
                    if (key == c || keyset.count(key)) continue;
                    MatrixXd nb(static_cast<Index>(keep.size()), blk.cols());
                    for (size_t i = 0; i < keep.size(); ++i)
                        nb.row(static_cast<Index>(i)) = blk.row(keep[i]);
                    nblocks[key] = std::move(nb);
                }
                for (size_t ki = 1; ki < keys.size(); ++ki) {
                    const Index w = width(keys[ki]);
                    auto old = fm.blocks.find(keys[ki]);
                    MatrixXd nb(static_cast<Index>(keep.size()), w);
                    for (size_t i = 0; i < keep.size(); ++i) {
                        const Index li = keep[i];
                        if (spos[li] >= 0)
                            nb.row(static_cast<Index>(i)) = S.block(spos[li], off[ki], 1, w);
                        else if (old != fm.blocks.end())
                            nb.row(static_cast<Index>(i)) = old->second.row(li);
                        else
                            nb.row(static_cast<Index>(i)).setZero();
                    }
                    nblocks[keys[ki]] = std::move(nb);
                    holders[keys[ki]].insert(m);
                }
                fm.rows = std::move(nrows);
                fm.blocks = std::move(nblocks);
                fm.scaled_ok = false;
                roff += static_cast<Index>(s.size());
            }
            holders.erase(c);
        }
        const double t0 = now();
        move_extras(c, parts);
        reassign_time += now() - t0;
    }

    void scale_all() {
        for (auto& [p, f] : fronts) {
            f.scaled_ok = false;
            const Index cs = width(p);
            if (cs == 0) continue;
            const Index r = static_cast<Index>(f.rows.size());
            if (r < cs) continue;  // deferred until enough rows arrive
            auto di = f.blocks.find(p);
            if (di == f.blocks.end()) di = f.blocks.emplace(p, MatrixXd::Zero(r, cs)).first;
            MatrixXd& D = di->second;
            if (D.topRows(cs).isIdentity(0.0) && (r == cs || D.bottomRows(r - cs).isZero(0.0))) {
                f.scaled_ok = true;
                continue;
            }
            ReflectorSet U;
            MatrixXd Rp;
            block_householder_qr(D, U, Rp);
            try {
                check_diag_invertible(Rp);
            } catch (const SingularFrontError& e) {
                throw SingularFrontError(p, e.reason);
            }
            // One application over the glued row block beats one per key.
            {
                std::vector<int> nkeys;
                Index tw = 0;
                for (const auto& [key, blk] : f.blocks)
                    if (key != p && blk.cols() > 0) {
                        nkeys.push_back(key);
                        tw += blk.cols();
                    }
                if (tw > 0) {
                    MatrixXd M(r, tw);
                    Index o = 0;
                    for (int key : nkeys) {
                        const auto& blk = f.blocks.at(key);
                        M.middleCols(o, blk.cols()) = blk;
                        o += blk.cols();
                    }
                    apply_reflectors_left_t(U, M);
                    o = 0;
                    for (int key : nkeys) {
                        auto& blk = f.blocks.at(key);
                        blk = M.middleCols(o, blk.cols());
                        o += blk.cols();
                    }
                }
            }
            D.setZero();
            D.topRows(cs).setIdentity();
            auto hit = holders.find(p);
            if (hit != holders.end())
                for (int m : hit->second)
                    if (m != p) tri_solve_upper(Rp, fronts.at(m).blocks.at(p), Side::Right, false);
            TriangularScale t;
            t.cols = cols[p];
            t.R = std::move(Rp);
            out.W.emplace_back(std::move(t));
            if (opt.store_q) out.Q.push_back({f.rows, std::move(U)});
            f.scaled_ok = true;
        }
    }

    void sparsify_rows_all() {
        for (auto& [p, f] : fronts) {
            const Index cs = width(p);
            if (cs > 0 && !f.scaled_ok) continue;
            const Index r = static_cast<Index>(f.rows.size());
            const Index p2 = r - cs;
            if (p2 <= 0) continue;

            std::vector<int> nkeys;
            for (const auto& [key, blk] : f.blocks)
                if (key != p && width(key) > 0) nkeys.push_back(key);
            std::vector<Index> off(nkeys.size() + 1, 0);
            for (size_t i = 0; i < nkeys.size(); ++i) off[i + 1] = off[i] + width(nkeys[i]);
            const Index nw = off.back();

            Index keep = 0;
            TruncatedQR T;
            if (nw > 0) {
                MatrixXd B(p2, nw);
                for (size_t i = 0; i < nkeys.size(); ++i)
                    B.middleCols(off[i], width(nkeys[i])) = f.blocks.at(nkeys[i]).bottomRows(p2);
                T = truncated_cpqr(B, opt.eps);
                keep = T.rank;
            }
            if (keep >= p2) continue;

            if (opt.store_q && nw > 0) {
                RowReflect q;
                q.rows.assign(f.rows.begin() + cs, f.rows.end());
                q.H = T.H;
                out.Q.push_back(std::move(q));
            }
            for (Index i = cs + keep; i < r; ++i) out.dropped_rows.push_back(f.rows[i]);
            f.rows.resize(cs + keep);
            for (auto& [key, blk] : f.blocks) {
                if (key == p) {
                    MatrixXd nb = MatrixXd::Zero(cs + keep, cs);
                    nb.topRows(cs) = blk.topRows(cs);
                    blk = std::move(nb);
                } else {
                    const size_t ki =
                        std::find(nkeys.begin(), nkeys.end(), key) - nkeys.begin();
                    MatrixXd nb(cs + keep, width(key));
                    nb.topRows(cs) = blk.topRows(cs);
                    nb.bottomRows(keep) = T.R.middleCols(off[ki], width(key)).topRows(keep);
                    blk = std::move(nb);
                }
            }
        }
    }

    void sparsify_cols_all() {
        for (auto& [p, f] : fronts) {
            const Index cs = width(p);
            if (cs == 0 || !f.scaled_ok) continue;
            const Index r = static_cast<Index>(f.rows.size());
            const Index p2 = r - cs;

            std::vector<int> rparts;
            auto hit = holders.find(p);
            if (hit != holders.end())
                for (int m : hit->second)
                    if (m != p && fronts.count(m)) rparts.push_back(m);
            std::vector<int> nkeys;
            for (const auto& [key, blk] : f.blocks)
                if (key != p && width(key) > 0) nkeys.push_back(key);

            Index wrows = 0;
            for (int m : rparts) wrows += static_cast<Index>(fronts.at(m).rows.size());
            Index wcols = 0;
            for (int key : nkeys) wcols += width(key);

            // Couplings of p's columns: rows elsewhere (transposed) and p's own
            // pivot-row couplings into the neighbors.
            MatrixXd G(cs, wrows + wcols);
            Index goff = 0;
            for (int m : rparts) {
                const auto& B = fronts.at(m).blocks.at(p);
                G.middleCols(goff, B.rows()) = B.transpose();
                goff += static_cast<Index>(B.rows());
            }
            for (int key : nkeys) {
                G.middleCols(goff, width(key)) = f.blocks.at(key).topRows(cs);
                goff += width(key);
            }

            TruncatedQR T = truncated_cpqr(G, opt.eps);
            const Index r2 = T.rank;
            if (r2 >= cs) continue;

            if (r2 > 0) {
                ColumnRotation w;
                w.cols = cols[p];
                w.Q = T.H;
                out.W.emplace_back(std::move(w));
                if (opt.store_q) {
                    RowReflect q;
                    q.rows.assign(f.rows.begin(), f.rows.begin() + cs);
                    q.H = T.H;
                    out.Q.push_back(std::move(q));
                }
            }

            // Rotated couplings: other fronts keep the leading r2 columns,
            // p's own pivot rows keep the leading r2 rows. The trailing parts
            // are O(eps) and are discarded with the fine columns.
            Index seg = 0;
            for (int m : rparts) {
                auto& B = fronts.at(m).blocks.at(p);
                const Index nr = static_cast<Index>(B.rows());
                if (r2 > 0) {
                    B = T.R.middleCols(seg, nr).transpose();
                } else {
                    fronts.at(m).blocks.erase(p);
                    if (hit != holders.end()) hit->second.erase(m);
                }
                seg += nr;
            }
            for (Index i = r2; i < cs; ++i) {
                out.pivot_row[cols[p][i]] = f.rows[i];
                ++npivots;
            }
            std::vector<Index> nrows;
            nrows.insert(nrows.end(), f.rows.begin(), f.rows.begin() + r2);
            nrows.insert(nrows.end(), f.rows.begin() + cs, f.rows.end());
            f.rows = std::move(nrows);
            for (int key : nkeys) {
                auto& blk = f.blocks.at(key);
                MatrixXd nb(r2 + p2, width(key));
                nb.topRows(r2) = T.R.middleCols(seg, width(key)).topRows(r2);
                nb.bottomRows(p2) = blk.bottomRows(p2);
                blk = std::move(nb);
                seg += width(key);
            }
            cols[p].resize(r2);
            if (r2 > 0) {
                auto& D = f.blocks.at(p);
                D = MatrixXd::Zero(r2 + p2, r2);
                D.topRows(r2).setIdentity();
            } else {
                f.blocks.erase(p);
                holders.erase(p);
                f.scaled_ok = false;
            }
        }
    }

    void merge_level() {
        std::map<int, std::vector<int>> groups;
        for (const auto& [c, f] : fronts) {
            const int parent = h.clusters[c].parent;
            assert(parent >= 0);
            groups[parent].push_back(c);
        }
        for (const auto& [P, kids] : groups) {
            cols[P].clear();
            for (int c : kids) cols[P].insert(cols[P].end(), cols[c].begin(), cols[c].end());
        }
        // Column offset of each child key inside its parent's block.
        std::map<int, Index> child_off;
        for (const auto& [P, kids] : groups) {
            Index o = 0;
            for (int c : kids) {
                child_off[c] = o;
                o += width(c);
            }
        }

        std::map<int, Front> nf;
        holders.clear();
        for (const auto& [P, kids] : groups) {
            if (kids.size() == 1) {
                // A lone child whose keys all map width-for-width onto their
                // parents is the same front under new names: rekey and move.
                Front& fc = fronts.at(kids[0]);
                bool movable = true;
                for (const auto& [key, blk] : fc.blocks)
                    if (width(key) != 0 && width(h.clusters[key].parent) != width(key)) {
                        movable = false;
                        break;
                    }
                if (movable) {
                    Front f;
                    f.cluster = P;
                    f.rows = std::move(fc.rows);
                    f.scaled_ok = fc.scaled_ok;
                    for (auto& [key, blk] : fc.blocks) {
                        if (width(key) == 0) continue;
                        const int PK = h.clusters[key].parent;
                        f.blocks.emplace(PK, std::move(blk));
                        holders[PK].insert(P);
                    }
                    nf.emplace(P, std::move(f));
                    continue;
                }
            }
            Front f;
            f.cluster = P;
            // Pivot rows of all children first, then every remainder; this
            // keeps a merged diagonal of scaled children exactly [I; 0] when
            // the siblings are uncoupled.
            std::map<int, std::pair<Index, Index>> rowmap;  // child -> (p1 start, p2 start)
            Index pos = 0;
            for (int c : kids) {
                const Front& fc = fronts.at(c);
                const Index take =
                    std::min<Index>(width(c), static_cast<Index>(fc.rows.size()));
                rowmap[c].first = pos;
                for (Index i = 0; i < take; ++i) f.rows.push_back(fc.rows[i]);
                pos += take;
            }
            for (int c : kids) {
                const Front& fc = fronts.at(c);
                const Index take =
                    std::min<Index>(width(c), static_cast<Index>(fc.rows.size()));
                rowmap[c].second = pos;
                for (Index i = take; i < static_cast<Index>(fc.rows.size()); ++i)
                    f.rows.push_back(fc.rows[i]);
                pos += static_cast<Index>(fc.rows.size()) - take;
            }
            const Index nr = static_cast<Index>(f.rows.size());
            for (int c : kids) {
                const Front& fc = fronts.at(c);
                const Index take =
                    std::min<Index>(width(c), static_cast<Index>(fc.rows.size()));
                for (const auto& [key, blk] : fc.blocks) {
                    if (width(key) == 0) continue;
                    const int PK = h.clusters[key].parent;
                    auto bi = f.blocks.find(PK);
                    if (bi == f.blocks.end())
                        bi = f.blocks.emplace(PK, MatrixXd::Zero(nr, width(PK))).first;
                    const Index co = child_off.at(key);
                    bi->second.block(rowmap[c].first, co, take, blk.cols()) = blk.topRows(take);
                    bi->second.block(rowmap[c].second, co, blk.rows() - take, blk.cols()) =
                        blk.bottomRows(blk.rows() - take);
                }
            }
            for (const auto& [key, blk] : f.blocks) holders[key].insert(P);
            nf.emplace(P, std::move(f));
        }
        fronts = std::move(nf);
    }

    void snapshot(StageStats& st) {
        for (const auto& [c, f] : fronts) {
            const Index cs = width(c);
            if (cs > 0) {
                st.front_cols.push_back(cs);
                st.front_aspect.push_back(static_cast<double>(f.rows.size()) / cs);
            }
            if (h.clusters[c].tree_node == h.tree->root) {
                st.top_rows += static_cast<Index>(f.rows.size());
                st.top_cols += cs;
            }
        }
    }

    Factorization run() {
        for (int k = L + 1; k >= 1; --k) {
            StageStats st;
            st.stage = k;
            reassign_time = 0.0;
            double t0 = now();
            for (const auto& c : h.clusters)
                if (c.level == k && c.stage == k) {
                    eliminate(c.id);
                    notify("eliminate", k, c.id);
                }
            st.t_eliminate = now() - t0 - reassign_time;
            st.t_reassign = reassign_time;

            // Scaling mixes every row of a front, which welds together rows
            // whose supports were disjoint; that is only worth it right
            // before sparsification can compress the result, so both wait
            // out the skip window together.
            if (opt.eps > 0.0 && k >= 2 && L + 1 - k >= opt.skip_levels) {
                t0 = now();
                scale_all();
                st.t_scale = now() - t0;
                notify("scale", k, -1);
                t0 = now();
                sparsify_rows_all();
                notify("sparsify_rows", k, -1);
                sparsify_cols_all();
                st.t_sparsify = now() - t0;
                notify("sparsify_cols", k, -1);
            }
            snapshot(st);
            if (k >= 2) {
                t0 = now();
                merge_level();
                st.t_merge = now() - t0;
                notify("merge", k, -1);
            }
            st.nnz_w = out.nnz_w();
            out.stages.push_back(st);
        }
        // Anything still alive carries exactly-zero rows.
        for (const auto& [c, f] : fronts)
            out.trailing_rows.insert(out.trailing_rows.end(), f.rows.begin(), f.rows.end());
        fronts.clear();
        return std::move(out);
    }
};

}  // namespace

Factorization spaqr_factorize(const SparseMatrix& A, const ClusterHierarchy& h,
                              const std::vector<int>& row_owner, const FactorizeOptions& opt,
                              FactorizeObserver* obs) {
    if (A.rows() < A.cols())
        throw std::invalid_argument("matrix must have at least as many rows as columns");
    if (static_cast<Index>(row_owner.size()) != A.rows())
        throw std::invalid_argument("row_owner size mismatch");
    Engine e(A, h, row_owner, opt, obs);
    return e.run();
}

}  // namespace spaqr
