#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "spaqr/factorize.h"
#include "spaqr/partition.h"
#include "spaqr/problems.h"
#include "spaqr/sparse.h"

using namespace spaqr;

namespace {

// Scale, partition, order, and match a matrix the way the solver pipeline
// does, keeping the hierarchy alive next to its tree.
struct Setup {
    SparseMatrix A;  // scaled and permuted
    VectorXd d;
    SeparatorTree tree;
    ClusterHierarchy h;
    std::vector<Index> perm;
    std::vector<int> owner;

    Setup(const SparseMatrix& A0, const MatrixXd* coords, int L) {
        A = A0;
        d = scale_columns(A);
        PatternGraph g = ata_graph(A);
        tree = nested_dissection(g, L, coords);
        h = build_interfaces(tree, g);
        perm = order_columns(h);
        A = permute_columns(A, perm);
        RowMatching m = match_rows(A);
        owner = assign_rows(A, h, m);
    }
};

SparseMatrix random_full_rank(Index m, Index n, int extra_per_col, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<Eigen::Triplet<double>> t;
    for (Index j = 0; j < n; ++j) t.emplace_back(j, j, 3.0 + uni(rng));  // structural diagonal
    for (Index j = 0; j < n; ++j)
        for (int k = 0; k < extra_per_col; ++k)
            t.emplace_back(static_cast<Index>(rng() % m), j, uni(rng));
    return SparseMatrix::from_triplets(m, n, t);
}

// Max deviation of Q^T A W^{-1} from the pivot-scattered [I; 0], probed on
// random vectors.
double probe_identity(const SparseMatrix& A, const Factorization& F, int nprobe,
                      std::mt19937_64& rng) {
    REQUIRE(F.has_q);
    const Index M = A.rows(), N = A.cols();
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < nprobe; ++t) {
        VectorXd z(N);
        for (Index i = 0; i < N; ++i) z(i) = uni(rng);
        const double nz = z.norm();
        VectorXd u = z;
        F.w_solve(u);
        VectorXd y = spmv(A, u);
        F.q_apply_t(y);
        VectorXd expect = VectorXd::Zero(M);
        for (Index j = 0; j < N; ++j) expect(F.pivot_row[j]) = z(j);
        worst = std::max(worst, (y - expect).cwiseAbs().maxCoeff() / nz);
    }
    return worst;
}

// Least-squares solve straight from the factorization: A W^{-1} = Q [I;0]
// up to the pivot scattering, so u = W^{-1} gather(Q^T b).
VectorXd q_solve(const Factorization& F, VectorXd b) {
    F.q_apply_t(b);
    VectorXd z(F.N);
    for (Index j = 0; j < F.N; ++j) z(j) = b(F.pivot_row[j]);
    F.w_solve(z);
    return z;
}

void check_row_accounting(const Factorization& F) {
    std::set<Index> seen;
    for (Index j = 0; j < F.N; ++j) {
        REQUIRE(F.pivot_row[j] >= 0);
        REQUIRE(F.pivot_row[j] < F.M);
        seen.insert(F.pivot_row[j]);
    }
    CHECK(static_cast<Index>(seen.size()) == F.N);  // pivot rows distinct
    for (Index r : F.dropped_rows) CHECK(seen.insert(r).second);
    for (Index r : F.trailing_rows) CHECK(seen.insert(r).second);
    CHECK(static_cast<Index>(seen.size()) == F.M);  // together they cover all rows
}

}  // namespace

TEST_CASE("identity input factors to an identity operator") {
    const Index n = 40;
    std::vector<Eigen::Triplet<double>> t;
    for (Index i = 0; i < n; ++i) t.emplace_back(i, i, 1.0);
    SparseMatrix A = SparseMatrix::from_triplets(n, n, t);
    Setup s(A, nullptr, 1);

    FactorizeOptions opt;
    opt.eps = 0.0;
    Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);
    CHECK(F.dropped_rows.empty());
    CHECK(F.trailing_rows.empty());

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    VectorXd z(n);
    for (Index i = 0; i < n; ++i) z(i) = uni(rng);
    VectorXd w = z;
    F.w_apply(w);
    CHECK((w - z).norm() == 0.0);
    F.w_solve(w);
    CHECK((w - z).norm() == 0.0);
}

TEST_CASE("exact elimination acts as a permuted identity") {
    std::mt19937_64 rng(7);
    FactorizeOptions opt;
    opt.eps = 0.0;
    opt.store_q = true;

    SUBCASE("random instances") {
        for (int trial = 0; trial < 5; ++trial) {
            SparseMatrix A0 = random_full_rank(100, 60, 4, rng);
            Setup s(A0, nullptr, 2);
            Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);
            CHECK(F.dropped_rows.empty());
            CHECK(probe_identity(s.A, F, 20, rng) <= 1e-10);
            check_row_accounting(F);
        }
    }
    SUBCASE("structured instance") {
        InverseProblem p = make_inverse_problem(2, 8, 2.0, 3);
        Setup s(p.A, &p.coords, default_num_levels(p.A.cols()));
        Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);
        CHECK(F.dropped_rows.empty());
        CHECK(probe_identity(s.A, F, 20, rng) <= 1e-10);
    }
}

TEST_CASE("exact factorization reproduces the dense least-squares solution") {
    std::mt19937_64 rng(11);
    FactorizeOptions opt;
    opt.eps = 0.0;
    opt.store_q = true;
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    auto run_case = [&](const SparseMatrix& A0, const MatrixXd* coords, int L) {
        Setup s(A0, coords, L);
        Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);
        VectorXd b(s.A.rows());
        for (Index i = 0; i < b.size(); ++i) b(i) = uni(rng);
        VectorXd u = q_solve(F, b);
        VectorXd oracle = MatrixXd(s.A.dense())
                              .colPivHouseholderQr()
                              .solve(b);
        CHECK((u - oracle).norm() <= 1e-10 * oracle.norm());
    };

    run_case(random_full_rank(150, 90, 4, rng), nullptr, 2);
    InverseProblem p = make_inverse_problem(2, 8, 2.0, 5);
    run_case(p.A, &p.coords, default_num_levels(p.A.cols()));
}

TEST_CASE("transforms round trip in all modes") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    InverseProblem p = make_inverse_problem(2, 16, 2.0, 7);
    Setup s(p.A, &p.coords, default_num_levels(p.A.cols()));

    for (double eps : {0.0, 1e-2}) {
        FactorizeOptions opt;
        opt.eps = eps;
        opt.skip_levels = 1;
        opt.store_q = true;
        Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);

        for (int t = 0; t < 25; ++t) {
            VectorXd z(F.N);
            for (Index i = 0; i < F.N; ++i) z(i) = uni(rng);

            VectorXd w = z;
            F.w_apply(w);
            F.w_solve(w);
            CHECK((w - z).norm() <= 1e-12 * z.norm());

            w = z;
            F.wt_apply(w);
            F.wt_solve(w);
            CHECK((w - z).norm() <= 1e-12 * z.norm());

            w = z;
            F.w_solve(w);
            F.w_apply(w);
            CHECK((w - z).norm() <= 1e-12 * z.norm());

            // adjoint consistency: <W^T a, b> = <a, W b>
            VectorXd a(F.N), b(F.N);
            for (Index i = 0; i < F.N; ++i) {
                a(i) = uni(rng);
                b(i) = uni(rng);
            }
            VectorXd at = a, bw = b;
            F.wt_apply(at);
            F.w_apply(bw);
            CHECK(std::abs(at.dot(b) - a.dot(bw)) <= 1e-12 * a.norm() * b.norm() * 10);

            // Q orthogonality
            VectorXd y(F.M);
            for (Index i = 0; i < F.M; ++i) y(i) = uni(rng);
            VectorXd q = y;
            F.q_apply_t(q);
            F.q_apply(q);
            CHECK((q - y).norm() <= 1e-11 * y.norm());
        }
    }
}

TEST_CASE("row accounting is conserved across configurations") {
    std::mt19937_64 rng(17);
    InverseProblem p = make_inverse_problem(2, 12, 2.0, 9);
    Setup s(p.A, &p.coords, 2);
    for (double eps : {0.0, 1e-2, 1e-1}) {
        for (int skip : {0, 2}) {
            FactorizeOptions opt;
            opt.eps = eps;
            opt.skip_levels = skip;
            Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt);
            check_row_accounting(F);
            CHECK(F.M == s.A.rows());
            CHECK(F.N == s.A.cols());
            if (eps == 0.0) CHECK(F.dropped_rows.empty());
        }
    }
    SUBCASE("random rectangular") {
        for (int trial = 0; trial < 4; ++trial) {
            SparseMatrix A0 = random_full_rank(120, 70, 5, rng);
            Setup s2(A0, nullptr, 2);
            FactorizeOptions opt;
            opt.eps = 1e-2;
            opt.skip_levels = 0;
            check_row_accounting(spaqr_factorize(s2.A, s2.h, s2.owner, opt));
        }
    }
}

TEST_CASE("sparsification compresses the factorization") {
    // Needs enough levels that sparsification runs at several stages before
    // the root; a 24x24 grid gets four.
    InverseProblem p = make_inverse_problem(2, 24, 2.0, 21);
    Setup s(p.A, &p.coords, default_num_levels(p.A.cols()));

    FactorizeOptions exact;
    exact.eps = 0.0;
    Factorization F0 = spaqr_factorize(s.A, s.h, s.owner, exact);

    FactorizeOptions mid;
    mid.eps = 1e-2;
    mid.skip_levels = 1;
    Factorization Fm = spaqr_factorize(s.A, s.h, s.owner, mid);

    FactorizeOptions loose;
    loose.eps = 1e-1;
    loose.skip_levels = 1;
    Factorization F1 = spaqr_factorize(s.A, s.h, s.owner, loose);

    CHECK(!F1.dropped_rows.empty());
    CHECK(F1.nnz_w() < F0.nnz_w());

    auto last_top = [](const Factorization& F) {
        int t = 0;
        for (const auto& st : F.stages)
            if (st.top_cols > 0) t = st.top_cols;
        return t;
    };
    // The root separator shrinks, and shrinks further at looser tolerance.
    CHECK(last_top(F1) < last_top(Fm));
    CHECK(last_top(Fm) < last_top(F0));

    // stage bookkeeping
    REQUIRE(F1.stages.size() == s.h.num_levels + 1u);
    long long prev = 0;
    for (size_t i = 0; i < F1.stages.size(); ++i) {
        const auto& st = F1.stages[i];
        CHECK(st.stage == static_cast<int>(s.h.num_levels + 1 - i));
        CHECK(st.t_eliminate >= 0.0);
        CHECK(st.t_reassign >= 0.0);
        CHECK(st.t_scale >= 0.0);
        CHECK(st.t_sparsify >= 0.0);
        CHECK(st.t_merge >= 0.0);
        CHECK(st.nnz_w >= prev);
        prev = st.nnz_w;
        for (double a : st.front_aspect) CHECK(a > 0.0);
    }
}

namespace {

// Deep-copies the engine state at every phase and checks the structural
// invariants between consecutive snapshots.
struct InvariantObserver : FactorizeObserver {
    const ClusterHierarchy& h;
    Index M;
    bool after_merge_of_last_stage = false;
    std::map<int, Front> prev;
    bool has_prev = false;
    std::vector<std::tuple<std::string, int, int>> phases;
    int violations = 0;

    InvariantObserver(const ClusterHierarchy& h_, Index M_) : h(h_), M(M_) {}

    void on_phase(const char* phase, int stage, int detail, const EngineView& v) override {
        phases.emplace_back(phase, stage, detail);

        // Row conservation at every step.
        Index live = 0;
        for (const auto& [c, f] : *v.fronts) live += static_cast<Index>(f.rows.size());
        if (live + v.pivots + v.dropped + v.trailing != M) ++violations;

        // Couplings stay inside one root-to-leaf path.
        for (const auto& [c, f] : *v.fronts)
            for (const auto& [key, blk] : f.blocks)
                if (key != c && blk.size() > 0 && !h.related(c, key) && !blk.isZero(0.0))
                    ++violations;

        // Elimination must not disturb non-participant fronts.
        if (std::string(phase) == "eliminate" && has_prev) {
            const int c = detail;
            for (const auto& [id, nf] : *v.fronts) {
                auto it = prev.find(id);
                if (it == prev.end()) continue;        // new front (cannot happen mid-stage)
                const Front& of = it->second;
                if (of.blocks.count(c)) continue;      // participant: fill expected
                if (nf.rows.size() < of.rows.size()) ++violations;
                for (size_t i = 0; i < of.rows.size(); ++i)
                    if (nf.rows[i] != of.rows[i]) ++violations;
                const Index onr = static_cast<Index>(of.rows.size());
                for (const auto& [key, blk] : of.blocks) {
                    auto nb = nf.blocks.find(key);
                    if (blk.cols() == 0) continue;
                    if (nb == nf.blocks.end()) {
                        ++violations;
                        continue;
                    }
                    if (nb->second.cols() != blk.cols() ||
                        nb->second.topRows(onr) != blk) ++violations;
                }
                // freshly gained keys only carry reassigned rows
                for (const auto& [key, blk] : nf.blocks)
                    if (!of.blocks.count(key) && blk.cols() > 0 && onr > 0 &&
                        !blk.topRows(onr).isZero(0.0))
                        ++violations;
            }
        }
        prev = *v.fronts;
        has_prev = true;
    }
};

}  // namespace

TEST_CASE("engine invariants hold at every phase") {
    std::mt19937_64 rng(23);
    auto run_with_observer = [&](const SparseMatrix& A0, const MatrixXd* coords, int L,
                                 double eps, int skip) {
        Setup s(A0, coords, L);
        InvariantObserver obs(s.h, s.A.rows());
        FactorizeOptions opt;
        opt.eps = eps;
        opt.skip_levels = skip;
        Factorization F = spaqr_factorize(s.A, s.h, s.owner, opt, &obs);
        CHECK(obs.violations == 0);

        // Phase pattern per stage: eliminations, then scale and the two
        // sparsification passes when enabled, then the merge.
        const int L1 = s.h.num_levels + 1;
        size_t i = 0;
        for (int k = L1; k >= 1; --k) {
            std::vector<int> expect;
            for (const auto& c : s.h.clusters)
                if (c.level == k && c.stage == k) expect.push_back(c.id);
            for (int id : expect) {
                REQUIRE(i < obs.phases.size());
                auto& [ph, st, de] = obs.phases[i++];
                CHECK(ph == "eliminate");
                CHECK(st == k);
                CHECK(de == id);
            }
            if (eps > 0.0 && k >= 2) {
                CHECK(std::get<0>(obs.phases.at(i++)) == "scale");
                if (L1 - k >= skip) {
                    CHECK(std::get<0>(obs.phases.at(i++)) == "sparsify_rows");
                    CHECK(std::get<0>(obs.phases.at(i++)) == "sparsify_cols");
                }
            }
            if (k >= 2) CHECK(std::get<0>(obs.phases.at(i++)) == "merge");
        }
        CHECK(i == obs.phases.size());
        check_row_accounting(F);
    };

    InverseProblem p = make_inverse_problem(2, 12, 2.0, 25);
    run_with_observer(p.A, &p.coords, 2, 1e-2, 0);
    run_with_observer(p.A, &p.coords, 2, 0.0, 0);
    run_with_observer(p.A, &p.coords, 3, 1e-1, 1);
    run_with_observer(random_full_rank(140, 80, 4, rng), nullptr, 2, 1e-2, 0);
}

namespace {

// Run the full pipeline on A with an explicit two-way column partition and
// return the factorization error. The partition is chosen by the caller so
// that the deficient columns land in one leaf cluster deterministically.
template <typename Fn>
void expect_singular(const SparseMatrix& A0, const std::vector<int>& parts, Fn&& verify) {
    SparseMatrix A = A0;
    PatternGraph g = ata_graph(A);
    SeparatorTree tree = import_partition(g, 1, parts);
    ClusterHierarchy h = build_interfaces(tree, g);
    auto perm = order_columns(h);
    A = permute_columns(A, perm);
    RowMatching m = match_rows(A);
    auto owner = assign_rows(A, h, m);
    FactorizeOptions opt;
    opt.eps = 0.0;
    try {
        spaqr_factorize(A, h, owner, opt);
        FAIL("expected SingularFrontError");
    } catch (const SingularFrontError& e) {
        CHECK(e.cluster >= 0);  // context names the offending cluster
        CHECK(std::string(e.what()).find("singular front") != std::string::npos);
        verify(e);
    }
}

}  // namespace

TEST_CASE("rank deficiency raises a singular front error") {
    // Case 1: a cluster coupled by fewer rows than it has columns. Columns 0
    // and 1 live in their own leaf but share a single row.
    {
        std::vector<Eigen::Triplet<double>> t;
        t.emplace_back(0, 0, 1.0);
        t.emplace_back(0, 1, 2.0);
        for (Index j = 2; j < 6; ++j) {
            t.emplace_back(2 * j - 3, j, 3.0);
            t.emplace_back(2 * j - 2, j, 0.5);
        }
        SparseMatrix A = SparseMatrix::from_triplets(9, 6, t);
        expect_singular(A, {0, 0, 1, 1, 1, 1}, [](const SingularFrontError& e) {
            CHECK(e.reason.find("rows couple") != std::string::npos);
        });
    }

    // Case 2: enough rows, but the front stack is exactly rank deficient.
    // Columns 0 and 1 are supported on the same single row, so the second
    // pivot of the leaf QR comes out exactly zero.
    {
        std::vector<Eigen::Triplet<double>> t;
        t.emplace_back(0, 0, 1.5);
        t.emplace_back(0, 1, -2.25);
        t.emplace_back(1, 2, 2.0);
        t.emplace_back(2, 2, 0.5);
        for (Index j = 3; j < 7; ++j) {
            t.emplace_back(2 * j - 3, j, 3.0);
            t.emplace_back(2 * j - 2, j, -0.75);
        }
        SparseMatrix A = SparseMatrix::from_triplets(11, 7, t);
        expect_singular(A, {0, 0, 0, 1, 1, 1, 1}, [](const SingularFrontError& e) {
            CHECK(e.reason.find("pivot") != std::string::npos);
        });
    }
}

TEST_CASE("shape validation") {
    std::mt19937_64 rng(31);
    SparseMatrix A0 = random_full_rank(50, 30, 3, rng);
    Setup s(A0, nullptr, 1);
    FactorizeOptions opt;

    SparseMatrix wide = SparseMatrix::from_triplets(3, 5, {{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0},
                                                           {0, 3, 1.0}, {1, 4, 1.0}});
    CHECK_THROWS_AS(spaqr_factorize(wide, s.h, {0, 0, 0}, opt), std::invalid_argument);

    std::vector<int> short_owner(10, 0);
    CHECK_THROWS_AS(spaqr_factorize(s.A, s.h, short_owner, opt), std::invalid_argument);
}
