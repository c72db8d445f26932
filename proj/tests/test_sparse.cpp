#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "spaqr/sparse.h"

using namespace spaqr;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("spaqr_sparse_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir / name;
}

SparseMatrix random_sparse(Index m, Index n, double density, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<Eigen::Triplet<double>> t;
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < m; ++i)
            if (coin(rng) < density) t.emplace_back(i, j, uni(rng));
    return SparseMatrix::from_triplets(m, n, t);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST_CASE("triplet construction canonicalizes") {
    std::vector<Eigen::Triplet<double>> t{{2, 0, 1.0}, {0, 0, 3.0}, {2, 0, -1.0}, {1, 1, 0.0}};
    SparseMatrix A = SparseMatrix::from_triplets(3, 2, t);
    CHECK(A.rows() == 3);
    CHECK(A.cols() == 2);
    CHECK(A.nnz() == 1);  // duplicates summed to zero are pruned, stored zero pruned
    CHECK(A.dense()(0, 0) == 3.0);
}

TEST_CASE("matrix market round trip is exact") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        SparseMatrix A = random_sparse(50, 30, 0.1, rng);
        const auto p = temp_file("rt" + std::to_string(trial) + ".mtx");
        write_matrix_market(A, p.string());
        SparseMatrix B = read_matrix_market(p.string());
        REQUIRE(B.rows() == A.rows());
        REQUIRE(B.cols() == A.cols());
        REQUIRE(B.nnz() == A.nnz());
        CHECK((A.dense() - B.dense()).norm() == 0.0);  // bit-exact values
    }
}

TEST_CASE("matrix market parses the exchange format") {
    SUBCASE("general coordinate") {
        const auto p = temp_file("gen.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real general\n"
                   "% comment line\n"
                   "2 1 2\n"
                   "1 1 2.0\n"
                   "2 1 -1.0\n");
        SparseMatrix A = read_matrix_market(p.string());
        CHECK(A.rows() == 2);
        CHECK(A.cols() == 1);
        CHECK(A.nnz() == 2);
        CHECK(A.dense()(0, 0) == 2.0);
        CHECK(A.dense()(1, 0) == -1.0);
    }
    SUBCASE("symmetric expansion") {
        const auto p = temp_file("sym.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real symmetric\n"
                   "2 2 2\n"
                   "1 1 5.0\n"
                   "2 1 3.0\n");
        SparseMatrix A = read_matrix_market(p.string());
        CHECK(A.nnz() == 3);  // diagonal not duplicated
        CHECK(A.dense()(0, 1) == 3.0);
        CHECK(A.dense()(1, 0) == 3.0);
    }
    SUBCASE("duplicates summed") {
        const auto p = temp_file("dup.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real general\n"
                   "2 2 2\n"
                   "1 1 1.5\n"
                   "1 1 2.5\n");
        SparseMatrix A = read_matrix_market(p.string());
        CHECK(A.nnz() == 1);
        CHECK(A.dense()(0, 0) == 4.0);
    }
}

TEST_CASE("matrix market errors carry line numbers") {
    SUBCASE("bad banner") {
        const auto p = temp_file("bad1.mtx");
        write_text(p, "%%MatrixMarket matrix array real general\n1 1\n5.0\n");
        try {
            read_matrix_market(p.string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 1);
        }
    }
    SUBCASE("complex field rejected") {
        const auto p = temp_file("bad2.mtx");
        write_text(p, "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n");
        CHECK_THROWS_AS(read_matrix_market(p.string()), ParseError);
    }
    SUBCASE("out of range index") {
        const auto p = temp_file("bad3.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real general\n"
                   "2 2 1\n"
                   "3 1 1.0\n");
        try {
            read_matrix_market(p.string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 3);
        }
    }
    SUBCASE("truncated entry list") {
        const auto p = temp_file("bad4.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real general\n"
                   "2 2 2\n"
                   "1 1 1.0\n");
        CHECK_THROWS_AS(read_matrix_market(p.string()), ParseError);
    }
    SUBCASE("malformed entry") {
        const auto p = temp_file("bad5.mtx");
        write_text(p,
                   "%%MatrixMarket matrix coordinate real general\n"
                   "2 2 1\n"
                   "1 x 1.0\n");
        try {
            read_matrix_market(p.string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 3);
        }
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_matrix_market(temp_file("nope.mtx").string()), ParseError);
    }
}

TEST_CASE("vector files round trip") {
    VectorXd v(4);
    v << 1.0, -2.5, 1e-17, 3.25;
    const auto p = temp_file("vec.txt");
    write_vector(v, p.string());
    VectorXd w = read_vector(p.string());
    REQUIRE(w.size() == 4);
    CHECK((v - w).norm() == 0.0);
}

TEST_CASE("scale_columns normalizes and reports norms") {
    SUBCASE("three-four-five") {
        std::vector<Eigen::Triplet<double>> t{{0, 0, 3.0}, {1, 0, 4.0}};
        SparseMatrix A = SparseMatrix::from_triplets(2, 1, t);
        VectorXd d = scale_columns(A);
        CHECK(d[0] == doctest::Approx(5.0).epsilon(1e-15));
        CHECK(A.dense()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(A.dense()(1, 0) == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("unit columns unchanged") {
        SparseMatrix A = SparseMatrix::from_triplets(
            2, 2, {{0, 0, 1.0}, {1, 1, 1.0}});
        MatrixXd before = A.dense();
        VectorXd d = scale_columns(A);
        CHECK(d[0] == 1.0);
        CHECK(d[1] == 1.0);
        CHECK((A.dense() - before).norm() == 0.0);
    }
    SUBCASE("random columns end up unit") {
        std::mt19937_64 rng(5);
        SparseMatrix A = random_sparse(20, 10, 0.4, rng);
        scale_columns(A);
        for (Index j = 0; j < 10; ++j)
            CHECK(A.dense().col(j).norm() == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("zero column rejected by index") {
        SparseMatrix A = SparseMatrix::from_triplets(2, 3, {{0, 0, 1.0}, {1, 2, 1.0}});
        try {
            scale_columns(A);
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find('1') != std::string::npos);
        }
    }
}

TEST_CASE("diag preconditioner weights") {
    SparseMatrix A = SparseMatrix::from_triplets(2, 3, {{0, 0, 3.0}, {1, 0, 4.0}, {0, 1, 1.0}});
    VectorXd w = diag_preconditioner(A);
    CHECK(w[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(w[1] == 1.0);
    CHECK(w[2] == 0.0);  // zero column flagged as zero weight
}

TEST_CASE("spmv agrees with the dense oracle") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        SparseMatrix A = random_sparse(40, 25, 0.15, rng);
        VectorXd x(25), y(40);
        for (Index i = 0; i < 25; ++i) x[i] = uni(rng);
        for (Index i = 0; i < 40; ++i) y[i] = uni(rng);
        const MatrixXd D = A.dense();
        CHECK((spmv(A, x) - D * x).cwiseAbs().maxCoeff() <= 1e-13);
        CHECK((spmv_t(A, y) - D.transpose() * y).cwiseAbs().maxCoeff() <= 1e-13);
    }
    SparseMatrix I3 = SparseMatrix::from_triplets(3, 3, {{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}});
    VectorXd x(3);
    x << 1, 2, 3;
    CHECK((spmv(I3, x) - x).norm() == 0.0);
}

TEST_CASE("ata graph equals the dense pattern oracle") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 25; ++trial) {
        const Index n = 2 + static_cast<Index>(rng() % 40);
        const Index m = n + static_cast<Index>(rng() % 40);
        SparseMatrix A = random_sparse(m, n, 0.08, rng);
        PatternGraph g = ata_graph(A);
        REQUIRE(g.n == n);

        const MatrixXd D = A.dense();
        const MatrixXd AtA = D.transpose() * D;
        // Pattern oracle: structural nonzero iff some row hits both columns.
        for (Index i = 0; i < n; ++i) {
            std::set<Index> adj(g.adj[i].begin(), g.adj[i].end());
            CHECK(adj.count(i) == 0);  // no self loops
            for (Index j = 0; j < n; ++j) {
                if (i == j) continue;
                bool structural = false;
                for (Index r = 0; r < m; ++r)
                    if (D(r, i) != 0.0 && D(r, j) != 0.0) structural = true;
                CHECK(adj.count(j) == (structural ? 1u : 0u));
            }
        }
        // Symmetry
        for (Index i = 0; i < n; ++i)
            for (Index j : g.adj[i])
                CHECK(std::count(g.adj[j].begin(), g.adj[j].end(), i) == 1);
        (void)AtA;
    }
}

TEST_CASE("column permutation gathers") {
    SparseMatrix A = SparseMatrix::from_triplets(2, 3, {{0, 0, 1.0}, {1, 1, 2.0}, {0, 2, 3.0}});
    std::vector<Index> perm{2, 0, 1};  // new col j = old col perm[j]
    SparseMatrix B = permute_columns(A, perm);
    CHECK(B.dense()(0, 0) == 3.0);
    CHECK(B.dense()(0, 1) == 1.0);
    CHECK(B.dense()(1, 2) == 2.0);
}
