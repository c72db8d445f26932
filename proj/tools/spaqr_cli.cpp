#include <cmath>
#include <cstdio>
#include <memory>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spaqr/pipeline.h"
#include "spaqr/problems.h"
#include "spaqr/profile.h"

namespace fs = std::filesystem;
using namespace spaqr;

namespace {

struct ProblemFlags {
    std::string problem = "invpoi2d";
    int n = 32;
    double alpha = 2.0;
    std::uint64_t seed = 0;
};

int problem_dim(const std::string& name) {
    if (name == "invpoi2d") return 2;
    if (name == "invpoi3d") return 3;
    throw CLI::ValidationError("--problem", "unknown problem '" + name + "'");
}

struct SolveFlags {
    std::string matrix, coords, parts, rhs = "random", profile;
    double eps = 1e-2, tol = 1e-12;
    int levels = 0, skip = 3, maxit = 500, refine = 1;
    std::string solver = "spaqr";
    bool store_q = false;
    std::uint64_t seed = 0;
};

SolverKind solver_kind(const std::string& s) {
    if (s == "spaqr") return SolverKind::Spaqr;
    if (s == "direct") return SolverKind::Direct;
    if (s == "diag") return SolverKind::Diag;
    throw CLI::ValidationError("--solver", "unknown solver '" + s + "'");
}

PipelineOptions to_options(const SolveFlags& f) {
    PipelineOptions o;
    o.eps = f.eps;
    o.levels = f.levels;
    o.skip_levels = f.skip;
    o.store_q = f.store_q;
    o.solver = solver_kind(f.solver);
    o.tol = f.tol;
    o.maxit = f.maxit;
    o.refine = f.refine;
    return o;
}

// Build/solve once; shared by `solve` and each `bench` sweep point.
struct RunResult {
    std::unique_ptr<Pipeline> pipeline;
    SolveReport rep;
    double err_x = -1.0;  // relative error vs x* when the rhs was generated
    std::string profile_json;
};

RunResult run_pipeline(const SparseMatrix& A, const PipelineOptions& opt, const MatrixXd* coords,
                       const std::vector<int>* parts, const std::string& rhs_spec,
                       std::uint64_t seed, bool want_profile) {
    RunResult out;
    out.pipeline = std::make_unique<Pipeline>(A, opt, coords, parts);
    Pipeline& p = *out.pipeline;

    VectorXd b;
    std::optional<VectorXd> x_star;
    if (rhs_spec == "random") {
        RhsSample s = make_rhs(A, p, seed);
        b = std::move(s.b);
        x_star = std::move(s.x_star);
    } else {
        b = read_vector(rhs_spec);
        if (b.size() != A.rows())
            throw std::invalid_argument("rhs length " + std::to_string(b.size()) +
                                        " does not match " + std::to_string(A.rows()) + " rows");
    }

    VectorXd x = p.solve(b, &out.rep);
    if (x_star) out.err_x = (x - *x_star).norm() / x_star->norm();
    if (want_profile) out.profile_json = make_profile(p, &out.rep);
    return out;
}

int cmd_generate(const ProblemFlags& f, const std::string& out_dir) {
    const InverseProblem p = make_inverse_problem(problem_dim(f.problem), f.n, f.alpha, f.seed);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_matrix_market(p.A, (dir / "matrix.mtx").string());
    write_coords(p.coords, (dir / "coords.txt").string());
    std::printf("problem %s n=%d seed=%llu: %d x %d, nnz=%d, alpha=%.4f (target %.4f)\n",
                f.problem.c_str(), f.n, static_cast<unsigned long long>(f.seed), p.A.rows(),
                p.A.cols(), p.A.nnz(), p.alpha, f.alpha);
    std::printf("wrote %s and %s\n", (dir / "matrix.mtx").c_str(), (dir / "coords.txt").c_str());
    return 0;
}

int cmd_solve(const SolveFlags& f) {
    const SparseMatrix A = read_matrix_market(f.matrix);
    std::optional<MatrixXd> coords;
    if (!f.coords.empty()) coords = read_coords(f.coords);
    std::optional<std::vector<int>> parts;
    if (!f.parts.empty()) parts = read_parts(f.parts);

    const RunResult r =
        run_pipeline(A, to_options(f), coords ? &*coords : nullptr, parts ? &*parts : nullptr,
                     f.rhs, f.seed, !f.profile.empty());
    const Pipeline* p = r.pipeline.get();

    if (!f.profile.empty()) {
        if (f.profile == "-") {
            std::fputs(r.profile_json.c_str(), stdout);
        } else {
            std::ofstream out(f.profile);
            if (!out) throw std::runtime_error("cannot write profile file " + f.profile);
            out << r.profile_json;
        }
    }
    std::printf("matrix: %d x %d, nnz=%d\n", A.rows(), A.cols(), A.nnz());
    std::printf("partition: %.3fs  factorize: %.3fs  solve: %.3fs  nnz(W)=%lld\n",
                p->timings().t_partition, p->timings().t_factorize, r.rep.t_solve,
                p->factorization() ? p->factorization()->nnz_w() : 0LL);
    std::printf("iterations: %d  residual: %.3e  converged: %s\n", r.rep.iterations,
                r.rep.residual_history.back(), r.rep.converged ? "yes" : "no");
    if (r.err_x >= 0) std::printf("error vs known solution: %.3e\n", r.err_x);
    if (r.rep.dropped_rows > 0) std::printf("dropped rows: %d\n", r.rep.dropped_rows);
    return r.rep.converged ? 0 : 2;
}

double fit_exponent(const std::vector<double>& n, const std::vector<double>& y) {
    // slope of log y against log n by least squares
    const size_t k = n.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < k; ++i) {
        const double lx = std::log(n[i]), ly = std::log(std::max(y[i], 1e-300));
        sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
    }
    return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

int cmd_bench(const ProblemFlags& f, const std::vector<int>& n_list, double eps,
              const std::string& out_file) {
    std::ostringstream csv;
    csv << "dim,n,N,M,nnz,alpha,eps,levels,t_partition,t_factorize,t_solve,iterations,"
           "converged,nnz_w,top_cols\n";
    std::vector<double> Ns, t_fact, mem_w, top_cols;
    const int dim = problem_dim(f.problem);
    for (int n : n_list) {
        const InverseProblem prob = make_inverse_problem(dim, n, f.alpha, f.seed);
        SolveFlags sf;
        sf.eps = eps;
        sf.seed = f.seed;
        const RunResult r = run_pipeline(prob.A, to_options(sf), &prob.coords, nullptr,
                                         "random", f.seed, false);
        const Pipeline* p = r.pipeline.get();
        const Factorization* F = p->factorization();
        // Width of the root separator when it is about to be eliminated: the
        // last snapshot that still has it (stage 2; stage 1 snapshots after
        // its elimination).
        int top = 0;
        for (const StageStats& st : F->stages)
            if (st.top_cols > 0) top = st.top_cols;
        csv << dim << ',' << n << ',' << prob.A.cols() << ',' << prob.A.rows() << ','
            << prob.A.nnz() << ',' << prob.alpha << ',' << eps << ','
            << p->hierarchy().num_levels << ',' << p->timings().t_partition << ','
            << p->timings().t_factorize << ',' << r.rep.t_solve << ',' << r.rep.iterations << ','
            << (r.rep.converged ? 1 : 0) << ',' << F->nnz_w() << ',' << top << '\n';
        Ns.push_back(static_cast<double>(prob.A.cols()));
        t_fact.push_back(p->timings().t_factorize);
        mem_w.push_back(static_cast<double>(F->nnz_w()));
        top_cols.push_back(static_cast<double>(std::max(top, 1)));
        std::fprintf(stderr, "bench %s n=%d: %d iters, factorize %.3fs\n", f.problem.c_str(), n,
                     r.rep.iterations, p->timings().t_factorize);
    }
    if (Ns.size() >= 2) {
        csv << "# exponent t_factorize " << fit_exponent(Ns, t_fact) << '\n';
        csv << "# exponent nnz_w " << fit_exponent(Ns, mem_w) << '\n';
        csv << "# exponent top_cols " << fit_exponent(Ns, top_cols) << '\n';
    }
    if (out_file.empty() || out_file == "-") {
        std::fputs(csv.str().c_str(), stdout);
    } else {
        std::ofstream out(out_file);
        if (!out) throw std::runtime_error("cannot write " + out_file);
        out << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spaqr: hierarchical sparsified-QR least-squares solver"};
    app.require_subcommand(1);

    ProblemFlags gen;
    std::string out_dir = ".";
    CLI::App* cgen = app.add_subcommand("generate", "generate an inverse Poisson test problem");
    cgen->add_option("--problem", gen.problem, "invpoi2d or invpoi3d")
        ->check(CLI::IsMember({"invpoi2d", "invpoi3d"}));
    cgen->add_option("-n", gen.n, "grid points per side")->required();
    cgen->add_option("--alpha", gen.alpha, "target aspect ratio M/N");
    cgen->add_option("--seed", gen.seed, "random seed");
    cgen->add_option("--out", out_dir, "output directory");

    SolveFlags sf;
    CLI::App* csolve = app.add_subcommand("solve", "factorize and solve min ||Ax-b||");
    csolve->add_option("--matrix", sf.matrix, "Matrix Market file")->required();
    csolve->add_option("--coords", sf.coords, "coordinate file (geometric partitioning)");
    csolve->add_option("--parts", sf.parts, "partition file (column -> leaf id)");
    csolve->add_option("--eps", sf.eps, "sparsification tolerance");
    csolve->add_option("--levels", sf.levels, "separator levels (0 = auto)");
    csolve->add_option("--skip", sf.skip, "leaf stages before sparsification");
    csolve->add_option("--solver", sf.solver, "spaqr, direct, or diag")
        ->check(CLI::IsMember({"spaqr", "direct", "diag"}));
    csolve->add_option("--tol", sf.tol, "convergence tolerance on ||A'r||/||A'b||");
    csolve->add_option("--maxit", sf.maxit, "iteration cap");
    csolve->add_option("--rhs", sf.rhs, "'random' or a vector file");
    csolve->add_flag("--store-q", sf.store_q, "keep the orthogonal row factors");
    csolve->add_option("--profile", sf.profile, "write a JSON run profile ('-' = stdout)");
    csolve->add_option("--seed", sf.seed, "seed for the random rhs");

    ProblemFlags bf;
    std::vector<int> n_list;
    double bench_eps = 1e-2;
    std::string bench_out;
    CLI::App* cbench = app.add_subcommand("bench", "sweep n and report scaling exponents");
    cbench->add_option("--problem", bf.problem, "invpoi2d or invpoi3d")
        ->check(CLI::IsMember({"invpoi2d", "invpoi3d"}));
    cbench->add_option("--n-list", n_list, "grid sizes to sweep")->required()->delimiter(',');
    cbench->add_option("--alpha", bf.alpha, "target aspect ratio");
    cbench->add_option("--eps", bench_eps, "sparsification tolerance");
    cbench->add_option("--seed", bf.seed, "generator seed");
    cbench->add_option("--out", bench_out, "CSV output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (cgen->parsed()) return cmd_generate(gen, out_dir);
        if (csolve->parsed()) return cmd_solve(sf);
        if (cbench->parsed()) return cmd_bench(bf, n_list, bench_eps, bench_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
