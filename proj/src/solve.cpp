#include "spaqr/solve.h"

#include <chrono>
#include <cmath>

namespace spaqr {

namespace {

double weighted_norm(const VectorXd& t, const VectorXd* w) {
    if (!w) return t.norm();
    return t.cwiseProduct(*w).norm();
}

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace

SolveReport cgls(const SparseMatrix& A, const Factorization* W, const VectorXd& b,
                 VectorXd& u, const CglsOptions& opt, const VectorXd* weights) {
    const Stopwatch sw;
    SolveReport rep;
    if (W) rep.dropped_rows = static_cast<Index>(W->dropped_rows.size());
    const Index n = A.cols();
    u = VectorXd::Zero(n);

    VectorXd r = b;
    VectorXd t = spmv_t(A, r);
    const double nres0 = weighted_norm(t, weights);
    if (nres0 == 0.0) {
        rep.converged = true;
        rep.residual_history = {0.0};
        rep.t_solve = sw.seconds();
        return rep;
    }
    rep.residual_history.push_back(1.0);

    VectorXd s = t;
    if (W) W->wt_solve(s);
    VectorXd p = s;
    VectorXd y = VectorXd::Zero(n);
    double gamma = s.squaredNorm();

    for (int it = 1; it <= opt.maxit; ++it) {
        VectorXd v = p;
        if (W) W->w_solve(v);
        VectorXd q = spmv(A, v);
        const double qq = q.squaredNorm();
        if (qq == 0.0 || gamma == 0.0) break;  // breakdown
        const double alpha = gamma / qq;
        y += alpha * p;
        r -= alpha * q;
        t = spmv_t(A, r);
        const double rel = weighted_norm(t, weights) / nres0;
        rep.residual_history.push_back(rel);
        rep.iterations = it;
        if (rel <= opt.tol || !std::isfinite(rel)) {
            rep.converged = rel <= opt.tol;
            break;
        }
        s = t;
        if (W) W->wt_solve(s);
        const double gamma_new = s.squaredNorm();
        p = s + (gamma_new / gamma) * p;
        gamma = gamma_new;
    }
    u = y;
    if (W) W->w_solve(u);
    rep.t_solve = sw.seconds();
    return rep;
}

VectorXd csne_solve(const SparseMatrix& A, const Factorization& W, const VectorXd& b,
                    int refine, SolveReport* rep, const VectorXd* weights, double tol) {
    const Stopwatch sw;
    const double nres0 = weighted_norm(spmv_t(A, b), weights);
    VectorXd u = spmv_t(A, b);
    W.wt_solve(u);
    W.w_solve(u);
    auto record = [&]() {
        if (!rep) return;
        if (nres0 == 0.0) {
            rep->residual_history.push_back(0.0);
            return;
        }
        const VectorXd t = spmv_t(A, b - spmv(A, u));
        rep->residual_history.push_back(weighted_norm(t, weights) / nres0);
    };
    record();
    for (int step = 0; step < refine; ++step) {
        VectorXd du = spmv_t(A, b - spmv(A, u));
        W.wt_solve(du);
        W.w_solve(du);
        u += du;
        record();
    }
    if (rep) {
        rep->iterations = refine;
        rep->converged = rep->residual_history.back() <= tol;
        rep->t_solve = sw.seconds();
    }
    return u;
}

}  // namespace spaqr
