#include "spaqr/pipeline.h"

#include <chrono>
#include <numeric>
#include <random>
#include <stdexcept>

namespace spaqr {

namespace {

double now() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

Pipeline::Pipeline(const SparseMatrix& A, const PipelineOptions& opt, const MatrixXd* coords,
                   const std::vector<int>* parts, FactorizeObserver* obs)
    : opt_(opt), Aw_(A) {
    if (Aw_.rows() < Aw_.cols())
        throw std::invalid_argument("matrix must have at least as many rows as columns");
    if (opt_.solver == SolverKind::Direct) opt_.eps = 0.0;
    d_ = scale_columns(Aw_);
    const Index n = Aw_.cols();

    if (opt_.solver == SolverKind::Diag) {
        perm_.resize(n);
        std::iota(perm_.begin(), perm_.end(), 0);
        weights_ = d_;
        return;
    }

    double t0 = now();
    const PatternGraph g = ata_graph(Aw_);
    const int L = opt_.levels > 0 ? opt_.levels : default_num_levels(n);
    if (parts) {
        tree_ = import_partition(g, L, *parts);
    } else {
        if (coords && coords->rows() != n)
            throw std::invalid_argument("coordinate row count does not match column count");
        tree_ = nested_dissection(g, L, coords);
    }
    h_ = build_interfaces(tree_, g);
    perm_ = order_columns(h_);
    Aw_ = permute_columns(Aw_, perm_);
    const RowMatching m = match_rows(Aw_);
    const std::vector<int> owner = assign_rows(Aw_, h_, m);
    t_.t_partition = now() - t0;

    weights_.resize(n);
    for (Index i = 0; i < n; ++i) weights_[i] = d_[perm_[i]];

    t0 = now();
    FactorizeOptions fo;
    fo.eps = opt_.eps;
    fo.skip_levels = opt_.skip_levels;
    fo.store_q = opt_.store_q;
    F_ = spaqr_factorize(Aw_, h_, owner, fo, obs);
    t_.t_factorize = now() - t0;
}

VectorXd Pipeline::unscale(const VectorXd& u) const {
    VectorXd x(Aw_.cols());
    for (Index i = 0; i < Aw_.cols(); ++i) x[perm_[i]] = u[i] / d_[perm_[i]];
    return x;
}

VectorXd Pipeline::solve(const VectorXd& b, SolveReport* rep, double tol, int maxit) const {
    if (b.size() != Aw_.rows()) throw std::invalid_argument("right-hand side length mismatch");
    CglsOptions co;
    co.tol = tol > 0 ? tol : opt_.tol;
    co.maxit = maxit > 0 ? maxit : opt_.maxit;
    VectorXd u;
    SolveReport r = cgls(Aw_, F_ ? &*F_ : nullptr, b, u, co, &weights_);
    if (F_) r.dropped_rows = static_cast<Index>(F_->dropped_rows.size());
    if (rep) *rep = std::move(r);
    return unscale(u);
}

VectorXd Pipeline::solve_direct(const VectorXd& b, SolveReport* rep) const {
    if (!F_) throw std::logic_error("direct solve requires a factorization");
    if (b.size() != Aw_.rows()) throw std::invalid_argument("right-hand side length mismatch");
    SolveReport r;
    VectorXd u = csne_solve(Aw_, *F_, b, opt_.refine, rep ? &r : nullptr, &weights_, opt_.tol);
    if (rep) {
        r.dropped_rows = static_cast<Index>(F_->dropped_rows.size());
        *rep = std::move(r);
    }
    return unscale(u);
}

RhsSample make_rhs(const SparseMatrix& A, const Pipeline& p, unsigned long seed, double eta) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    RhsSample s;
    s.x_star.resize(A.cols());
    for (Index i = 0; i < A.cols(); ++i) s.x_star[i] = uni(rng);
    s.b = spmv(A, s.x_star);
    if (eta <= 0.0 || A.rows() == A.cols()) return s;

    VectorXd g(A.rows());
    for (Index i = 0; i < A.rows(); ++i) g[i] = uni(rng);
    VectorXd xg = p.solve(g, nullptr, 1e-10, 300);
    VectorXd noise = g - spmv(A, xg);
    const double nn = noise.norm();
    if (nn > 1e-12 * g.norm()) s.b += (eta * s.b.norm() / nn) * noise;
    return s;
}

}  // namespace spaqr
