#include "spaqr/transforms.h"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace spaqr {

namespace {

template <typename V>
VectorXd gather(const VectorXd& z, const V& idx) {
    VectorXd out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = z(idx[i]);
    return out;
}

template <typename V>
void scatter(VectorXd& z, const V& idx, const VectorXd& vals) {
    for (size_t i = 0; i < idx.size(); ++i) z(idx[i]) = vals(static_cast<Index>(i));
}

}  // namespace

long long Factorization::nnz_w() const {
    long long s = 0;
    for (const auto& f : W) {
        if (const auto* t = std::get_if<TriangularScale>(&f)) {
            const long long c = static_cast<long long>(t->cols.size());
            s += c * (c + 1) / 2 + c * static_cast<long long>(t->coupled.size());
        } else {
            const auto& r = std::get<ColumnRotation>(f);
            const long long m = r.Q.rows(), k = r.Q.count();
            s += k * m - k * (k - 1) / 2 + k;  // packed reflectors + coefficients
        }
    }
    return s;
}

void Factorization::w_apply(VectorXd& z) const {
    for (const auto& f : W) {
        if (const auto* t = std::get_if<TriangularScale>(&f)) {
            VectorXd zs = gather(z, t->cols);
            VectorXd out = t->R.triangularView<Eigen::Upper>() * zs;
            if (!t->coupled.empty()) out.noalias() += t->C * gather(z, t->coupled);
            scatter(z, t->cols, out);
        } else {
            const auto& r = std::get<ColumnRotation>(f);
            MatrixXd zc = gather(z, r.cols);
            apply_reflectors_left_t(r.Q, zc);  // factor is Q^T
            scatter(z, r.cols, zc.col(0));
        }
    }
}

void Factorization::w_solve(VectorXd& z) const {
    for (auto it = W.rbegin(); it != W.rend(); ++it) {
        if (const auto* t = std::get_if<TriangularScale>(&*it)) {
            VectorXd zs = gather(z, t->cols);
            if (!t->coupled.empty()) zs.noalias() -= t->C * gather(z, t->coupled);
            MatrixXd rhs = zs;
            tri_solve_upper(t->R, rhs, Side::Left, false);
            scatter(z, t->cols, rhs.col(0));
        } else {
            const auto& r = std::get<ColumnRotation>(*it);
            MatrixXd zc = gather(z, r.cols);
            apply_reflectors_left(r.Q, zc);  // inverse of Q^T
            scatter(z, r.cols, zc.col(0));
        }
    }
}

void Factorization::wt_apply(VectorXd& z) const {
    for (auto it = W.rbegin(); it != W.rend(); ++it) {
        if (const auto* t = std::get_if<TriangularScale>(&*it)) {
            VectorXd zs = gather(z, t->cols);
            if (!t->coupled.empty()) {
                VectorXd zn = gather(z, t->coupled);
                zn.noalias() += t->C.transpose() * zs;
                scatter(z, t->coupled, zn);
            }
            VectorXd out = t->R.transpose().triangularView<Eigen::Lower>() * zs;
            scatter(z, t->cols, out);
        } else {
            const auto& r = std::get<ColumnRotation>(*it);
            MatrixXd zc = gather(z, r.cols);
            apply_reflectors_left(r.Q, zc);  // (Q^T)^T = Q
            scatter(z, r.cols, zc.col(0));
        }
    }
}

void Factorization::wt_solve(VectorXd& z) const {
    for (const auto& f : W) {
        if (const auto* t = std::get_if<TriangularScale>(&f)) {
            MatrixXd zs = gather(z, t->cols);
            tri_solve_upper(t->R, zs, Side::Left, true);
            scatter(z, t->cols, zs.col(0));
            if (!t->coupled.empty()) {
                VectorXd zn = gather(z, t->coupled);
                zn.noalias() -= t->C.transpose() * zs.col(0);
                scatter(z, t->coupled, zn);
            }
        } else {
            const auto& r = std::get<ColumnRotation>(f);
            MatrixXd zc = gather(z, r.cols);
            apply_reflectors_left_t(r.Q, zc);  // (Q^T)^{-T} = Q^T
            scatter(z, r.cols, zc.col(0));
        }
    }
}

void Factorization::q_apply_t(VectorXd& y) const {
    for (const auto& f : Q) {
        MatrixXd ys = gather(y, f.rows);
        apply_reflectors_left_t(f.H, ys);
        scatter(y, f.rows, ys.col(0));
    }
}

void Factorization::q_apply(VectorXd& y) const {
    for (auto it = Q.rbegin(); it != Q.rend(); ++it) {
        MatrixXd ys = gather(y, it->rows);
        apply_reflectors_left(it->H, ys);
        scatter(y, it->rows, ys.col(0));
    }
}

// ---------------------------------------------------------------------------
// Serialization: little-endian, fixed-width integers, 8-byte IEEE doubles.

namespace {

constexpr char kMagic[8] = {'S', 'P', 'Q', 'R', 'F', 'W', '0', '1'};

void put_i64(std::ostream& o, std::int64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }
std::int64_t get_i64(std::istream& i) {
    std::int64_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) return 0;  // caller checks the stream; keep sizes sane meanwhile
    return v;
}
double get_f64(std::istream& i) {
    double v = 0.0;
    i.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::int64_t get_size(std::istream& i) {
    const std::int64_t n = get_i64(i);
    if (n < 0) throw std::runtime_error("corrupt size field in factorization file");
    return n;
}

void put_ivec(std::ostream& o, const std::vector<Index>& v) {
    put_i64(o, static_cast<std::int64_t>(v.size()));
    for (Index x : v) put_i64(o, x);
}
std::vector<Index> get_ivec(std::istream& i) {
    const std::int64_t n = get_size(i);
    std::vector<Index> v(n);
    for (auto& x : v) x = static_cast<Index>(get_i64(i));
    return v;
}

void put_mat(std::ostream& o, const MatrixXd& m) {
    put_i64(o, m.rows());
    put_i64(o, m.cols());
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) put_f64(o, m(i, j));
}
MatrixXd get_mat(std::istream& i) {
    const std::int64_t r = get_size(i), c = get_size(i);
    MatrixXd m(r, c);
    for (Index j = 0; j < c; ++j)
        for (Index k = 0; k < r; ++k) m(k, j) = get_f64(i);
    return m;
}

void put_vec(std::ostream& o, const VectorXd& v) {
    put_i64(o, v.size());
    for (Index i = 0; i < v.size(); ++i) put_f64(o, v(i));
}
VectorXd get_vec(std::istream& i) {
    const std::int64_t n = get_size(i);
    VectorXd v(n);
    for (Index k = 0; k < n; ++k) v(k) = get_f64(i);
    return v;
}

void put_reflectors(std::ostream& o, const ReflectorSet& h) {
    put_mat(o, h.V);
    put_vec(o, h.tau);
    put_vec(o, h.sign);
}
ReflectorSet get_reflectors(std::istream& i) {
    ReflectorSet h;
    h.V = get_mat(i);
    h.tau = get_vec(i);
    h.sign = get_vec(i);
    return h;
}

}  // namespace

void save_factorization(const Factorization& f, const std::string& path) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw std::runtime_error("cannot open " + path + " for writing");
    o.write(kMagic, 8);
    put_i64(o, f.M);
    put_i64(o, f.N);
    put_f64(o, f.eps);
    put_ivec(o, f.pivot_row);
    put_ivec(o, f.dropped_rows);
    put_ivec(o, f.trailing_rows);
    put_i64(o, static_cast<std::int64_t>(f.W.size()));
    for (const auto& w : f.W) {
        if (const auto* t = std::get_if<TriangularScale>(&w)) {
            put_i64(o, 0);
            put_ivec(o, t->cols);
            put_mat(o, t->R);
            put_ivec(o, t->coupled);
            put_mat(o, t->C);
        } else {
            const auto& r = std::get<ColumnRotation>(w);
            put_i64(o, 1);
            put_ivec(o, r.cols);
            put_reflectors(o, r.Q);
        }
    }
    put_i64(o, f.has_q ? 1 : 0);
    if (f.has_q) {
        put_i64(o, static_cast<std::int64_t>(f.Q.size()));
        for (const auto& q : f.Q) {
            put_ivec(o, q.rows);
            put_reflectors(o, q.H);
        }
    }
    if (!o) throw std::runtime_error("write failed: " + path);
}

Factorization load_factorization(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + ": not a factorization file (bad magic)");
    Factorization f;
    f.M = static_cast<Index>(get_i64(in));
    f.N = static_cast<Index>(get_i64(in));
    f.eps = get_f64(in);
    f.pivot_row = get_ivec(in);
    f.dropped_rows = get_ivec(in);
    f.trailing_rows = get_ivec(in);
    const std::int64_t nw = get_size(in);
    f.W.reserve(nw);
    for (std::int64_t i = 0; i < nw; ++i) {
        const std::int64_t tag = get_i64(in);
        if (tag == 0) {
            TriangularScale t;
            t.cols = get_ivec(in);
            t.R = get_mat(in);
            t.coupled = get_ivec(in);
            t.C = get_mat(in);
            f.W.emplace_back(std::move(t));
        } else if (tag == 1) {
            ColumnRotation r;
            r.cols = get_ivec(in);
            r.Q = get_reflectors(in);
            f.W.emplace_back(std::move(r));
        } else {
            throw std::runtime_error(path + ": unknown factor tag");
        }
    }
    f.has_q = get_i64(in) != 0;
    if (f.has_q) {
        const std::int64_t nq = get_size(in);
        f.Q.reserve(nq);
        for (std::int64_t i = 0; i < nq; ++i) {
            RowReflect q;
            q.rows = get_ivec(in);
            q.H = get_reflectors(in);
            f.Q.push_back(std::move(q));
        }
    }
    if (!in) throw std::runtime_error(path + ": truncated file");
    return f;
}

}  // namespace spaqr
