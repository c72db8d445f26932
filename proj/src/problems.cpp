#include "spaqr/problems.h"

#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace spaqr {

namespace {

// Field indexing helpers. u lives on the n^d nodes, z on the (n+1)^d cells;
// cell (p,q[,r]) touches nodes (p-1..p) x (q-1..q) [x (r-1..r)].
struct Grid {
    int dim, n;
    Index nodes() const { return dim == 2 ? n * n : n * n * n; }
    Index cells() const {
        const Index m = n + 1;
        return dim == 2 ? m * m : m * m * m;
    }
    Index node(int i, int j, int k = 0) const {
        return dim == 2 ? i * n + j : (i * n + j) * n + k;
    }
    Index cell(int p, int q, int r = 0) const {
        const Index m = n + 1;
        return dim == 2 ? p * m + q : (p * m + q) * m + r;
    }
    bool in(int i) const { return i >= 0 && i < n; }
};

struct Fields {
    Grid g;
    VectorXd u, z;
    double U(int i, int j, int k = 0) const {  // zero outside the grid
        if (!g.in(i) || !g.in(j) || (g.dim == 3 && !g.in(k))) return 0.0;
        return u(g.node(i, j, k));
    }
};

Fields random_fields(const Grid& g, std::uint64_t seed, int region_side) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> du(-1.0, 1.0), dz(0.5, 1.5);
    Fields f{g, VectorXd(g.nodes()), VectorXd(g.cells())};
    for (Index i = 0; i < g.nodes(); ++i) f.u(i) = du(rng);
    for (Index i = 0; i < g.cells(); ++i) f.z(i) = dz(rng);

    // Constant centered patch: u = 1 on region nodes, z = 1 on cells fully inside.
    const int s = region_side;
    const int c0 = (g.n - s) / 2;
    auto in_nodes = [&](int a) { return a >= c0 && a < c0 + s; };
    auto in_cells = [&](int a) { return a >= c0 + 1 && a <= c0 + s - 1; };
    if (s > 0) {
        if (g.dim == 2) {
            for (int i = 0; i < g.n; ++i)
                for (int j = 0; j < g.n; ++j)
                    if (in_nodes(i) && in_nodes(j)) f.u(g.node(i, j)) = 1.0;
            for (int p = 0; p <= g.n; ++p)
                for (int q = 0; q <= g.n; ++q)
                    if (in_cells(p) && in_cells(q)) f.z(g.cell(p, q)) = 1.0;
        } else {
            for (int i = 0; i < g.n; ++i)
                for (int j = 0; j < g.n; ++j)
                    for (int k = 0; k < g.n; ++k)
                        if (in_nodes(i) && in_nodes(j) && in_nodes(k)) f.u(g.node(i, j, k)) = 1.0;
            for (int p = 0; p <= g.n; ++p)
                for (int q = 0; q <= g.n; ++q)
                    for (int r = 0; r <= g.n; ++r)
                        if (in_cells(p) && in_cells(q) && in_cells(r)) f.z(g.cell(p, q, r)) = 1.0;
        }
    }
    return f;
}

// z-partials of the residual at a node. For cell (p,q[,r]) in the 2^d cells
// around node (i,j[,k]): the derivative couples the node value with the
// neighbor toward the cell along each axis.
double dz_entry_2d(const Fields& f, int i, int j, int p, int q) {
    const int dx = (p == i + 1) ? 1 : -1;
    const int dy = (q == j + 1) ? 1 : -1;
    return -f.U(i, j) + 0.5 * f.U(i + dx, j) + 0.5 * f.U(i, j + dy);
}

double dz_entry_3d(const Fields& f, int i, int j, int k, int p, int q, int r) {
    const int dx = (p == i + 1) ? 1 : -1;
    const int dy = (q == j + 1) ? 1 : -1;
    const int dz = (r == k + 1) ? 1 : -1;
    return -0.75 * f.U(i, j, k) + 0.25 * f.U(i + dx, j, k) + 0.25 * f.U(i, j + dy, k) +
           0.25 * f.U(i, j, k + dz);
}

// Residual of one equation, written from the stencil coefficients (the matrix
// entries come from the derivative formulas above; the finite-difference test
// cross-checks the two).
double residual_2d(const Fields& f, int i, int j) {
    const auto& z = f.z;
    const Grid& g = f.g;
    const double a0 = z(g.cell(i, j)) + z(g.cell(i + 1, j)) + z(g.cell(i, j + 1)) +
                      z(g.cell(i + 1, j + 1));
    const double a1 = 0.5 * (z(g.cell(i + 1, j)) + z(g.cell(i + 1, j + 1)));
    const double a2 = 0.5 * (z(g.cell(i, j + 1)) + z(g.cell(i + 1, j + 1)));
    const double a3 = 0.5 * (z(g.cell(i, j)) + z(g.cell(i, j + 1)));
    const double a4 = 0.5 * (z(g.cell(i, j)) + z(g.cell(i + 1, j)));
    return -a0 * f.U(i, j) + a1 * f.U(i + 1, j) + a2 * f.U(i, j + 1) + a3 * f.U(i - 1, j) +
           a4 * f.U(i, j - 1);
}

double residual_3d(const Fields& f, int i, int j, int k) {
    const auto& z = f.z;
    const Grid& g = f.g;
    double a0 = 0.0;
    for (int p = i; p <= i + 1; ++p)
        for (int q = j; q <= j + 1; ++q)
            for (int r = k; r <= k + 1; ++r) a0 += z(g.cell(p, q, r));
    a0 *= 0.75;
    auto face_x = [&](int p) {
        double s = 0.0;
        for (int q = j; q <= j + 1; ++q)
            for (int r = k; r <= k + 1; ++r) s += z(g.cell(p, q, r));
        return 0.25 * s;
    };
    auto face_y = [&](int q) {
        double s = 0.0;
        for (int p = i; p <= i + 1; ++p)
            for (int r = k; r <= k + 1; ++r) s += z(g.cell(p, q, r));
        return 0.25 * s;
    };
    auto face_z = [&](int r) {
        double s = 0.0;
        for (int p = i; p <= i + 1; ++p)
            for (int q = j; q <= j + 1; ++q) s += z(g.cell(p, q, r));
        return 0.25 * s;
    };
    return -a0 * f.U(i, j, k) + face_x(i + 1) * f.U(i + 1, j, k) + face_y(j + 1) * f.U(i, j + 1, k) +
           face_z(k + 1) * f.U(i, j, k + 1) + face_x(i) * f.U(i - 1, j, k) +
           face_y(j) * f.U(i, j - 1, k) + face_z(k) * f.U(i, j, k - 1);
}

// u-partials are the stencil coefficients themselves.
void u_entries_2d(const Fields& f, int i, int j,
                  std::vector<std::pair<Index, double>>& out) {
    const auto& z = f.z;
    const Grid& g = f.g;
    const double a0 = z(g.cell(i, j)) + z(g.cell(i + 1, j)) + z(g.cell(i, j + 1)) +
                      z(g.cell(i + 1, j + 1));
    out.emplace_back(g.node(i, j), -a0);
    if (g.in(i + 1)) out.emplace_back(g.node(i + 1, j), 0.5 * (z(g.cell(i + 1, j)) + z(g.cell(i + 1, j + 1))));
    if (g.in(j + 1)) out.emplace_back(g.node(i, j + 1), 0.5 * (z(g.cell(i, j + 1)) + z(g.cell(i + 1, j + 1))));
    if (g.in(i - 1)) out.emplace_back(g.node(i - 1, j), 0.5 * (z(g.cell(i, j)) + z(g.cell(i, j + 1))));
    if (g.in(j - 1)) out.emplace_back(g.node(i, j - 1), 0.5 * (z(g.cell(i, j)) + z(g.cell(i + 1, j))));
}

void u_entries_3d(const Fields& f, int i, int j, int k,
                  std::vector<std::pair<Index, double>>& out) {
    const auto& z = f.z;
    const Grid& g = f.g;
    double a0 = 0.0;
    for (int p = i; p <= i + 1; ++p)
        for (int q = j; q <= j + 1; ++q)
            for (int r = k; r <= k + 1; ++r) a0 += z(g.cell(p, q, r));
    out.emplace_back(g.node(i, j, k), -0.75 * a0);
    auto face = [&](int axis, int side) {
        double s = 0.0;
        if (axis == 0)
            for (int q = j; q <= j + 1; ++q)
                for (int r = k; r <= k + 1; ++r) s += z(g.cell(side, q, r));
        else if (axis == 1)
            for (int p = i; p <= i + 1; ++p)
                for (int r = k; r <= k + 1; ++r) s += z(g.cell(p, side, r));
        else
            for (int p = i; p <= i + 1; ++p)
                for (int q = j; q <= j + 1; ++q) s += z(g.cell(p, q, side));
        return 0.25 * s;
    };
    if (g.in(i + 1)) out.emplace_back(g.node(i + 1, j, k), face(0, i + 1));
    if (g.in(j + 1)) out.emplace_back(g.node(i, j + 1, k), face(1, j + 1));
    if (g.in(k + 1)) out.emplace_back(g.node(i, j, k + 1), face(2, k + 1));
    if (g.in(i - 1)) out.emplace_back(g.node(i - 1, j, k), face(0, i));
    if (g.in(j - 1)) out.emplace_back(g.node(i, j - 1, k), face(1, j));
    if (g.in(k - 1)) out.emplace_back(g.node(i, j, k - 1), face(2, k));
}

// Count the rows the assembled Jacobian would keep for a given region side.
Index kept_rows(const Grid& g, const Fields& f) {
    Index kept = g.nodes();  // u rows always survive (diagonal -a0 < 0)
    if (g.dim == 2) {
        for (int p = 0; p <= g.n; ++p)
            for (int q = 0; q <= g.n; ++q) {
                bool nz = false;
                for (int i = p - 1; i <= p && !nz; ++i)
                    for (int j = q - 1; j <= q && !nz; ++j)
                        if (g.in(i) && g.in(j) && dz_entry_2d(f, i, j, p, q) != 0.0) nz = true;
                if (nz) ++kept;
            }
    } else {
        for (int p = 0; p <= g.n; ++p)
            for (int q = 0; q <= g.n; ++q)
                for (int r = 0; r <= g.n; ++r) {
                    bool nz = false;
                    for (int i = p - 1; i <= p && !nz; ++i)
                        for (int j = q - 1; j <= q && !nz; ++j)
                            for (int k = r - 1; k <= r && !nz; ++k)
                                if (g.in(i) && g.in(j) && g.in(k) &&
                                    dz_entry_3d(f, i, j, k, p, q, r) != 0.0)
                                    nz = true;
                    if (nz) ++kept;
                }
    }
    return kept;
}

InverseProblem assemble(const Grid& g, const Fields& f, int region_side) {
    InverseProblem P;
    P.dim = g.dim;
    P.n = g.n;
    P.region_side = region_side;
    P.u = f.u;
    P.z = f.z;

    const Index N = g.nodes();
    const Index nvars = g.nodes() + g.cells();
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<char> row_used(nvars, 0);
    std::vector<std::pair<Index, double>> ue;
    P.coords = MatrixXd(N, g.dim);

    auto emit = [&](Index var, Index eq, double v) {
        if (v == 0.0) return;
        trip.emplace_back(var, eq, v);
        row_used[var] = 1;
    };

    if (g.dim == 2) {
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) {
                const Index eq = g.node(i, j);
                P.coords(eq, 0) = i;
                P.coords(eq, 1) = j;
                ue.clear();
                u_entries_2d(f, i, j, ue);
                for (auto& [var, v] : ue) emit(var, eq, v);
                for (int p = i; p <= i + 1; ++p)
                    for (int q = j; q <= j + 1; ++q)
                        emit(N + g.cell(p, q), eq, dz_entry_2d(f, i, j, p, q));
            }
    } else {
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j)
                for (int k = 0; k < g.n; ++k) {
                    const Index eq = g.node(i, j, k);
                    P.coords(eq, 0) = i;
                    P.coords(eq, 1) = j;
                    P.coords(eq, 2) = k;
                    ue.clear();
                    u_entries_3d(f, i, j, k, ue);
                    for (auto& [var, v] : ue) emit(var, eq, v);
                    for (int p = i; p <= i + 1; ++p)
                        for (int q = j; q <= j + 1; ++q)
                            for (int r = k; r <= k + 1; ++r)
                                emit(N + g.cell(p, q, r), eq, dz_entry_3d(f, i, j, k, p, q, r));
                }
    }

    // Compact away the vanished z rows (u rows all survive).
    P.row_of_var.assign(nvars, -1);
    for (Index v = 0; v < nvars; ++v)
        if (row_used[v]) {
            P.row_of_var[v] = static_cast<Index>(P.var_of_row.size());
            P.var_of_row.push_back(v);
        }
    for (auto& t : trip)
        t = Eigen::Triplet<double>(P.row_of_var[t.row()], t.col(), t.value());
    const Index M = static_cast<Index>(P.var_of_row.size());
    P.A = SparseMatrix::from_triplets(M, N, trip);
    P.alpha = static_cast<double>(M) / static_cast<double>(N);
    return P;
}

}  // namespace

InverseProblem make_inverse_problem(int dim, int n, double target_alpha, std::uint64_t seed) {
    if (dim != 2 && dim != 3) throw std::invalid_argument("dim must be 2 or 3");
    if (n < 2) throw std::invalid_argument("n must be >= 2");
    Grid g{dim, n};

    auto alpha_of = [&](int s) {
        Fields f = random_fields(g, seed, s);
        return static_cast<double>(kept_rows(g, f)) / static_cast<double>(g.nodes());
    };
    // alpha(s) is non-increasing in s: binary search the crossing.
    const double amax = alpha_of(0), amin = alpha_of(n);
    int s = 0;
    if (target_alpha >= amax) {
        s = 0;
        if (target_alpha > amax)
            std::cerr << "warning: target alpha " << target_alpha << " above attainable maximum "
                      << amax << "; clamping\n";
    } else if (target_alpha <= amin) {
        s = n;
        if (target_alpha < amin)
            std::cerr << "warning: target alpha " << target_alpha << " below attainable minimum "
                      << amin << "; clamping\n";
    } else {
        int lo = 0, hi = n;  // smallest s with alpha(s) <= target
        while (lo < hi) {
            const int mid = lo + (hi - lo) / 2;
            if (alpha_of(mid) <= target_alpha)
                hi = mid;
            else
                lo = mid + 1;
        }
        s = lo;
        if (s > 0) {
            const double below = alpha_of(s), above = alpha_of(s - 1);
            if (std::abs(above - target_alpha) <= std::abs(below - target_alpha)) s = s - 1;
        }
    }
    return assemble(g, random_fields(g, seed, s), s);
}

double jacobian_fd_error(const InverseProblem& p) {
    const Grid g{p.dim, p.n};
    Fields f{g, p.u, p.z};
    const double h = 1e-6;
    double worst = 0.0;

    auto eval = [&](int i, int j, int k) {
        return g.dim == 2 ? residual_2d(f, i, j) : residual_3d(f, i, j, k);
    };
    auto entry = [&](Index var, Index eq) {  // stored value, 0 if absent
        const Index row = p.row_of_var[var];
        if (row < 0) return 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(p.A.eigen(), eq); it; ++it)
            if (it.row() == row) return it.value();
        return 0.0;
    };
    auto check_var = [&](double* slot, Index var, Index eq, int i, int j, int k) {
        const double keep = *slot;
        *slot = keep + h;
        const double fp = eval(i, j, k);
        *slot = keep - h;
        const double fm = eval(i, j, k);
        *slot = keep;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - entry(var, eq)));
    };

    const int kmax = g.dim == 2 ? 1 : g.n;
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            for (int k = 0; k < kmax; ++k) {
                const Index eq = g.dim == 2 ? g.node(i, j) : g.node(i, j, k);
                // Every u variable in the stencil (in-range neighbors + self).
                const int di[7] = {0, 1, -1, 0, 0, 0, 0};
                const int dj[7] = {0, 0, 0, 1, -1, 0, 0};
                const int dk[7] = {0, 0, 0, 0, 0, 1, -1};
                const int nn = g.dim == 2 ? 5 : 7;
                for (int t = 0; t < nn; ++t) {
                    const int ii = i + di[t], jj = j + dj[t], kk = k + dk[t];
                    if (!g.in(ii) || !g.in(jj) || (g.dim == 3 && !g.in(kk))) continue;
                    const Index var = g.dim == 2 ? g.node(ii, jj) : g.node(ii, jj, kk);
                    check_var(&f.u(var), var, eq, i, j, k);
                }
                // Every surrounding z cell.
                for (int p2 = i; p2 <= i + 1; ++p2)
                    for (int q2 = j; q2 <= j + 1; ++q2) {
                        if (g.dim == 2) {
                            const Index var = g.nodes() + g.cell(p2, q2);
                            check_var(&f.z(g.cell(p2, q2)), var, eq, i, j, 0);
                        } else {
                            for (int r2 = k; r2 <= k + 1; ++r2) {
                                const Index var = g.nodes() + g.cell(p2, q2, r2);
                                check_var(&f.z(g.cell(p2, q2, r2)), var, eq, i, j, k);
                            }
                        }
                    }
            }
    return worst;
}

MatrixXd read_coords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    long lineno = 0;
    size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (vals.empty()) continue;
        if (width == 0) width = vals.size();
        if (vals.size() != width)
            throw ParseError(path, lineno, "inconsistent coordinate dimension");
        rows.push_back(std::move(vals));
    }
    MatrixXd out(rows.size(), width);
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t d = 0; d < width; ++d) out(i, d) = rows[i][d];
    return out;
}

void write_coords(const MatrixXd& coords, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    char buf[48];
    for (Index i = 0; i < coords.rows(); ++i) {
        for (Index d = 0; d < coords.cols(); ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", coords(i, d));
            out << (d ? " " : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<int> read_parts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<int> parts;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream ss(line);
        long v;
        if (!(ss >> v)) throw ParseError(path, lineno, "malformed part id");
        parts.push_back(static_cast<int>(v));
    }
    return parts;
}

}  // namespace spaqr
