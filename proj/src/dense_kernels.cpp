#include "spaqr/dense_kernels.h"

#include <cassert>
#include <cmath>
#include <limits>

#include <Eigen/QR>

namespace spaqr {

void block_householder_qr(const MatrixXd& B, ReflectorSet& H, MatrixXd& R) {
    const Index m = static_cast<Index>(B.rows());
    const Index n = static_cast<Index>(B.cols());
    assert(m >= n);
    Eigen::HouseholderQR<MatrixXd> qr(B);
    const MatrixXd& qrm = qr.matrixQR();

    H.T.resize(0, 0);
    H.V = MatrixXd::Zero(m, n);
    H.tau = qr.hCoeffs().head(n);
    H.sign = VectorXd::Ones(n);
    R = MatrixXd::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        H.V(j, j) = 1.0;
        if (j + 1 < m) H.V.col(j).tail(m - j - 1) = qrm.col(j).tail(m - j - 1);
        for (Index i = 0; i <= j && i < n; ++i) R(i, j) = qrm(i, j);
    }
    // Flip rows so diag(R) >= 0; the flip is folded into the orthogonal factor.
    for (Index i = 0; i < n; ++i) {
        if (R(i, i) < 0.0) {
            H.sign(i) = -1.0;
            R.row(i) = -R.row(i);
        }
    }
}

namespace {

// Upper-triangular T with H_0 H_1 ... H_{k-1} = I - V T V^T, accumulated
// column by column; a zero tau leaves a zero column, i.e. the identity.
MatrixXd accumulate_wy(const ReflectorSet& H) {
    const Index k = H.count();
    MatrixXd T = MatrixXd::Zero(k, k);
    for (Index j = 0; j < k; ++j) {
        if (H.tau(j) == 0.0) continue;
        if (j > 0) {
            VectorXd w = H.V.leftCols(j).transpose() * H.V.col(j);
            T.col(j).head(j).noalias() = -H.tau(j) * (T.topLeftCorner(j, j) * w);
        }
        T(j, j) = H.tau(j);
    }
    return T;
}

// X <- H_raw^T X or H_raw X for the packed reflectors, without the sign flips.
void apply_raw(const ReflectorSet& H, Eigen::Ref<MatrixXd> X, bool transpose) {
    const Index m = H.rows(), k = H.count();
    assert(X.rows() == m);
    if (k == 0) return;
    // Blocked form pays once the rank-1 sweeps would walk X several times.
    if (k >= 4 && X.cols() >= 4) {
        if (H.T.size() == 0) H.T = accumulate_wy(H);
        MatrixXd W = H.V.transpose() * X;  // k x cols
        if (transpose)  // H^T = I - V T^T V^T
            W = H.T.transpose().triangularView<Eigen::Lower>() * W;
        else  // H = I - V T V^T
            W = H.T.triangularView<Eigen::Upper>() * W;
        X.noalias() -= H.V * W;
        return;
    }
    VectorXd w(X.cols());
    if (transpose) {  // H^T = H_{k-1} ... H_0, applied left to right
        for (Index j = 0; j < k; ++j) {
            if (H.tau(j) == 0.0) continue;
            auto v = H.V.col(j).tail(m - j);
            w.noalias() = X.bottomRows(m - j).transpose() * v;
            X.bottomRows(m - j).noalias() -= H.tau(j) * v * w.transpose();
        }
    } else {
        for (Index j = k - 1; j >= 0; --j) {
            if (H.tau(j) == 0.0) continue;
            auto v = H.V.col(j).tail(m - j);
            w.noalias() = X.bottomRows(m - j).transpose() * v;
            X.bottomRows(m - j).noalias() -= H.tau(j) * v * w.transpose();
        }
    }
}

void flip_rows(const ReflectorSet& H, Eigen::Ref<MatrixXd> X) {
    for (Index i = 0; i < H.count(); ++i)
        if (H.sign(i) < 0.0) X.row(i) = -X.row(i);
}

}  // namespace

void apply_reflectors_left_t(const ReflectorSet& H, Eigen::Ref<MatrixXd> X) {
    apply_raw(H, X, true);
    flip_rows(H, X);
}

void apply_reflectors_left(const ReflectorSet& H, Eigen::Ref<MatrixXd> X) {
    flip_rows(H, X);
    apply_raw(H, X, false);
}

void apply_reflectors_right(const ReflectorSet& H, Eigen::Ref<MatrixXd> X) {
    MatrixXd Xt = X.transpose();
    apply_reflectors_left_t(H, Xt);  // (X H)^T = H^T X^T
    X = Xt.transpose();
}

void apply_reflectors_right_t(const ReflectorSet& H, Eigen::Ref<MatrixXd> X) {
    MatrixXd Xt = X.transpose();
    apply_reflectors_left(H, Xt);
    X = Xt.transpose();
}

MatrixXd reflectors_to_dense(const ReflectorSet& H) {
    MatrixXd Q = MatrixXd::Identity(H.rows(), H.rows());
    apply_reflectors_left(H, Q);
    return Q;
}

TruncatedQR truncated_cpqr(const MatrixXd& B, double eps) {
    const Index m = static_cast<Index>(B.rows());
    const Index n = static_cast<Index>(B.cols());
    const Index kmax = std::min(m, n);

    TruncatedQR out;
    if (kmax == 0) {
        out.H.V = MatrixXd::Zero(m, 0);
        out.H.tau = VectorXd::Zero(0);
        out.H.sign = VectorXd::Zero(0);
        out.R = MatrixXd::Zero(0, n);
        return out;
    }

    MatrixXd A = B;
    std::vector<Index> colid(n);
    for (Index j = 0; j < n; ++j) colid[j] = j;

    VectorXd vn1(n), vn2(n);  // running estimate / reference for trailing column norms
    for (Index j = 0; j < n; ++j) vn1(j) = vn2(j) = A.col(j).norm();
    const double tol3z = std::sqrt(std::numeric_limits<double>::epsilon());

    out.H.V = MatrixXd::Zero(m, kmax);
    out.H.tau = VectorXd::Zero(kmax);
    out.H.sign = VectorXd::Ones(kmax);

    Index k = 0;
    while (k < kmax) {
        Index piv = k;
        for (Index j = k + 1; j < n; ++j)
            if (vn1(j) > vn1(piv)) piv = j;
        // Accept or stop based on the exact pivot column norm, not the estimate.
        double exact = A.col(piv).tail(m - k).norm();
        bool below = (k == 0) ? !(exact > 0.0)
                              : (eps > 0.0 && exact < eps * out.r11);
        if (below && k > 0) {
            // Estimates can be stale; refresh every trailing norm and retry once.
            Index best = k;
            double bestn = -1.0;
            for (Index j = k; j < n; ++j) {
                vn1(j) = vn2(j) = A.col(j).tail(m - k).norm();
                if (vn1(j) > bestn) { bestn = vn1(j); best = j; }
            }
            piv = best;
            exact = bestn;
            below = eps > 0.0 && exact < eps * out.r11;
        }
        if (below) break;

        if (piv != k) {
            A.col(piv).swap(A.col(k));
            std::swap(colid[piv], colid[k]);
            std::swap(vn1(piv), vn1(k));
            std::swap(vn2(piv), vn2(k));
        }

        // Householder step on column k (no-op reflector for an exactly zero column,
        // which is only reachable with eps = 0).
        VectorXd x = A.col(k).tail(m - k);
        double alpha = x.norm();
        if (x(0) > 0.0) alpha = -alpha;
        VectorXd v = x;
        v(0) -= alpha;
        const double vns = v.squaredNorm();
        out.H.V(k, k) = 1.0;
        if (vns > 0.0) {
            const double tau = 2.0 / vns;
            if (n - k - 1 > 0) {
                VectorXd w = A.bottomRightCorner(m - k, n - k - 1).transpose() * v;
                A.bottomRightCorner(m - k, n - k - 1).noalias() -= tau * v * w.transpose();
            }
            A.col(k).tail(m - k).setZero();
            A(k, k) = alpha;
            out.H.V.col(k).tail(m - k) = v / v(0);
            out.H.tau(k) = tau * v(0) * v(0);
        }
        if (A(k, k) < 0.0) {
            out.H.sign(k) = -1.0;
            A.row(k).tail(n - k) = -A.row(k).tail(n - k);
        }
        if (k == 0) out.r11 = A(0, 0);
        out.perm.push_back(colid[k]);
        ++k;

        // Downdate trailing column norms; re-measure where cancellation bites.
        if (k < kmax) {
            for (Index j = k; j < n; ++j) {
                if (vn1(j) == 0.0) continue;
                double t = std::abs(A(k - 1, j)) / vn1(j);
                t = std::max(0.0, (1.0 - t) * (1.0 + t));
                const double ratio = vn1(j) / vn2(j);
                if (t * ratio * ratio <= tol3z) {
                    vn1(j) = vn2(j) = A.col(j).tail(m - k).norm();
                } else {
                    vn1(j) *= std::sqrt(t);
                }
            }
        }
    }

    out.rank = k;
    out.H.V.conservativeResize(m, k);
    out.H.tau.conservativeResize(k);
    out.H.sign.conservativeResize(k);
    // Scatter R's columns back to the original order.
    out.R = MatrixXd::Zero(k, n);
    for (Index j = 0; j < n; ++j) out.R.col(colid[j]) = A.col(j).head(k);
    return out;
}

void check_diag_invertible(const MatrixXd& R) {
    for (Index i = 0; i < std::min(R.rows(), R.cols()); ++i) {
        const double d = std::abs(R(i, i));
        if (!(d >= std::numeric_limits<double>::min()))
            throw SingularFrontError(-1, "pivot " + std::to_string(i) + " is zero or denormal");
    }
}

void tri_solve_upper(const MatrixXd& R, Eigen::Ref<MatrixXd> B, Side side, bool transpose) {
    check_diag_invertible(R);
    auto U = R.triangularView<Eigen::Upper>();
    auto Lt = R.transpose().triangularView<Eigen::Lower>();  // U^T
    if (side == Side::Left) {
        if (transpose)
            Lt.solveInPlace(B);
        else
            U.solveInPlace(B);
    } else {
        if (transpose)
            Lt.template solveInPlace<Eigen::OnTheRight>(B);
        else
            U.template solveInPlace<Eigen::OnTheRight>(B);
    }
}

}  // namespace spaqr
