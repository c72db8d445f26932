#pragma once

#include <vector>

#include "spaqr/types.h"

namespace spaqr {

// Compact set of Householder reflectors H = H_0 H_1 ... H_{k-1} with a per-step
// sign flip so that the induced R has a nonnegative diagonal.
// Column j of V stores the reflector vector (unit at row j, zeros above).
struct ReflectorSet {
    MatrixXd V;        // m x k
    VectorXd tau;      // k
    VectorXd sign;     // k entries in {+1,-1}
    // Triangular factor of the blocked form, built on first application and
    // reused after; V and tau must not change once a set has been applied.
    mutable MatrixXd T;
    Index rows() const { return static_cast<Index>(V.rows()); }
    Index count() const { return static_cast<Index>(V.cols()); }
};

// Full (non-pivoted) QR of B (m x n, m >= n):  B = H * [R; 0], diag(R) >= 0.
void block_householder_qr(const MatrixXd& B, ReflectorSet& H, MatrixXd& R);

// In-place application of the orthogonal factor to the rows of X.
void apply_reflectors_left_t(const ReflectorSet& H, Eigen::Ref<MatrixXd> X);  // X <- H^T X
void apply_reflectors_left(const ReflectorSet& H, Eigen::Ref<MatrixXd> X);    // X <- H X
// ... and to the columns of X.
void apply_reflectors_right(const ReflectorSet& H, Eigen::Ref<MatrixXd> X);    // X <- X H
void apply_reflectors_right_t(const ReflectorSet& H, Eigen::Ref<MatrixXd> X);  // X <- X H^T

MatrixXd reflectors_to_dense(const ReflectorSet& H);  // m x m orthogonal factor

// Rank-revealing truncated column-pivoted QR.
// Stops as soon as every remaining column has norm < eps * |R_11|; the rank r
// is the largest prefix with |R_ii| >= eps * |R_11| (r = 0 for B = 0,
// r = min(m,n) for eps = 0 and nonzero B).
struct TruncatedQR {
    ReflectorSet H;           // r reflectors spanning the kept row space
    MatrixXd R;               // r x n, columns back in the ORIGINAL order (R * P^T)
    std::vector<Index> perm;  // pivot order; perm[i] = original column of step i
    Index rank = 0;
    double r11 = 0.0;         // |R_11| (largest pivot norm); 0 for B = 0
};
TruncatedQR truncated_cpqr(const MatrixXd& B, double eps);

// Triangular solves against an upper-triangular R; throws SingularFrontError
// (cluster -1, to be re-tagged by the caller) on a zero/denormal diagonal.
enum class Side { Left, Right };
void tri_solve_upper(const MatrixXd& R, Eigen::Ref<MatrixXd> B, Side side, bool transpose);

// Throws SingularFrontError(-1) if any diagonal entry is zero or denormal.
void check_diag_invertible(const MatrixXd& R);

}  // namespace spaqr
