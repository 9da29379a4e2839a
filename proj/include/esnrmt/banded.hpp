#pragma once

#include <Eigen/Dense>
#include <vector>

namespace esnrmt {

// Symmetric banded T x T matrix stored by diagonals: diag(d)(i) = B_{i+d,i}
// for d = 0..w, i = 0..T-1-d.
struct BandedSymmetric {
  int T = 0;
  int w = 0;
  Eigen::MatrixXd diags;  // (w+1) x T, row d holds diagonal d (trailing entries unused)

  static BandedSymmetric from_kernel(const std::vector<double>& kernel, int T, double shift);
  Eigen::MatrixXd dense() const;
};

// In-place LDL^T of a banded symmetric positive definite matrix.
// L is unit lower triangular with the same bandwidth; D is diagonal.
struct BandedLdlt {
  int T = 0;
  int w = 0;
  Eigen::MatrixXd lower;  // row d holds L_{i+d,i}, d = 1..w; row 0 holds D_ii
  bool positive = true;

  explicit BandedLdlt(const BandedSymmetric& B);
  void solve_in_place(Eigen::VectorXd& x) const;
  Eigen::VectorXd solve(Eigen::VectorXd x) const;
};

// Entries of the exact inverse on the band |i-j| <= w, via the
// Takahashi/Erisman-Tinney recurrence on the LDL^T factor. Exact for the
// in-band entries (no truncation is involved for a banded operator).
BandedSymmetric selected_inverse(const BandedLdlt& F);

// (1/T) sum_i B_{i,i+q} over the valid range (offset trace of a symmetric
// banded matrix). q may be negative.
double offset_trace(const BandedSymmetric& B, int q);

// Offset traces (1/T) tr(J^q Y G Y) for |q| <= q_out, where Y and G are
// symmetric banded. Off-band entries of Y are treated as zero; when Y is the
// selected inverse of a well-conditioned banded operator those entries are
// below machine precision relative to the band.
std::vector<double> product_offset_traces(const BandedSymmetric& Y, const BandedSymmetric& G,
                                          int q_out);

}  // namespace esnrmt
