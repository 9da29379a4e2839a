#include "esnrmt/banded.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace esnrmt {

BandedSymmetric BandedSymmetric::from_kernel(const std::vector<double>& kernel, int T,
                                             double shift) {
  if (T <= 0) throw std::invalid_argument("from_kernel: T must be positive");
  if (kernel.empty()) throw std::invalid_argument("from_kernel: empty kernel");
  BandedSymmetric B;
  B.T = T;
  B.w = std::min(static_cast<int>(kernel.size()) - 1, T - 1);
  B.diags = Eigen::MatrixXd::Zero(B.w + 1, T);
  for (int d = 0; d <= B.w; ++d)
    B.diags.row(d).head(T - d).setConstant(kernel[static_cast<std::size_t>(d)]);
  B.diags.row(0).array() += shift;
  return B;
}

Eigen::MatrixXd BandedSymmetric::dense() const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(T, T);
  for (int d = 0; d <= w; ++d)
    for (int i = 0; i < T - d; ++i) {
      M(i + d, i) = diags(d, i);
      M(i, i + d) = diags(d, i);
    }
  return M;
}

BandedLdlt::BandedLdlt(const BandedSymmetric& B) : T(B.T), w(B.w) {
  lower = Eigen::MatrixXd::Zero(w + 1, T);
  for (int j = 0; j < T; ++j) {
    const int k0 = std::max(0, j - w);
    double dj = B.diags(0, j);
    for (int k = k0; k < j; ++k) {
      const double l = lower(j - k, k);
      dj -= l * l * lower(0, k);
    }
    if (!(dj > 0.0)) {
      positive = false;
      if (dj == 0.0) throw std::runtime_error("BandedLdlt: zero pivot");
    }
    lower(0, j) = dj;
    const int imax = std::min(T - 1, j + w);
    for (int i = j + 1; i <= imax; ++i) {
      double s = (i - j <= B.w) ? B.diags(i - j, j) : 0.0;
      const int kk0 = std::max(0, i - w);
      for (int k = std::max(k0, kk0); k < j; ++k)
        s -= lower(i - k, k) * lower(j - k, k) * lower(0, k);
      lower(i - j, j) = s / dj;
    }
  }
}

void BandedLdlt::solve_in_place(Eigen::VectorXd& x) const {
  if (x.size() != T) throw std::invalid_argument("BandedLdlt::solve: size mismatch");
  for (int j = 0; j < T; ++j) {
    const double xj = x[j];
    const int imax = std::min(T - 1, j + w);
    for (int i = j + 1; i <= imax; ++i) x[i] -= lower(i - j, j) * xj;
  }
  for (int j = 0; j < T; ++j) x[j] /= lower(0, j);
  for (int j = T - 1; j >= 0; --j) {
    double s = x[j];
    const int imax = std::min(T - 1, j + w);
    for (int i = j + 1; i <= imax; ++i) s -= lower(i - j, j) * x[i];
    x[j] = s;
  }
}

Eigen::VectorXd BandedLdlt::solve(Eigen::VectorXd x) const {
  solve_in_place(x);
  return x;
}

BandedSymmetric selected_inverse(const BandedLdlt& F) {
  const int T = F.T;
  const int w = F.w;
  BandedSymmetric Z;
  Z.T = T;
  Z.w = w;
  Z.diags = Eigen::MatrixXd::Zero(w + 1, T);
  for (int j = T - 1; j >= 0; --j) {
    const int kmax = std::min(T - 1, j + w);
    for (int i = kmax; i > j; --i) {
      double s = 0.0;
      for (int k = j + 1; k <= kmax; ++k) {
        const double l = F.lower(k - j, j);
        if (l == 0.0) continue;
        const int lo = std::min(i, k), hi = std::max(i, k);
        s -= l * Z.diags(hi - lo, lo);
      }
      Z.diags(i - j, j) = s;
    }
    double s = 1.0 / F.lower(0, j);
    for (int k = j + 1; k <= kmax; ++k) s -= F.lower(k - j, j) * Z.diags(k - j, j);
    Z.diags(0, j) = s;
  }
  return Z;
}

double offset_trace(const BandedSymmetric& B, int q) {
  const int a = std::abs(q);
  if (a >= B.T) return 0.0;
  if (a > B.w) return 0.0;
  return B.diags.row(a).head(B.T - a).sum() / double(B.T);
}

std::vector<double> product_offset_traces(const BandedSymmetric& Y, const BandedSymmetric& G,
                                          int q_out) {
  if (Y.T != G.T) throw std::invalid_argument("product_offset_traces: size mismatch");
  const int T = Y.T;
  if (T > 6000) throw std::runtime_error("product_offset_traces: T too large for dense path");
  // Dense evaluation of P = Y G Y; only the leading offset traces are kept.
  const Eigen::MatrixXd Yd = Y.dense();
  const Eigen::MatrixXd P = Yd * (G.dense() * Yd);
  std::vector<double> out(static_cast<std::size_t>(q_out) + 1, 0.0);
  for (int q = 0; q <= q_out; ++q) {
    if (q >= T) break;
    out[static_cast<std::size_t>(q)] = P.diagonal(q).sum() / double(T);
  }
  return out;
}

}  // namespace esnrmt
