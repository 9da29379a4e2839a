#include "esnrmt/closedform.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace esnrmt {

namespace {

// Applies the T_hat x T leading-diagonal extension of diag(D) to x:
// entry i is D_i x_i for i < min(T_hat, size(x)), zero beyond.
Vector cross_profile_apply(const Vector& D, const Vector& x, int T_hat) {
  const int m = std::min<int>(T_hat, static_cast<int>(x.size()));
  Vector out = Vector::Zero(T_hat);
  out.head(m) = D.head(m).cwiseProduct(x.head(m));
  return out;
}

Vector haar_profile(double sigma, int T) {
  const double s2 = sigma * sigma;
  Vector D(T);
  double pw = 1.0;
  for (int i = 0; i < T; ++i) {
    D[i] = (1.0 - s2) * pw;
    pw *= s2;
  }
  return D;
}

}  // namespace

Vector invariant_profile(const MatrixSpec& spec, int T) {
  if (T <= 0) throw std::invalid_argument("invariant_profile: T must be positive");
  spec.validate();
  switch (spec.kind) {
    case MatrixSpec::Kind::HaarScaled:
      return haar_profile(spec.sigma, T);
    case MatrixSpec::Kind::MultiMemory: {
      double norm = 0.0;
      for (const auto& mode : spec.modes) norm += mode.fraction / (1.0 - mode.sigma * mode.sigma);
      Vector D(T);
      std::vector<double> pw(spec.modes.size(), 1.0);
      for (int i = 0; i < T; ++i) {
        double num = 0.0;
        for (std::size_t j = 0; j < spec.modes.size(); ++j) {
          num += spec.modes[j].fraction * pw[j];
          pw[j] *= spec.modes[j].sigma * spec.modes[j].sigma;
        }
        D[i] = num / norm;
      }
      return D;
    }
    default:
      throw std::invalid_argument(
          "invariant_profile: closed-form profile needs a Haar or multi-memory ensemble");
  }
}

double mc_closed(const MatrixSpec& spec, double c, int tau) {
  if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("mc_closed: requires 0 < c < 1");
  if (tau < 0) throw std::invalid_argument("mc_closed: tau must be nonnegative");
  return invariant_profile(spec, tau + 1)[tau] / (1.0 - c);
}

double invariant_mc_trace(const GramFamily& gram, double c, int tau) {
  if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("invariant_mc_trace: requires 0 < c < 1");
  if (tau < 0) throw std::invalid_argument("invariant_mc_trace: tau must be nonnegative");
  const Matrix& Wt = gram.power(tau);
  Eigen::LLT<Matrix> llt(gram.s0());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("invariant_mc_trace: S_0 factorization failed");
  const double tr = llt.solve(Wt).cwiseProduct(Wt).sum();
  return tr / (static_cast<double>(gram.s0().rows()) * (1.0 - c));
}

double fisher_memory(const GramFamily& gram, const Vector& m, int k, double eta2) {
  if (eta2 <= 0.0) throw std::invalid_argument("fisher_memory: eta2 must be positive");
  if (k < 0) throw std::invalid_argument("fisher_memory: k must be nonnegative");
  Vector v = gram.power(k) * m;
  Eigen::LLT<Matrix> llt(gram.s0());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("fisher_memory: S_0 factorization failed");
  return llt.solve(v).dot(v) / eta2;
}

double train_mse_invariant(const Vector& D, double c, const Matrix& U, const Vector& r,
                           double eta2) {
  if (!(c < 1.0)) throw std::invalid_argument("train_mse_invariant: requires c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("train_mse_invariant: eta2 must be positive");
  const int T = static_cast<int>(U.cols());
  if (D.size() != U.rows() || r.size() != T)
    throw std::invalid_argument("train_mse_invariant: dimension mismatch");
  Matrix inner = Matrix::Identity(T, T);
  inner.noalias() += U.transpose() * D.asDiagonal() * U / eta2;
  Eigen::LDLT<Matrix> ldlt(inner);
  return (1.0 - c) * r.dot(ldlt.solve(r)) / T;
}

double test_mse_invariant(const Vector& D, double c, const Matrix& U, const Matrix& U_hat,
                          const Vector& r, const Vector& r_hat, double eta2) {
  if (!(c < 1.0)) throw std::invalid_argument("test_mse_invariant: requires c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("test_mse_invariant: eta2 must be positive");
  const int T = static_cast<int>(U.cols());
  const int T_hat = static_cast<int>(U_hat.cols());
  if (D.size() != U.rows() || r.size() != T || r_hat.size() != T_hat)
    throw std::invalid_argument("test_mse_invariant: dimension mismatch");
  Matrix inner = Matrix::Identity(T, T);
  inner.noalias() += U.transpose() * D.asDiagonal() * U / eta2;
  Eigen::LDLT<Matrix> ldlt(inner);
  Vector pr = ldlt.solve(r);
  Vector upr = U * pr;
  Vector cross = cross_profile_apply(D, upr, T_hat);
  Vector dev = (U_hat.transpose() * cross) / (eta2 * std::sqrt(static_cast<double>(T))) -
               r_hat / std::sqrt(static_cast<double>(T_hat));
  const double term0 = dev.squaredNorm();
  const double term1 = r.dot(pr) / ((1.0 - c) * T);
  const double term2 = pr.squaredNorm() / T;
  return term0 + term1 - term2;
}

AlphaSolution solve_alpha(const Matrix& S0, double c) {
  if (!(c > 1.0)) throw std::invalid_argument("solve_alpha: requires c > 1");
  Eigen::SelfAdjointEigenSolver<Matrix> es(S0);
  if (es.info() != Eigen::Success) throw std::runtime_error("solve_alpha: eigensolver failed");
  const Vector& s = es.eigenvalues();
  const int n = static_cast<int>(s.size());
  if (s.minCoeff() <= 0.0)
    throw std::invalid_argument("solve_alpha: S_0 must be positive definite");
  auto trace_term = [&](double alpha) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += s[i] / (alpha + s[i]);
    return c * acc / n;
  };
  double lo = 0.0;
  double hi = c * s.maxCoeff();
  while (trace_term(hi) > 1.0) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (trace_term(mid) > 1.0 ? lo : hi) = mid;
  }
  AlphaSolution sol;
  sol.alpha = 0.5 * (lo + hi);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = s[i] / (sol.alpha + s[i]);
    acc += f * f;
  }
  sol.denominator = 1.0 - c * acc / n;
  return sol;
}

double test_mse_over(const Matrix& W, const Vector& m, const Matrix& S0,
                     const AlphaSolution& alpha, double c, const Matrix& U, const Matrix& U_hat,
                     const Vector& r, const Vector& r_hat, double eta2) {
  if (!(c > 1.0)) throw std::invalid_argument("test_mse_over: requires c > 1");
  if (eta2 <= 0.0) throw std::invalid_argument("test_mse_over: eta2 must be positive");
  if (alpha.alpha <= 0.0 || alpha.denominator <= 0.0)
    throw std::invalid_argument("test_mse_over: invalid alpha solution");
  const int n = static_cast<int>(W.rows());
  const int T = static_cast<int>(U.cols());
  const int T_hat = static_cast<int>(U_hat.cols());
  if (m.size() != n || r.size() != T || r_hat.size() != T_hat)
    throw std::invalid_argument("test_mse_over: dimension mismatch");
  const int j_max = std::max(T, T_hat);
  Matrix V(n, j_max);
  V.col(0) = m;
  for (int j = 1; j < j_max; ++j) V.col(j).noalias() = W * V.col(j - 1);
  Eigen::LLT<Matrix> llt(S0 + alpha.alpha * Matrix::Identity(n, n));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("test_mse_over: regularized S_0 factorization failed");
  Matrix Y = llt.solve(V.leftCols(T));
  Matrix D = V.leftCols(T).transpose() * Y;
  Matrix D_hat = V.leftCols(T_hat).transpose() * Y;
  Matrix D2 = Y.transpose() * S0 * Y;
  Matrix inner = Matrix::Identity(T, T);
  inner.noalias() += U.transpose() * D * U / eta2;
  Eigen::LDLT<Matrix> ldlt(inner);
  Vector pr = ldlt.solve(r);
  Vector upr = U * pr;
  Vector dev = (U_hat.transpose() * (D_hat * upr)) / (eta2 * std::sqrt(static_cast<double>(T))) -
               r_hat / std::sqrt(static_cast<double>(T_hat));
  const double term1 = dev.squaredNorm();
  const double term2 = pr.squaredNorm() / T;
  const double quad = (pr.squaredNorm() + upr.dot(D2 * upr) / eta2) / T;
  return term1 - term2 + quad / alpha.denominator;
}

double test_mse_over_haar(double sigma, double c, const Matrix& U, const Matrix& U_hat,
                          const Vector& r, const Vector& r_hat, double eta2) {
  if (!(c > 1.0)) throw std::invalid_argument("test_mse_over_haar: requires c > 1");
  if (!(sigma > 0.0 && sigma < 1.0))
    throw std::invalid_argument("test_mse_over_haar: requires 0 < sigma < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("test_mse_over_haar: eta2 must be positive");
  const int T = static_cast<int>(U.cols());
  const int T_hat = static_cast<int>(U_hat.cols());
  if (r.size() != T || r_hat.size() != T_hat)
    throw std::invalid_argument("test_mse_over_haar: dimension mismatch");
  const double eff = c * eta2;  // in-network noise is inflated by c in this regime
  Vector D = haar_profile(sigma, T);
  Matrix inner = Matrix::Identity(T, T);
  inner.noalias() += U.transpose() * D.asDiagonal() * U / eff;
  Eigen::LDLT<Matrix> ldlt(inner);
  Vector pr = ldlt.solve(r);
  Vector cross = cross_profile_apply(D, U * pr, T_hat);
  Vector dev = (U_hat.transpose() * cross) / (eff * std::sqrt(static_cast<double>(T))) -
               r_hat / std::sqrt(static_cast<double>(T_hat));
  return dev.squaredNorm() + r.dot(pr) / ((c - 1.0) * T);
}

ToeplitzKernel normal_kernel(const SpectralMeasure& mu, double c, int T,
                             const SolverSettings& settings) {
  if (c <= 0.0 || std::abs(c - 1.0) < 1e-9)
    throw std::invalid_argument("normal_kernel: c must be positive and away from 1");
  ScalarSpectrum spectrum = measure_spectrum(mu, settings.quadrature_points);
  const Regime regime = c < 1.0 ? Regime::CLess1 : Regime::CGreater1;
  return solve_kernel_scalar(spectrum, c, T, regime, settings);
}

double projection_train_mse(double sigma, double c, const Matrix& U, const Vector& r, double eta2,
                            const SolverSettings& settings) {
  if (!(sigma > 0.0 && sigma < 1.0))
    throw std::invalid_argument("projection_train_mse: requires 0 < sigma < 1");
  if (!(c > 0.0 && c < 1.0))
    throw std::invalid_argument("projection_train_mse: requires 0 < c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("projection_train_mse: eta2 must be positive");
  const int T = static_cast<int>(U.cols());
  if (r.size() != T || U.rows() != T)
    throw std::invalid_argument("projection_train_mse: dimension mismatch");
  ToeplitzKernel kernel = normal_kernel(SpectralMeasure::two_point(sigma), c, T, settings);
  const double r0 = kernel.at(0);
  // {sigma^{i+j} : i+j even} splits into even/odd rank-one parts sigma^i sigma^j.
  Vector ve = Vector::Zero(T), vo = Vector::Zero(T);
  double pw = 1.0;
  for (int i = 0; i < T; ++i) {
    (i % 2 == 0 ? ve[i] : vo[i]) = pw;
    pw *= sigma;
  }
  Vector we = U.transpose() * ve;
  Vector wo = U.transpose() * vo;
  const double scale = r0 * (1.0 - sigma * sigma) / (eta2 * c);
  Matrix inner = Matrix::Identity(T, T) + kernel.dense();
  inner.noalias() += scale * (we * we.transpose());
  inner.noalias() += scale * (wo * wo.transpose());
  Eigen::LDLT<Matrix> ldlt(inner);
  return r.dot(ldlt.solve(r)) / T;
}

double rank_one_train_mse(const Vector& d, double c, const Matrix& U, const Vector& r,
                          double eta2) {
  if (!(c < 1.0)) throw std::invalid_argument("rank_one_train_mse: requires c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("rank_one_train_mse: eta2 must be positive");
  if (d.size() != U.rows() || r.size() != U.cols())
    throw std::invalid_argument("rank_one_train_mse: dimension mismatch");
  Vector v = U.transpose() * d;
  const double proj = v.dot(r);
  return (1.0 - c) * (r.squaredNorm() - proj * proj / (eta2 + v.squaredNorm())) / U.cols();
}

double linear_combo_test_mse(const Vector& b, const Vector& D, const Matrix& U,
                             const Matrix& U_hat, double c, double eta2, double impulsive_s2,
                             double* robustness_out) {
  if (!(c < 1.0)) throw std::invalid_argument("linear_combo_test_mse: requires c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("linear_combo_test_mse: eta2 must be positive");
  if (impulsive_s2 < 0.0)
    throw std::invalid_argument("linear_combo_test_mse: impulsive_s2 must be nonnegative");
  const int T = static_cast<int>(U.cols());
  const int T_hat = static_cast<int>(U_hat.cols());
  if (b.size() != T || D.size() != T || U.rows() != T)
    throw std::invalid_argument("linear_combo_test_mse: dimension mismatch");
  Vector sq = D.cwiseMax(0.0).cwiseSqrt();
  Vector w(T);
  for (int i = 0; i < T; ++i) w[i] = b[i] == 0.0 ? 0.0 : b[i] / sq[i];
  Matrix C = sq.asDiagonal() * (U * U.transpose()) * sq.asDiagonal();
  Eigen::LDLT<Matrix> ldlt(Matrix::Identity(T, T) + C / eta2);
  Vector fw = ldlt.solve(w);
  Vector cfw = C * fw;
  const double term_a = w.dot(cfw) / (1.0 - c);
  // Delta = [U_hat U_hat^T]_{TxT} - U U^T (zero-padded or truncated to T x T).
  Matrix top = Matrix::Zero(T, T);
  const int mrows = std::min(T, T_hat);
  top.topLeftCorner(mrows, mrows).noalias() =
      U_hat.topRows(mrows) * U_hat.topRows(mrows).transpose();
  Matrix delta = top - U * U.transpose();
  Vector dw = sq.cwiseProduct(fw);
  const double term_b = dw.dot(delta * dw);
  const double imp = impulsive_s2 * cfw.squaredNorm() / (eta2 * eta2);
  if (robustness_out) *robustness_out = imp;
  return term_a + term_b + imp;
}

double ar_delay_train_mse(const Vector& D, double c, double q, int tau, double eta2) {
  if (!(c < 1.0)) throw std::invalid_argument("ar_delay_train_mse: requires c < 1");
  if (eta2 <= 0.0) throw std::invalid_argument("ar_delay_train_mse: eta2 must be positive");
  if (!(std::abs(q) < 1.0)) throw std::invalid_argument("ar_delay_train_mse: requires |q| < 1");
  const int T = static_cast<int>(D.size());
  if (tau < 0 || tau >= T) throw std::invalid_argument("ar_delay_train_mse: tau out of range");
  if (D[tau] <= 0.0) throw std::invalid_argument("ar_delay_train_mse: D_tau must be positive");
  Vector sq = D.cwiseMax(0.0).cwiseSqrt();
  std::vector<double> qp(T);
  qp[0] = 1.0;
  for (int d = 1; d < T; ++d) qp[d] = qp[d - 1] * q;
  Matrix M = Matrix::Identity(T, T);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j) M(i, j) += sq[i] * sq[j] * qp[std::abs(i - j)] / eta2;
  Vector e = Vector::Zero(T);
  e[tau] = 1.0;
  Eigen::LDLT<Matrix> ldlt(M);
  const double minv = ldlt.solve(e)[tau];
  return eta2 * (1.0 - c) / D[tau] * (1.0 - minv);
}

Vector estimate_delay_profile(const Matrix& U, const Vector& r, double gamma) {
  if (gamma < 0.0)
    throw std::invalid_argument("estimate_delay_profile: gamma must be nonnegative");
  const int T = static_cast<int>(U.rows());
  if (r.size() != U.cols())
    throw std::invalid_argument("estimate_delay_profile: dimension mismatch");
  Matrix G = U * U.transpose() + gamma * Matrix::Identity(T, T);
  // 1/sqrt(T) undoes the target scaling of r = sqrt(T) U^T b, so the result
  // estimates b itself.
  return Eigen::LDLT<Matrix>(G).solve(U * r) / std::sqrt(double(T));
}

double design_score(const Vector& b_hat, const Vector& D, int k) {
  if (k < 0 || k > b_hat.size() || k > D.size())
    throw std::invalid_argument("design_score: k out of range");
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += b_hat[i] * b_hat[i] / std::max(D[i], 1e-14);
  return acc;
}

}  // namespace esnrmt
