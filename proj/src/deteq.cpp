#include "esnrmt/deteq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace esnrmt {

namespace {

constexpr double kPi = 3.14159265358979323846;

int decay_band(double rho, const SolverSettings& s, int T) {
  if (!(rho >= 0.0)) throw std::runtime_error("decay_band: invalid decay rate");
  int band;
  if (rho < s.band_tol)
    band = 0;
  else if (rho >= 1.0)
    band = T - 1;
  else
    band = static_cast<int>(std::ceil(std::log(s.band_tol) / std::log(rho)));
  return std::min({band, T - 1, s.band_cap});
}

// Circulant symbol of shift*I + Toeplitz(lags) at angle 2*pi*j/T.
Vector circulant_symbol(const std::vector<double>& lags, int T, double shift) {
  Vector sym = Vector::Constant(T, shift + lags[0]);
  for (int j = 0; j < T; ++j) {
    const double theta = 2.0 * kPi * double(j) / double(T);
    for (std::size_t p = 1; p < lags.size(); ++p)
      sym[j] += 2.0 * lags[p] * std::cos(double(p) * theta);
  }
  return sym;
}

std::vector<double> circulant_traces(const Vector& inv_symbol, int T, int q_out) {
  std::vector<double> t(static_cast<std::size_t>(q_out) + 1, 0.0);
  for (int q = 0; q <= q_out; ++q) {
    double z = 0.0;
    for (int j = 0; j < T; ++j) z += std::cos(2.0 * kPi * double(q) * double(j) / double(T)) * inv_symbol[j];
    t[static_cast<std::size_t>(q)] = (z / double(T)) * (double(T - q) / double(T));
  }
  return t;
}

// Offset traces (1/T) tr(J^q (shift I + Toeplitz(lags))^{-1}), q = 0..q_out.
std::vector<double> toeplitz_inverse_traces(const std::vector<double>& lags, int T, double shift,
                                            int q_out, const SolverSettings& s) {
  if (s.toeplitz_path == SolverSettings::ToeplitzPath::CirculantFast) {
    const Vector sym = circulant_symbol(lags, T, shift);
    if (sym.minCoeff() <= 0.0)
      throw std::runtime_error("toeplitz_inverse_traces: non-positive circulant symbol");
    return circulant_traces(sym.cwiseInverse(), T, q_out);
  }
  const int w = std::min(T - 1, std::max(q_out, static_cast<int>(lags.size()) - 1));
  std::vector<double> padded(static_cast<std::size_t>(w) + 1, 0.0);
  std::copy(lags.begin(), lags.begin() + std::min(lags.size(), padded.size()), padded.begin());
  const BandedSymmetric B = BandedSymmetric::from_kernel(padded, T, shift);
  const BandedLdlt F(B);
  if (!F.positive) throw std::runtime_error("toeplitz_inverse_traces: kernel matrix not positive");
  const BandedSymmetric Z = selected_inverse(F);
  std::vector<double> t(static_cast<std::size_t>(q_out) + 1, 0.0);
  for (int q = 0; q <= q_out; ++q) t[static_cast<std::size_t>(q)] = offset_trace(Z, q);
  return t;
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void damp_update(std::vector<double>& k, const std::vector<double>& cand, double damping) {
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = (1.0 - damping) * cand[i] + damping * k[i];
}

}  // namespace

Matrix ToeplitzKernel::dense() const {
  Matrix M(T, T);
  for (int j = 0; j < T; ++j)
    for (int i = 0; i < T; ++i) M(i, j) = at(j - i);
  return M;
}

BandedSymmetric ToeplitzKernel::banded(double shift) const {
  return BandedSymmetric::from_kernel(lags, T, shift);
}

double offset_trace(const Matrix& B, int q) {
  return B.diagonal(q).sum() / double(B.rows());
}

ScalarSpectrum empirical_spectrum(const Matrix& W_symmetric, const Vector& m) {
  const double asym = (W_symmetric - W_symmetric.transpose()).norm();
  if (asym > 1e-10 * std::max(1.0, W_symmetric.norm()))
    throw std::invalid_argument("empirical_spectrum: W is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(W_symmetric);
  ScalarSpectrum sp;
  sp.nodes = es.eigenvalues();
  if (sp.nodes.cwiseAbs().maxCoeff() >= 1.0)
    throw std::runtime_error("empirical_spectrum: eigenvalue outside the unit interval");
  const int n = static_cast<int>(sp.nodes.size());
  sp.trace_w = Vector::Constant(n, 1.0 / double(n));
  sp.m_w = (es.eigenvectors().transpose() * m).array().square();
  return sp;
}

ScalarSpectrum measure_spectrum(const SpectralMeasure& mu, int points) {
  std::vector<double> nodes, weights;
  mu.quadrature(points, nodes, weights);
  ScalarSpectrum sp;
  sp.nodes = Eigen::Map<Vector>(nodes.data(), static_cast<Eigen::Index>(nodes.size()));
  sp.trace_w = Eigen::Map<Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  sp.m_w = sp.trace_w;  // isotropic input: quadratic forms match normalized traces
  return sp;
}

ToeplitzKernel solve_kernel_scalar(const ScalarSpectrum& spectrum, double c, int T, Regime regime,
                                   const SolverSettings& settings, std::vector<double>* t_out) {
  const double delta_plus = regime == Regime::CGreater1 ? 1.0 : 0.0;
  const double delta_minus = regime == Regime::CLess1 ? 1.0 : 0.0;
  const Vector& lam = spectrum.nodes;
  const Vector& tw = spectrum.trace_w;
  const int band = decay_band(lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0, settings, T);
  const auto kernel_from_t = [&](const std::vector<double>& t) {
    // k_d = c * sum_i tw_i lam_i^d / (d+ (1 - lam^2) + sum_q t_q lam^{|q|})
    std::vector<double> k(static_cast<std::size_t>(band) + 1, 0.0);
    Vector den(lam.size());
    for (int i = 0; i < lam.size(); ++i) {
      double poly = t[0];
      double lp = 1.0;
      for (int q = 1; q <= band; ++q) {
        lp *= lam[i];
        poly += 2.0 * t[static_cast<std::size_t>(q)] * lp;
      }
      den[i] = delta_plus * (1.0 - lam[i] * lam[i]) + poly;
      if (den[i] <= 0.0) throw std::runtime_error("solve_kernel_scalar: non-positive denominator");
    }
    Vector num = tw.cwiseQuotient(den);
    for (int d = 0; d <= band; ++d) {
      k[static_cast<std::size_t>(d)] = c * num.sum();
      num = num.cwiseProduct(lam);
    }
    return k;
  };

  std::vector<double> k(static_cast<std::size_t>(band) + 1, 0.0);
  if (regime == Regime::CGreater1) {
    // Start from R~ = 0: k_d = c (1/n) tr S_d.
    Vector num(lam.size());
    for (int i = 0; i < lam.size(); ++i) num[i] = tw[i] / (1.0 - lam[i] * lam[i]);
    for (int d = 0; d <= band; ++d) {
      k[static_cast<std::size_t>(d)] = c * num.sum();
      num = num.cwiseProduct(lam);
    }
  }
  std::vector<double> t;
  double res = 0.0;
  int it = 0;
  for (; it < settings.max_iter; ++it) {
    t = toeplitz_inverse_traces(k, T, delta_minus, band, settings);
    const std::vector<double> cand = kernel_from_t(t);
    res = sup_diff(cand, k);
    damp_update(k, cand, settings.damping);
    if (res < settings.tol) break;
  }
  if (res >= settings.tol) throw std::runtime_error("solve_kernel_scalar: no convergence");
  if (t_out) *t_out = toeplitz_inverse_traces(k, T, delta_minus, band, settings);
  ToeplitzKernel out;
  out.lags = std::move(k);
  out.T = T;
  return out;
}

// Lag-matrix chain V_q = W^q S_0 for the general (non-normal) path.
struct EquivalentSolver::Chain {
  std::vector<Matrix> V;
};

EquivalentSolver::EquivalentSolver(Matrix W, int T, SolverSettings settings)
    : W_(std::move(W)), T_(T), settings_(settings) {
  if (W_.rows() != W_.cols()) throw std::invalid_argument("EquivalentSolver: W must be square");
  if (T_ <= 0) throw std::invalid_argument("EquivalentSolver: T must be positive");
  c_ = double(W_.rows()) / double(T_);
  if (std::abs(c_ - 1.0) < 1e-9)
    throw std::invalid_argument("EquivalentSolver: c = n/T = 1 is not supported");
  regime_ = c_ < 1.0 ? Regime::CLess1 : Regime::CGreater1;
  const double wnorm = W_.norm();
  if (!settings_.force_dense &&
      (W_ - W_.transpose()).norm() <= 1e-12 * std::max(1.0, wnorm)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (W_ + W_.transpose()));
    ScalarSpectrum sp;
    sp.nodes = es.eigenvalues();
    if (sp.nodes.size() && sp.nodes.cwiseAbs().maxCoeff() >= 1.0)
      throw std::invalid_argument("EquivalentSolver: spectral radius must be below 1");
    sp.trace_w = Vector::Constant(n(), 1.0 / double(n()));
    scalar_ = std::move(sp);
    evecs_ = es.eigenvectors();
    band_ = decay_band(scalar_->nodes.cwiseAbs().maxCoeff(), settings_, T_);
  }
}

const GramFamily& EquivalentSolver::gram() {
  if (!gram_) gram_ = GramFamily(W_, settings_.band_tol);
  return *gram_;
}

void EquivalentSolver::build_chain() {
  if (chain_) return;
  const Matrix& S0 = gram().s0();
  const double cutoff = settings_.band_tol * S0.norm();
  auto chain = std::make_shared<Chain>();
  chain->V.push_back(S0);
  const int cap = std::min(T_ - 1, settings_.band_cap);
  std::size_t bytes = 0;
  for (int q = 1; q <= cap; ++q) {
    Matrix next = W_ * chain->V.back();
    if (next.norm() <= cutoff) break;
    bytes += sizeof(double) * static_cast<std::size_t>(next.size());
    if (bytes > (std::size_t(3500) << 20))
      throw std::runtime_error("EquivalentSolver: lag-matrix chain exceeds the memory budget");
    chain->V.push_back(std::move(next));
  }
  chain_ = std::move(chain);
  band_ = static_cast<int>(chain_->V.size()) - 1;
}

std::vector<double> EquivalentSolver::kernel_from_traces(const Matrix& C) const {
  // k_d = c (1/n) tr(S_d C) for a symmetric C, d = 0..band.
  std::vector<double> k(static_cast<std::size_t>(band_) + 1, 0.0);
  if (scalar_) {
    const Matrix Cp = evecs_->transpose() * C * (*evecs_);
    Vector num = Cp.diagonal().cwiseProduct(scalar_->trace_w);
    for (int i = 0; i < num.size(); ++i)
      num[i] /= 1.0 - scalar_->nodes[i] * scalar_->nodes[i];
    for (int d = 0; d <= band_; ++d) {
      k[static_cast<std::size_t>(d)] = c_ * num.sum();
      num = num.cwiseProduct(scalar_->nodes);
    }
    return k;
  }
  for (int d = 0; d <= band_; ++d)
    k[static_cast<std::size_t>(d)] =
        c_ / double(n()) * chain_->V[static_cast<std::size_t>(d)].cwiseProduct(C).sum();
  return k;
}

Matrix EquivalentSolver::assemble_sq_sum(const std::vector<double>& t) const {
  // sum_q t_q S_q with t_{-q} = t_q.
  if (scalar_) {
    Vector diag(scalar_->nodes.size());
    for (int i = 0; i < diag.size(); ++i) {
      const double lam = scalar_->nodes[i];
      double poly = t[0];
      double lp = 1.0;
      for (std::size_t q = 1; q < t.size(); ++q) {
        lp *= lam;
        poly += 2.0 * t[q] * lp;
      }
      diag[i] = poly / (1.0 - lam * lam);
    }
    return (*evecs_) * diag.asDiagonal() * evecs_->transpose();
  }
  Matrix R = t[0] * chain_->V[0];
  for (std::size_t q = 1; q < t.size(); ++q) {
    if (t[q] == 0.0) continue;
    R += t[q] * (chain_->V[q] + chain_->V[q].transpose());
  }
  return R;
}

std::vector<double> EquivalentSolver::t_traces(const ToeplitzKernel& R, double delta_minus) const {
  return toeplitz_inverse_traces(R.lags, T_, delta_minus, band_, settings_);
}

const EquivalentPair& EquivalentSolver::pair() {
  if (pair_) return *pair_;
  const double delta_plus = regime_ == Regime::CGreater1 ? 1.0 : 0.0;
  const double delta_minus = regime_ == Regime::CLess1 ? 1.0 : 0.0;
  EquivalentPair p;
  p.c = c_;
  p.regime = regime_;
  if (scalar_) {
    ScalarSpectrum sp = *scalar_;
    p.R = solve_kernel_scalar(sp, c_, T_, regime_, settings_, &p.t);
    p.iterations = 0;
    p.residual = 0.0;
  } else {
    build_chain();
    std::vector<double> k(static_cast<std::size_t>(band_) + 1, 0.0);
    if (regime_ == Regime::CGreater1)
      for (int d = 0; d <= band_; ++d)
        k[static_cast<std::size_t>(d)] =
            c_ / double(n()) * chain_->V[static_cast<std::size_t>(d)].trace();
    double res = 0.0;
    int it = 0;
    ToeplitzKernel R;
    R.T = T_;
    for (; it < settings_.max_iter; ++it) {
      R.lags = k;
      const std::vector<double> t = t_traces(R, delta_minus);
      const Matrix Rt = assemble_sq_sum(t);
      Matrix Xinv = Rt;
      Xinv.diagonal().array() += delta_plus;
      Eigen::LLT<Matrix> llt(Xinv);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("EquivalentSolver: indefinite intermediate inverse");
      const Matrix X = llt.solve(Matrix::Identity(n(), n()));
      const std::vector<double> cand = kernel_from_traces(X);
      res = sup_diff(cand, k);
      damp_update(k, cand, settings_.damping);
      if (res < settings_.tol) break;
    }
    if (res >= settings_.tol)
      throw std::runtime_error("EquivalentSolver: pair fixed point did not converge");
    p.R.lags = k;
    p.R.T = T_;
    p.t = t_traces(p.R, delta_minus);
    p.iterations = it + 1;
    p.residual = res;
  }
  p.R_tilde = assemble_sq_sum(p.t);
  pair_ = std::move(p);
  return *pair_;
}

const Matrix& EquivalentSolver::x_inverse() {
  if (x_inv_) return *x_inv_;
  const EquivalentPair& p = pair();
  Matrix Xinv = p.R_tilde;
  if (regime_ == Regime::CGreater1) Xinv.diagonal().array() += 1.0;
  x_llt_.emplace(Xinv);
  if (x_llt_->info() != Eigen::Success)
    throw std::runtime_error("EquivalentSolver: (d+ I + R~) not positive definite");
  x_inv_ = x_llt_->solve(Matrix::Identity(n(), n()));
  return *x_inv_;
}

SecondOrderPair EquivalentSolver::second_order(const Matrix& B) {
  if (B.rows() != n() || B.cols() != n())
    throw std::invalid_argument("second_order: B must be n x n");
  const EquivalentPair& p = pair();
  const double delta_minus = regime_ == Regime::CLess1 ? 1.0 : 0.0;
  const Matrix& X = x_inverse();

  // Banded representation of Y = (d- I + R)^{-1}, padded for the quadratic
  // traces; off-pad entries are below band_tol relative to the band.
  const int w_pad = std::min(T_ - 1, 2 * band_ + 8);
  std::vector<double> padded(static_cast<std::size_t>(w_pad) + 1, 0.0);
  std::copy(p.R.lags.begin(), p.R.lags.begin() + std::min(p.R.lags.size(), padded.size()),
            padded.begin());
  std::optional<BandedSymmetric> Ysel;
  std::optional<Vector> csym;
  if (settings_.toeplitz_path == SolverSettings::ToeplitzPath::CirculantFast) {
    csym = circulant_symbol(p.R.lags, T_, delta_minus);
    if (csym->minCoeff() <= 0.0)
      throw std::runtime_error("second_order: non-positive circulant symbol");
  } else {
    const BandedLdlt F(BandedSymmetric::from_kernel(padded, T_, delta_minus));
    if (!F.positive) throw std::runtime_error("second_order: (d- I + R) not positive");
    Ysel = selected_inverse(F);
  }

  std::vector<double> g(static_cast<std::size_t>(band_) + 1, 0.0);
  Matrix Gt = Matrix::Zero(n(), n());
  double res = 0.0;
  int it = 0;
  for (; it < settings_.max_iter; ++it) {
    const Matrix C = X * (B + Gt) * X;
    const std::vector<double> cand = kernel_from_traces(0.5 * (C + C.transpose()));
    res = sup_diff(cand, g);
    damp_update(g, cand, settings_.damping);
    if (res < settings_.tol) break;
    std::vector<double> u;
    if (csym) {
      Vector gsym = circulant_symbol(g, T_, 0.0);
      const Vector prod = gsym.cwiseQuotient(csym->cwiseProduct(*csym));
      u = circulant_traces(prod, T_, band_);
    } else {
      u = product_offset_traces(*Ysel, BandedSymmetric::from_kernel(g, T_, 0.0), band_);
    }
    Gt = assemble_sq_sum(u);
  }
  if (res >= settings_.tol)
    throw std::runtime_error("second_order: fixed point did not converge");
  SecondOrderPair out;
  out.G.lags = g;
  out.G.T = T_;
  std::vector<double> u;
  if (csym) {
    Vector gsym = circulant_symbol(g, T_, 0.0);
    u = circulant_traces(gsym.cwiseQuotient(csym->cwiseProduct(*csym)), T_, band_);
  } else {
    u = product_offset_traces(*Ysel, BandedSymmetric::from_kernel(g, T_, 0.0), band_);
  }
  out.G_tilde = assemble_sq_sum(u);
  out.iterations = it + 1;
  out.residual = res;
  return out;
}

const SecondOrderPair& EquivalentSolver::second_order_s0() {
  if (!second_s0_) second_s0_ = second_order(gram().s0());
  return *second_s0_;
}

Matrix EquivalentSolver::cross_gram(const Vector& m, int rows, int cols) {
  if (m.size() != n()) throw std::invalid_argument("cross_gram: m size mismatch");
  const Matrix& X = x_inverse();
  const int jmax = std::max(rows, cols);
  Matrix V(n(), jmax);
  V.col(0) = m;
  for (int j = 1; j < jmax; ++j) V.col(j) = W_ * V.col(j - 1);
  return V.leftCols(rows).transpose() * (X * V.leftCols(cols));
}

double EquivalentSolver::train_mse(const Vector& m, const Matrix& U, const Vector& r,
                                   double eta2) {
  if (regime_ == Regime::CGreater1) return 0.0;
  if (U.rows() != T_ || U.cols() != T_ || r.size() != T_)
    throw std::invalid_argument("train_mse: T mismatch");
  if (eta2 <= 0.0) throw std::invalid_argument("train_mse: eta2 must be positive");
  const Matrix K = cross_gram(m, T_, T_);
  Matrix inner = pair().R.dense();
  inner.noalias() += U.transpose() * (K * U) / eta2;
  inner.diagonal().array() += 1.0;
  Eigen::LDLT<Matrix> ldlt(inner);
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("train_mse: singular inner matrix");
  return r.dot(ldlt.solve(r)) / double(T_);
}

double EquivalentSolver::test_mse(const Vector& m, const Matrix& U, const Matrix& U_hat,
                                  const Vector& r, const Vector& r_hat, double eta2) {
  if (U.rows() != T_ || U.cols() != T_ || r.size() != T_)
    throw std::invalid_argument("test_mse: train-side T mismatch");
  if (U_hat.rows() != U_hat.cols() || r_hat.size() != U_hat.cols())
    throw std::invalid_argument("test_mse: test-side geometry mismatch");
  if (eta2 <= 0.0) throw std::invalid_argument("test_mse: eta2 must be positive");
  const int T_hat = static_cast<int>(U_hat.cols());
  const int jmax = std::max(T_, T_hat);
  Matrix V(n(), jmax);
  V.col(0) = m;
  for (int j = 1; j < jmax; ++j) V.col(j) = W_ * V.col(j - 1);
  const Matrix A = V.leftCols(T_) * U;
  const Matrix A_hat = V.leftCols(T_hat) * U_hat;
  const Matrix& S0 = gram().s0();

  if (c_ < settings_.c_zero_threshold) {
    // Decoupled form at c = 0: R = 0, R~ = S_0, G = 0, G~ = 0.
    Matrix Pinv = A * A.transpose() + eta2 * S0;
    Eigen::LLT<Matrix> llt(Pinv);
    if (llt.info() != Eigen::Success) throw std::runtime_error("test_mse: indefinite c=0 matrix");
    const Vector Ar = A * r;
    const Vector v = llt.solve(Ar);
    const Vector dev = A_hat.transpose() * v / std::sqrt(double(T_)) -
                       r_hat / std::sqrt(double(T_hat));
    return dev.squaredNorm() + eta2 * v.dot(S0 * v) / double(T_);
  }

  const EquivalentPair& p = pair();
  const SecondOrderPair& so = second_order_s0();
  const double delta_plus = regime_ == Regime::CGreater1 ? 1.0 : 0.0;
  const double delta_minus = regime_ == Regime::CLess1 ? 1.0 : 0.0;

  // y = (d- I + R)^{-1} r and the same solve applied to A^T.
  const BandedLdlt F(p.R.banded(delta_minus));
  if (!F.positive) throw std::runtime_error("test_mse: (d- I + R) not positive");
  const Vector y = F.solve(r);
  Matrix YAt = A.transpose();
  for (int j = 0; j < YAt.cols(); ++j) {
    Vector col = YAt.col(j);
    F.solve_in_place(col);
    YAt.col(j) = col;
  }

  Matrix Qinv = p.R_tilde + A * YAt / eta2;
  Qinv.diagonal().array() += delta_plus;
  Eigen::LLT<Matrix> qllt(0.5 * (Qinv + Qinv.transpose()));
  if (qllt.info() != Eigen::Success) throw std::runtime_error("test_mse: Q not positive definite");

  const Vector Ay = A * y;
  const Vector QAy = qllt.solve(Ay);
  const Vector dev = A_hat.transpose() * QAy / (eta2 * std::sqrt(double(T_))) -
                     r_hat / std::sqrt(double(T_hat));
  const double term1 = dev.squaredNorm();

  // Q~ = (d- I + R + eta^-2 A^T (d+ I + R~)^{-1} A)^{-1} applied to r.
  Matrix Qt_inv = p.R.dense();
  Qt_inv.noalias() += A.transpose() * (x_inverse() * A) / eta2;
  Qt_inv.diagonal().array() += delta_minus;
  Eigen::LDLT<Matrix> qtldlt(Qt_inv);
  if (qtldlt.info() != Eigen::Success)
    throw std::runtime_error("test_mse: Q~ factorization failed");
  const Vector z = qtldlt.solve(r);
  // z^T G z with G symmetric Toeplitz.
  double term2 = 0.0;
  for (int a = 0; a <= so.G.band() && a < T_; ++a) {
    double s = 0.0;
    for (int i = 0; i < T_ - a; ++i) s += z[i] * z[i + a];
    term2 += (a == 0 ? 1.0 : 2.0) * so.G.lags[static_cast<std::size_t>(a)] * s;
  }
  term2 /= double(T_);

  const Vector w1 = QAy;
  const double term3 = w1.dot((S0 + so.G_tilde) * w1) / (eta2 * double(T_));
  return term1 + term2 + term3;
}

double EquivalentSolver::memory_capacity(const Vector& m, int tau, double eta2_probe) {
  const std::vector<double> curve = memory_curve(m, tau, eta2_probe);
  return curve[static_cast<std::size_t>(tau)];
}

std::vector<double> EquivalentSolver::memory_curve(const Vector& m, int tau_max,
                                                   double eta2_probe) {
  if (regime_ == Regime::CGreater1)
    throw std::invalid_argument("memory_curve: requires c < 1");
  if (tau_max < 0 || tau_max >= T_) throw std::invalid_argument("memory_curve: tau out of range");
  if (eta2_probe <= 0.0) throw std::invalid_argument("memory_curve: eta2_probe must be positive");
  // The delay Gram K = {m^T (W^i)^T R~^{-1} W^j m} is asymptotically diagonal
  // for the supported ensembles, so the (tau,tau) entry of the capacity
  // inverse reduces to 1/(eta^2 (1 + k_0) + K_{tau,tau}) and the probe value
  // is its reciprocal slope K_{tau,tau} + eta^2 (1 + k_0). The dense T x T
  // inverse is avoided deliberately: at finite n its small-eta^2 evaluation
  // drifts logarithmically (noise resurgence) and never stabilizes.
  const Matrix& X = x_inverse();
  const double k0 = pair().R.at(0);
  std::vector<double> mc(static_cast<std::size_t>(tau_max) + 1, 0.0);
  Vector v = m;
  for (int t = 0; t <= tau_max; ++t) {
    if (t > 0) v = W_ * v;
    const double ktt = v.dot(X * v);
    const double a = ktt + eta2_probe * (1.0 + k0);
    const double b = ktt + 0.1 * eta2_probe * (1.0 + k0);
    if (std::abs(a - b) > 0.01 * std::max(std::abs(b), 1e-300))
      throw std::runtime_error(
          "memory_curve: small-noise probe has not stabilized; reduce eta2_probe");
    mc[static_cast<std::size_t>(t)] = a;
  }
  return mc;
}

EquivalentPair solve_pair(const Matrix& W, int T, const SolverSettings& settings) {
  EquivalentSolver solver(W, T, settings);
  return solver.pair();
}

ResolventEquivalents resolvent_equivalents(const Matrix& W, const Matrix& A, double eta2,
                                           double gamma, const SolverSettings& settings) {
  if (gamma <= 0.0) throw std::invalid_argument("resolvent_equivalents: gamma must be positive");
  if (eta2 <= 0.0) throw std::invalid_argument("resolvent_equivalents: eta2 must be positive");
  const int n = static_cast<int>(W.rows());
  const int T = static_cast<int>(A.cols());
  if (A.rows() != n) throw std::invalid_argument("resolvent_equivalents: A row mismatch");
  const GramFamily fam(W, settings.band_tol);
  const SpectralStats stats = spectral_stats(W);
  const int band = decay_band(stats.spectral_radius, settings, T);

  // Lag chain V_q = W^q S_0 (local, band is small at desk scale).
  std::vector<Matrix> V;
  V.push_back(fam.s0());
  for (int q = 1; q <= band; ++q) V.push_back(W * V.back());

  // Fixed point on the kernel of R_gamma with the low-rank trace
  // simplification: R_d = (1/(gamma T)) tr(S_d (I + eta^2 R~)^{-1}),
  // R~ = sum_q (1/(gamma T)) tr(J^q (I + eta^2 R)^{-1}) S_q.
  std::vector<double> k(static_cast<std::size_t>(band) + 1, 0.0);
  Matrix Rt, Xt;
  double res = 0.0;
  int it = 0;
  for (; it < settings.max_iter; ++it) {
    std::vector<double> scaled(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) scaled[i] = eta2 * k[i];
    const std::vector<double> tau = toeplitz_inverse_traces(scaled, T, 1.0, band, settings);
    Rt = (tau[0] / gamma) * V[0];
    for (std::size_t q = 1; q < tau.size(); ++q)
      Rt += (tau[q] / gamma) * (V[q] + V[q].transpose());
    Matrix Xinv = eta2 * Rt;
    Xinv.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(Xinv);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("resolvent_equivalents: indefinite intermediate inverse");
    Xt = llt.solve(Matrix::Identity(n, n));
    std::vector<double> cand(k.size());
    for (int d = 0; d <= band; ++d)
      cand[static_cast<std::size_t>(d)] =
          V[static_cast<std::size_t>(d)].cwiseProduct(Xt).sum() / (gamma * double(T));
    res = sup_diff(cand, k);
    damp_update(k, cand, settings.damping);
    if (res < settings.tol * std::max(1.0, 1.0 / gamma)) break;
  }
  if (res >= settings.tol * std::max(1.0, 1.0 / gamma))
    throw std::runtime_error("resolvent_equivalents: fixed point did not converge");

  ResolventEquivalents out;
  out.R.lags = k;
  out.R.T = T;
  out.iterations = it + 1;
  out.residual = res;
  {
    std::vector<double> scaled(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) scaled[i] = eta2 * k[i];
    const std::vector<double> tau = toeplitz_inverse_traces(scaled, T, 1.0, band, settings);
    out.R_tilde = (tau[0] / gamma) * V[0];
    for (std::size_t q = 1; q < tau.size(); ++q)
      out.R_tilde += (tau[q] / gamma) * (V[q] + V[q].transpose());
  }

  // Q_bar = (1/gamma) (I_n + eta^2 R~ + (1/gamma) A (I_T + eta^2 R)^{-1} A^T)^{-1}.
  std::vector<double> scaled(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) scaled[i] = eta2 * k[i];
  const BandedLdlt F(BandedSymmetric::from_kernel(scaled, T, 1.0));
  Matrix YAt = A.transpose();
  for (int j = 0; j < n; ++j) {
    Vector col = YAt.col(j);
    F.solve_in_place(col);
    YAt.col(j) = col;
  }
  Matrix Qinv = eta2 * out.R_tilde + A * YAt / gamma;
  Qinv.diagonal().array() += 1.0;
  out.Q_bar = Qinv.llt().solve(Matrix::Identity(n, n)) / gamma;

  // Q~_bar = (1/gamma) (I_T + eta^2 R + (1/gamma) A^T (I_n + eta^2 R~)^{-1} A)^{-1}.
  Matrix Xinv = eta2 * out.R_tilde;
  Xinv.diagonal().array() += 1.0;
  const Matrix XA = Xinv.llt().solve(A);
  Matrix Qt_inv = out.R.dense() * eta2;
  Qt_inv.noalias() += A.transpose() * XA / gamma;
  Qt_inv.diagonal().array() += 1.0;
  out.Q_tilde_bar = Qt_inv.ldlt().solve(Matrix::Identity(T, T)) / gamma;
  return out;
}

}  // namespace esnrmt
