#include "esnrmt/esn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace esnrmt {

Reservoir::Reservoir(Matrix W_, Vector m_, double eta2_)
    : W(std::move(W_)), m(std::move(m_)), eta2(eta2_) {
  if (W.rows() != W.cols()) throw std::invalid_argument("Reservoir: W must be square");
  if (m.size() != W.rows()) throw std::invalid_argument("Reservoir: m size mismatch");
  if (eta2 < 0.0) throw std::invalid_argument("Reservoir: eta2 must be nonnegative");
  stats = spectral_stats(W);
  if (stats.spectral_radius >= 1.0)
    throw std::invalid_argument("Reservoir: spectral radius must be below 1");
  norm_warning = stats.operator_norm >= 1.0;
}

GramFamily::GramFamily(Matrix W, double tol) : W_(std::move(W)), tol_(tol) {
  if (W_.rows() != W_.cols()) throw std::invalid_argument("GramFamily: W must be square");
  const int n = static_cast<int>(W_.rows());
  // Doubling on S = I + W S W^T: S_k = sum_{j<2^k} W^j (W^j)^T, P_k = W^{2^k}.
  Matrix S = Matrix::Identity(n, n);
  Matrix P = W_;
  const double scale0 = std::sqrt(double(n));
  for (int it = 0; it < 100; ++it) {
    const double pnorm = P.norm();
    if (pnorm * pnorm < 1e-17) break;
    if (pnorm > 1e8 * scale0)
      throw std::runtime_error("GramFamily: series diverges (spectral radius >= 1?)");
    S += P * S * P.transpose();
    P = P * P;
  }
  S0_ = 0.5 * (S + S.transpose());
  residual_ = (S0_ - Matrix::Identity(n, n) - W_ * S0_ * W_.transpose()).norm();
}

int GramFamily::q_max() const {
  if (q_max_ >= 0) return q_max_;
  Matrix P = W_;
  int q = 1;
  const int cap = 20000;
  while (P.squaredNorm() >= tol_ && q < cap) {
    P = P * W_;
    ++q;
  }
  if (q >= cap) throw std::runtime_error("GramFamily: power decay too slow for q_max");
  q_max_ = q - 1;  // last lag whose W^q is still above tol, 0 when W itself is below
  return q_max_;
}

const Matrix& GramFamily::power(int q) const {
  if (q < 0) throw std::invalid_argument("GramFamily: power wants q >= 0");
  auto it = powers_.find(q);
  if (it != powers_.end()) return it->second;
  if (powers_.empty()) {
    const int n = static_cast<int>(W_.rows());
    powers_.emplace(0, Matrix::Identity(n, n));
    powers_.emplace(1, W_);
    if (q <= 1) return powers_.at(q);
  }
  auto below = powers_.upper_bound(q);
  --below;
  Matrix P = below->second;
  for (int p = below->first; p < q; ++p) P = P * W_;
  // Cache while the total stays modest; recompute from the nearest power
  // otherwise.
  const std::size_t bytes = powers_.size() * sizeof(double) * W_.size();
  if (bytes < (std::size_t(256) << 20)) return powers_.emplace(q, std::move(P)).first->second;
  powers_.rbegin()->second = std::move(P);
  return powers_.rbegin()->second;
}

Matrix GramFamily::s_q(int q) const {
  if (q >= 0) return S0_ * power(q).transpose();
  return power(-q) * S0_;
}

GramFamily gram_family(const Matrix& W, double tol) { return GramFamily(W, tol); }

void simulate_state_parts(const Matrix& W, const Vector& m, const GramFamily& gram,
                          const Series& u, int T, std::uint64_t seed, Matrix& input_part,
                          Matrix& noise_part) {
  const int n = static_cast<int>(W.rows());
  if (T <= 0) throw std::invalid_argument("simulate_state_parts: T must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Unit-noise component: stationary start z ~ N(0, S_0), then
  // z_{t+1} = W z_t + e_{t+1}.
  Eigen::LLT<Matrix> llt(gram.s0());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("simulate_state_parts: S_0 not positive definite");
  Vector g(n);
  for (int i = 0; i < n; ++i) g[i] = normal(rng);
  Vector z = llt.matrixL() * g;
  noise_part.resize(n, T);
  for (int t = 0; t < T; ++t) {
    Vector e(n);
    for (int i = 0; i < n; ++i) e[i] = normal(rng);
    z = W * z + e;
    noise_part.col(t) = z;
  }

  // Input component accumulated over the stored history, zero before it.
  input_part.resize(n, T);
  Vector x = Vector::Zero(n);
  for (int t = -u.history; t < T; ++t) {
    x = W * x + m * u.at(t);
    if (t >= 0) input_part.col(t) = x;
  }
}

Matrix simulate_states(const Reservoir& res, const GramFamily& gram, const Series& u, int T,
                       std::uint64_t seed, InitMode init, int washout_k) {
  const double eta = std::sqrt(res.eta2);
  if (init == InitMode::Stationary) {
    Matrix D, N;
    simulate_state_parts(res.W, res.m, gram, u, T, seed, D, N);
    return D + eta * N;
  }
  // Washout: K noisy steps from the zero state before recording.
  int K = washout_k;
  if (K < 0) {
    const double rho = res.stats.spectral_radius;
    K = rho <= 0.0 ? 1 : static_cast<int>(std::ceil(std::log(1e-12) / std::log(rho)));
  }
  const int n = res.n();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x = Vector::Zero(n);
  Matrix X(n, T);
  for (int t = -K; t < T; ++t) {
    Vector e(n);
    for (int i = 0; i < n; ++i) e[i] = normal(rng);
    x = res.W * x + res.m * u.at(t) + eta * e;
    if (t >= 0) X.col(t) = x;
  }
  return X;
}

InputMatrices input_matrices(const Matrix& W, const Vector& m, const Series& u, int T) {
  if (T <= 0) throw std::invalid_argument("input_matrices: T must be positive");
  const int n = static_cast<int>(W.rows());
  InputMatrices out;
  out.M.resize(n, T);
  out.M.col(0) = m;
  for (int j = 1; j < T; ++j) out.M.col(j) = W * out.M.col(j - 1);
  out.U.resize(T, T);
  const double scale = 1.0 / std::sqrt(double(T));
  for (int j = 0; j < T; ++j)
    for (int i = 0; i < T; ++i) out.U(i, j) = u.at(j - i) * scale;
  out.A = out.M * out.U;
  return out;
}

Vector train_readout(const Matrix& X, const Vector& r) {
  if (X.cols() != r.size()) throw std::invalid_argument("train_readout: size mismatch");
  Eigen::BDCSVD<Matrix> svd(X.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-12);
  return svd.solve(r);
}

double train_mse(const Matrix& X, const Vector& r, const Vector& omega) {
  return (r - X.transpose() * omega).squaredNorm() / double(r.size());
}

double test_mse(const Matrix& X_hat, const Vector& r_hat, const Vector& omega) {
  return (r_hat - X_hat.transpose() * omega).squaredNorm() / double(r_hat.size());
}

double resolvent_train_mse(const Matrix& X, const Vector& r, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("resolvent_train_mse: gamma must be positive");
  const int T = static_cast<int>(X.cols());
  Matrix G = X.transpose() * X / double(T);
  G.diagonal().array() += gamma;
  Eigen::LDLT<Matrix> ldlt(G);
  return gamma * r.dot(ldlt.solve(r)) / double(T);
}

RidgeResult ridge_baseline(const Matrix& W, const Vector& m, const Episode& ep, int T, int T_hat,
                           double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("ridge_baseline: gamma must be positive");
  const auto train = input_matrices(W, m, ep.u, T);
  const auto test = input_matrices(W, m, ep.u_hat, T_hat);
  const Matrix X = std::sqrt(double(T)) * train.A;
  const Matrix X_hat = std::sqrt(double(T_hat)) * test.A;
  Matrix G = X.transpose() * X;
  G.diagonal().array() += gamma * double(T);
  const Vector omega = X * Eigen::LDLT<Matrix>(G).solve(ep.r);
  RidgeResult out;
  out.train_mse = train_mse(X, ep.r, omega);
  out.test_mse = test_mse(X_hat, ep.r_hat, omega);
  return out;
}

double nmse(double mse, const Vector& r) {
  const double power = r.squaredNorm() / double(r.size());
  if (power <= 0.0) throw std::invalid_argument("nmse: target has zero power");
  return mse / power;
}

}  // namespace esnrmt
