#pragma once

#include <cstdint>
#include <map>

#include "esnrmt/ensembles.hpp"

namespace esnrmt {

// Scalar time series with an optional stretch of pre-window history.
// Sample t lives at data[t + history]; indices outside the stored range
// read as zero.
struct Series {
  Vector data;
  int history = 0;

  int length() const { return static_cast<int>(data.size()) - history; }
  double at(int t) const {
    const int i = t + history;
    return (i >= 0 && i < data.size()) ? data[i] : 0.0;
  }
};

// Train/test windows of one task instance. r has T samples aligned with
// u's window [0, T); r_hat has T_hat samples aligned with u_hat's window.
struct Episode {
  Series u;
  Vector r;
  Series u_hat;
  Vector r_hat;
};

// Leaky-free linear reservoir x_{t+1} = W x_t + m u_{t+1} + eta e_{t+1}.
// Construction verifies spectral radius < 1 and warns (via warning flag)
// when the operator norm reaches 1.
struct Reservoir {
  Matrix W;
  Vector m;
  double eta2 = 0.0;
  SpectralStats stats;
  bool norm_warning = false;

  Reservoir(Matrix W_, Vector m_, double eta2_);
  int n() const { return static_cast<int>(W.rows()); }
};

// S_0 = sum_k W^k (W^k)^T together with the shifted family
// S_q = W^{(-q)^+} S_0 (W^T)^{q^+}. S_0 is computed by doubling on the
// Lyapunov equation S_0 = I + W S_0 W^T.
class GramFamily {
 public:
  GramFamily() = default;
  GramFamily(Matrix W, double tol = 1e-10);

  const Matrix& w() const { return W_; }
  const Matrix& s0() const { return S0_; }
  double lyapunov_residual() const { return residual_; }
  double tol() const { return tol_; }

  // Largest q with ||W^q||_F^2 >= tol, 0 when W is already below tol
  // (computed on demand, capped).
  int q_max() const;
  // S_q, with powers of W memoized up to a memory cap.
  Matrix s_q(int q) const;
  const Matrix& power(int q) const;  // W^q

 private:
  Matrix W_, S0_;
  double residual_ = 0.0;
  double tol_ = 1e-10;
  mutable std::map<int, Matrix> powers_;
  mutable int q_max_ = -1;
};

GramFamily gram_family(const Matrix& W, double tol = 1e-10);

enum class InitMode {
  Stationary,  // exact stationary draw for the noise component
  Washout,     // K noisy steps from the zero state before recording
};

// States x_0..x_{T-1} as columns. Stationary mode draws the noise component
// of the initial state from its exact stationary law N(0, eta^2 S_0); the
// input component is accumulated over the series' stored history. Washout
// mode instead runs washout_k noisy steps from zero (default: enough steps
// for rho(W)^K < 1e-12).
Matrix simulate_states(const Reservoir& res, const GramFamily& gram, const Series& u, int T,
                       std::uint64_t seed, InitMode init = InitMode::Stationary,
                       int washout_k = -1);

// Deterministic part D (driven by u, zero noise) and unit-noise part N of the
// same simulation, so that states for any eta are D + eta*N column-wise.
void simulate_state_parts(const Matrix& W, const Vector& m, const GramFamily& gram,
                          const Series& u, int T, std::uint64_t seed, Matrix& input_part,
                          Matrix& noise_part);

// M = [m, Wm, ..., W^{T-1} m], U_{ij} = u_{j-i}/sqrt(T) (i,j = 0..T-1),
// A = M U. Columns of sqrt(T)*A reproduce the noiseless states driven by u
// with history truncated at T-1 lags.
struct InputMatrices {
  Matrix M, U, A;
};

InputMatrices input_matrices(const Matrix& W, const Vector& m, const Series& u, int T);

// Minimum-norm least-squares readout for X^T w ~ r via SVD with singular
// values below 1e-12 * sigma_max treated as zero.
Vector train_readout(const Matrix& X, const Vector& r);

double train_mse(const Matrix& X, const Vector& r, const Vector& omega);
double test_mse(const Matrix& X_hat, const Vector& r_hat, const Vector& omega);

// gamma * (1/T) r^T (X^T X / T + gamma I)^{-1} r; converges to the training
// error as gamma drops to zero.
double resolvent_train_mse(const Matrix& X, const Vector& r, double gamma);

// Noiseless ridge regression on X = sqrt(T) A with Gram regularization
// X (X^T X + gamma T I)^{-1} r. Returns exact train/test errors.
struct RidgeResult {
  double train_mse = 0.0;
  double test_mse = 0.0;
};

RidgeResult ridge_baseline(const Matrix& W, const Vector& m, const Episode& ep, int T, int T_hat,
                           double gamma);

double nmse(double mse, const Vector& r);

}  // namespace esnrmt
