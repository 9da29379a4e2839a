#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "esnrmt/banded.hpp"
#include "esnrmt/esn.hpp"

namespace esnrmt {

// Symmetric Toeplitz kernel: lag values k_0..k_band of a T x T matrix.
struct ToeplitzKernel {
  std::vector<double> lags;  // lags[q] = k_q = k_{-q}
  int T = 0;

  int band() const { return static_cast<int>(lags.size()) - 1; }
  double at(int q) const {
    const int a = q < 0 ? -q : q;
    return a < static_cast<int>(lags.size()) ? lags[a] : 0.0;
  }
  Matrix dense() const;
  BandedSymmetric banded(double shift) const;  // shift*I + Toeplitz(lags)
};

enum class Regime { CLess1, CGreater1 };

struct SolverSettings {
  double tol = 1e-10;        // sup-norm stop on the kernel update
  int max_iter = 1000;
  double damping = 0.5;      // new = (1-d)*candidate + d*old
  double band_tol = 1e-10;   // relative lag-matrix cutoff for the kernel band
  int band_cap = 4096;
  double c_zero_threshold = 0.01;  // below this c the decoupled formulas apply
  int quadrature_points = 128;
  enum class ToeplitzPath { DenseExact, CirculantFast };
  ToeplitzPath toeplitz_path = ToeplitzPath::DenseExact;
  bool force_dense = false;  // skip the scalar backend for symmetric W (cross-checks)
};

// First-order pair (R, R_tilde): R is a T x T Toeplitz kernel, R_tilde n x n,
// solving R_ij = c (1/n) tr(S_{i-j} (d+ I + R_tilde)^{-1}) and
// R_tilde = sum_q (1/T) tr(J^q (d- I + R)^{-1}) S_q, with d+ = [c>1], d- = [c<1].
struct EquivalentPair {
  ToeplitzKernel R;
  Matrix R_tilde;
  std::vector<double> t;  // offset traces of (d- I + R)^{-1}, lags 0..band
  double c = 0.0;
  Regime regime = Regime::CLess1;
  int iterations = 0;
  double residual = 0.0;
};

// Second-order pair (G, G_tilde) for a symmetric source B:
// G_ij = c (1/n) tr(S_{i-j} X [B + G_tilde] X), X = (d+ I + R_tilde)^{-1},
// G_tilde = sum_q (1/T) tr(J^q Y G Y) S_q,   Y = (d- I + R)^{-1}.
struct SecondOrderPair {
  ToeplitzKernel G;
  Matrix G_tilde;
  int iterations = 0;
  double residual = 0.0;
};

// Finite-gamma deterministic equivalents of the resolvents
// Q = (XX^T/T + gamma I)^{-1}, Q~ = (X^T X/T + gamma I)^{-1} for states
// X = sqrt(T)(A + Z) with noise level eta.
struct ResolventEquivalents {
  ToeplitzKernel R;   // R_gamma
  Matrix R_tilde;     // n x n
  Matrix Q_bar;       // n x n deterministic equivalent of Q
  Matrix Q_tilde_bar; // T x T deterministic equivalent of Q~
  int iterations = 0;
  double residual = 0.0;
};

// Scalar spectral backend for normal W: everything in the fixed point reduces
// to weighted sums over eigenvalues (empirical or limiting measure).
struct ScalarSpectrum {
  Vector nodes;     // eigenvalues / quadrature nodes, |node| < 1
  Vector trace_w;   // weights of (1/n) tr, sum 1
  Vector m_w;       // weights of m^T f(W) m (squared eigenbasis coefficients)
};

ScalarSpectrum empirical_spectrum(const Matrix& W_symmetric, const Vector& m);
ScalarSpectrum measure_spectrum(const SpectralMeasure& mu, int points);

// Solves the first-order fixed point and the error formulas built on it.
// Caches per (W, T): the Gram family, the lag-matrix chain (general W) or the
// eigendecomposition (symmetric W), the solved pair, and the second-order
// pair with source S_0.
class EquivalentSolver {
 public:
  EquivalentSolver(Matrix W, int T, SolverSettings settings = {});

  int n() const { return static_cast<int>(W_.rows()); }
  int T() const { return T_; }
  double c() const { return c_; }
  Regime regime() const { return regime_; }
  bool symmetric_path() const { return scalar_.has_value(); }
  const SolverSettings& settings() const { return settings_; }
  const GramFamily& gram();

  const EquivalentPair& pair();
  const SecondOrderPair& second_order_s0();
  SecondOrderPair second_order(const Matrix& B);

  // K_{ij} = m^T (W^i)^T (d+ I + R_tilde)^{-1} W^j m, i < rows, j < cols.
  Matrix cross_gram(const Vector& m, int rows, int cols);

  // (1/T) r^T (I_T + R + eta^-2 U^T K U)^{-1} r (zero when c > 1).
  double train_mse(const Vector& m, const Matrix& U, const Vector& r, double eta2);

  // Three-term quadratic-form test error using (pair, second order, inputs).
  double test_mse(const Vector& m, const Matrix& U, const Matrix& U_hat, const Vector& r,
                  const Vector& r_hat, double eta2);

  // Small-noise capacity probe K_{tau,tau} + eta2 (1 + k_0), the stable
  // diagonal reduction of 1 / [(eta2 (I + R) + K)^{-1}]_{tau+1,tau+1}, with a
  // stability check at eta2/10 (throws if the two probes disagree by > 1%).
  double memory_capacity(const Vector& m, int tau, double eta2_probe = 1e-8);
  std::vector<double> memory_curve(const Vector& m, int tau_max, double eta2_probe = 1e-8);

 private:
  struct Chain;  // lag matrices W^q S_0 for the general path

  void build_chain();
  const Matrix& x_inverse();  // (d+ I + R_tilde)^{-1}
  // k_d = c (1/n) tr(S_d C) for symmetric C, d = 0..band.
  std::vector<double> kernel_from_traces(const Matrix& C) const;
  // sum_q t_q S_q with t_{-q} = t_q.
  Matrix assemble_sq_sum(const std::vector<double>& t) const;
  std::vector<double> t_traces(const ToeplitzKernel& R, double delta_minus) const;

  Matrix W_;
  int T_ = 0;
  double c_ = 0.0;
  Regime regime_ = Regime::CLess1;
  SolverSettings settings_;
  std::optional<GramFamily> gram_;
  std::optional<ScalarSpectrum> scalar_;
  std::optional<Matrix> evecs_;
  std::shared_ptr<Chain> chain_;
  std::optional<EquivalentPair> pair_;
  std::optional<SecondOrderPair> second_s0_;
  std::optional<Matrix> x_inv_;
  std::optional<Eigen::LLT<Matrix>> x_llt_;
  int band_ = 0;
};

EquivalentPair solve_pair(const Matrix& W, int T, const SolverSettings& settings = {});

ResolventEquivalents resolvent_equivalents(const Matrix& W, const Matrix& A, double eta2,
                                           double gamma, const SolverSettings& settings = {});

// Scalar-backend kernel fixed point: k_d = c * integral of
// t^|d| / (sum_q t_q t^|q|) over the spectrum (c < 1 form; d+ handled for
// c > 1). Shared by the symmetric solver path and the measure-based solver.
ToeplitzKernel solve_kernel_scalar(const ScalarSpectrum& spectrum, double c, int T,
                                   Regime regime, const SolverSettings& settings,
                                   std::vector<double>* t_out = nullptr);

// (1/T) sum_i B_{i,i+q} for a dense matrix.
double offset_trace(const Matrix& B, int q);

}  // namespace esnrmt
