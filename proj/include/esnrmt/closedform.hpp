#pragma once

#include "esnrmt/deteq.hpp"

namespace esnrmt {

// Limiting diagonal profile D_ii (i = 0..T-1) of the whitened input-memory
// matrix for orthogonally invariant ensembles:
//   Haar: (1-sigma^2) sigma^{2i};
//   MultiMemory: sum_j c_j sigma_j^{2i} / sum_j c_j/(1-sigma_j^2).
Vector invariant_profile(const MatrixSpec& spec, int T);

// Limiting memory capacity at delay tau for invariant ensembles (c < 1).
double mc_closed(const MatrixSpec& spec, double c, int tau);

// Memory capacity from a sampled bi-orthogonally invariant W:
// (1/(1-c)) (1/n) tr(W^tau (W^tau)^T S_0^{-1}).
double invariant_mc_trace(const GramFamily& gram, double c, int tau);

// Fisher memory curve f(k) = (1/eta^2) m^T (W^k)^T S_0^{-1} W^k m.
// For invariant W, MC(tau) = eta^2 f(tau) / (1-c).
double fisher_memory(const GramFamily& gram, const Vector& m, int k, double eta2);

// Train error (1-c) (1/T) r^T (I + eta^-2 U^T diag(D) U)^{-1} r  (c < 1).
double train_mse_invariant(const Vector& D, double c, const Matrix& U, const Vector& r,
                           double eta2);

// Test error for invariant ensembles, c < 1:
// ||(1/(eta^2 sqrt(T))) U_hat^T Dh U P r - r_hat/sqrt(T_hat)||^2
//   + (1/(1-c)) (1/T) r^T P r - (1/T) r^T P^2 r,  P = (I + eta^-2 U^T D U)^{-1},
// where Dh is the T_hat x T leading-diagonal extension of D.
double test_mse_invariant(const Vector& D, double c, const Matrix& U, const Matrix& U_hat,
                          const Vector& r, const Vector& r_hat, double eta2);

// Unique alpha > 0 with c (1/n) tr S_0 (alpha I + S_0)^{-1} = 1 (c > 1), and
// the variance denominator 1 - c (1/n) tr S_0^2 (alpha I + S_0)^{-2}.
struct AlphaSolution {
  double alpha = 0.0;
  double denominator = 0.0;
};
AlphaSolution solve_alpha(const Matrix& S0, double c);

// Test error for c > 1 from a sampled W: D, Dh, D2 are
// (alpha I + S_0)^{-1}-sandwich Gram matrices of {W^i m}. Training error is 0.
double test_mse_over(const Matrix& W, const Vector& m, const Matrix& S0,
                     const AlphaSolution& alpha, double c, const Matrix& U, const Matrix& U_hat,
                     const Vector& r, const Vector& r_hat, double eta2);

// Haar fast path for c > 1 (diagonal profile (1-sigma^2) sigma^{2i} and
// effective noise c eta^2).
double test_mse_over_haar(double sigma, double c, const Matrix& U, const Matrix& U_hat,
                          const Vector& r, const Vector& r_hat, double eta2);

// Kernel fixed point for normal W via its limiting spectral measure.
ToeplitzKernel normal_kernel(const SpectralMeasure& mu, double c, int T,
                             const SolverSettings& settings = {});

// Train error for W with W^2 = sigma^2 I (two-point spectrum): checkerboard
// kernel r0 sigma^{|i-j|} on even lags plus the rank-two even/odd split of
// {sigma^{i+j}}.
double projection_train_mse(double sigma, double c, const Matrix& U, const Vector& r,
                            double eta2, const SolverSettings& settings = {});

// Train error when the whitened memory matrix is rank one, D = d d^T:
// (1-c) [ ||r||^2 - |d^T U r|^2 / (eta^2 + ||U^T d||^2) ] / T.
double rank_one_train_mse(const Vector& d, double c, const Matrix& U, const Vector& r,
                          double eta2);

// Test error of the linear-functional task r = sqrt(T) U^T b (b supported on
// its leading entries), whitened two-term form, plus the impulsive-noise term
// s2 ||(eta^2 I + C)^{-1} C w||^2 with C = D^1/2 U U^T D^1/2, w = D^-1/2 b.
// robustness_out, if given, receives the impulsive term alone.
double linear_combo_test_mse(const Vector& b, const Vector& D, const Matrix& U,
                             const Matrix& U_hat, double c, double eta2, double impulsive_s2,
                             double* robustness_out = nullptr);

// Train error of the delay-tau task under stationary AR(1) inputs with
// correlation q^{|i-j|}.
double ar_delay_train_mse(const Vector& D, double c, double q, int tau, double eta2);

// Ridge estimate b_hat = (U U^T + gamma I)^{-1} U r / sqrt(T) of the linear
// functional b in r = sqrt(T) U^T b.
Vector estimate_delay_profile(const Matrix& U, const Vector& r, double gamma);

// Design score b_hat^T D^{-1} b_hat over the leading k entries (D_ii floored
// at 1e-14). Lower is better.
double design_score(const Vector& b_hat, const Vector& D, int k);

}  // namespace esnrmt
