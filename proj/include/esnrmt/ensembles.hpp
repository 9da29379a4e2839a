#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace esnrmt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One block of a multi-mode reservoir: a Haar-distributed orthogonal block
// scaled by sigma, occupying the given fraction of the n states.
struct MultiMode {
  double sigma = 0.0;
  double fraction = 0.0;
};

// Recipe for sampling a random connectivity matrix.
struct MatrixSpec {
  enum class Kind {
    HaarScaled,        // sigma * (Haar orthogonal)
    GaussianIid,       // iid N(0, sigma^2/n) entries
    Wigner,            // symmetric, N(0, sigma^2/(4n)) on and above the diagonal
    MultiMemory,       // block-diagonal of scaled Haar orthogonal blocks
    ProjectionNormal,  // V diag(+-sigma) V^T with Haar V; W^2 = sigma^2 I
  };

  Kind kind = Kind::HaarScaled;
  int n = 0;
  double sigma = 0.9;
  std::vector<MultiMode> modes;  // MultiMemory only; fractions sum to 1

  static MatrixSpec haar(int n, double sigma);
  static MatrixSpec gaussian_iid(int n, double sigma);
  static MatrixSpec wigner(int n, double sigma);
  static MatrixSpec multi_memory(int n, std::vector<MultiMode> modes);
  static MatrixSpec projection_normal(int n, double sigma);

  void validate() const;  // throws std::invalid_argument
};

// Limiting spectral measure of a normal connectivity matrix, used by the
// measure-based kernel solver.
struct SpectralMeasure {
  enum class Kind {
    Discrete,    // finite atoms
    Semicircle,  // semicircle on [-sigma, sigma]
  };

  Kind kind = Kind::Discrete;
  double sigma = 0.0;                            // Semicircle only
  std::vector<std::pair<double, double>> atoms;  // (location, weight), weights sum to 1

  static SpectralMeasure semicircle(double sigma);
  static SpectralMeasure two_point(double sigma);  // (delta_sigma + delta_{-sigma})/2
  static SpectralMeasure discrete(std::vector<std::pair<double, double>> atoms);

  bool symmetric(double tol = 1e-12) const;
  // Nodes/weights for integrating against the measure; exact for Discrete,
  // Gauss-Chebyshev (second kind) for Semicircle.
  void quadrature(int points, std::vector<double>& nodes, std::vector<double>& weights) const;
};

// Draws W according to spec. Deterministic for fixed (spec, seed). MultiMemory
// block sizes are assigned by largest remainder so that they sum to n.
Matrix sample_connectivity(const MatrixSpec& spec, std::uint64_t seed);

// Block sizes used by sample_connectivity for a MultiMemory spec.
std::vector<int> multi_memory_block_sizes(int n, const std::vector<MultiMode>& modes);

// Unit-norm Gaussian input vector.
Vector sample_input_weights(int n, std::uint64_t seed);

// Real eigenvector of W, index-th by descending |eigenvalue|. Throws if that
// eigenvalue has no real invariant direction.
Vector eigvec_input_weights(const Matrix& W, int index);

struct SpectralStats {
  double spectral_radius = 0.0;
  double operator_norm = 0.0;
};

SpectralStats spectral_stats(const Matrix& W);

}  // namespace esnrmt
