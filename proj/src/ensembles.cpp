#include "esnrmt/ensembles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace esnrmt {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

Matrix gaussian_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix G(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) G(i, j) = normal(rng);
  return G;
}

// Haar orthogonal matrix: QR of a Gaussian matrix with the R-diagonal sign
// correction that makes the factorization unique.
Matrix haar_orthogonal(int n, std::mt19937_64& rng) {
  Matrix G = gaussian_matrix(n, n, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

}  // namespace

MatrixSpec MatrixSpec::haar(int n, double sigma) {
  MatrixSpec s;
  s.kind = Kind::HaarScaled;
  s.n = n;
  s.sigma = sigma;
  return s;
}

MatrixSpec MatrixSpec::gaussian_iid(int n, double sigma) {
  MatrixSpec s;
  s.kind = Kind::GaussianIid;
  s.n = n;
  s.sigma = sigma;
  return s;
}

MatrixSpec MatrixSpec::wigner(int n, double sigma) {
  MatrixSpec s;
  s.kind = Kind::Wigner;
  s.n = n;
  s.sigma = sigma;
  return s;
}

MatrixSpec MatrixSpec::multi_memory(int n, std::vector<MultiMode> modes) {
  MatrixSpec s;
  s.kind = Kind::MultiMemory;
  s.n = n;
  s.modes = std::move(modes);
  return s;
}

MatrixSpec MatrixSpec::projection_normal(int n, double sigma) {
  MatrixSpec s;
  s.kind = Kind::ProjectionNormal;
  s.n = n;
  s.sigma = sigma;
  return s;
}

void MatrixSpec::validate() const {
  if (n <= 1) throw std::invalid_argument("MatrixSpec: n must exceed 1");
  if (kind == Kind::MultiMemory) {
    if (modes.empty()) throw std::invalid_argument("MatrixSpec: MultiMemory needs modes");
    double total = 0.0;
    for (const auto& m : modes) {
      if (m.fraction <= 0.0) throw std::invalid_argument("MatrixSpec: mode fraction must be positive");
      if (m.sigma <= 0.0 || m.sigma >= 1.0)
        throw std::invalid_argument("MatrixSpec: mode sigma must lie in (0,1)");
      total += m.fraction;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("MatrixSpec: mode fractions must sum to 1");
    for (int size : multi_memory_block_sizes(n, modes))
      if (size == 0) throw std::invalid_argument("MatrixSpec: a MultiMemory block rounds to size 0");
  } else {
    if (sigma <= 0.0 || sigma >= 1.0)
      throw std::invalid_argument("MatrixSpec: sigma must lie in (0,1)");
  }
}

std::vector<int> multi_memory_block_sizes(int n, const std::vector<MultiMode>& modes) {
  // Largest-remainder apportionment of n states to the modes.
  const int k = static_cast<int>(modes.size());
  std::vector<int> sizes(k);
  std::vector<std::pair<double, int>> remainders(k);
  int assigned = 0;
  for (int j = 0; j < k; ++j) {
    const double exact = modes[j].fraction * n;
    sizes[j] = static_cast<int>(std::floor(exact));
    remainders[j] = {exact - sizes[j], j};
    assigned += sizes[j];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int left = n - assigned, j = 0; left > 0; --left, ++j) sizes[remainders[j].second] += 1;
  return sizes;
}

Matrix sample_connectivity(const MatrixSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto rng = make_rng(seed);
  const int n = spec.n;
  switch (spec.kind) {
    case MatrixSpec::Kind::HaarScaled:
      return spec.sigma * haar_orthogonal(n, rng);
    case MatrixSpec::Kind::GaussianIid:
      return gaussian_matrix(n, n, spec.sigma / std::sqrt(double(n)), rng);
    case MatrixSpec::Kind::Wigner: {
      const double sd = spec.sigma / (2.0 * std::sqrt(double(n)));
      std::normal_distribution<double> normal(0.0, sd);
      Matrix W(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          W(i, j) = normal(rng);
          W(j, i) = W(i, j);
        }
      return W;
    }
    case MatrixSpec::Kind::MultiMemory: {
      const auto sizes = multi_memory_block_sizes(n, spec.modes);
      Matrix W = Matrix::Zero(n, n);
      int at = 0;
      for (std::size_t j = 0; j < sizes.size(); ++j) {
        const int nj = sizes[j];
        W.block(at, at, nj, nj) = spec.modes[j].sigma * haar_orthogonal(nj, rng);
        at += nj;
      }
      return W;
    }
    case MatrixSpec::Kind::ProjectionNormal: {
      Matrix V = haar_orthogonal(n, rng);
      Vector lambda(n);
      const int half = (n + 1) / 2;
      for (int i = 0; i < n; ++i) lambda[i] = (i < half ? spec.sigma : -spec.sigma);
      return V * lambda.asDiagonal() * V.transpose();
    }
  }
  throw std::logic_error("sample_connectivity: unknown kind");
}

Vector sample_input_weights(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_input_weights: n must be positive");
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector m(n);
  for (int i = 0; i < n; ++i) m[i] = normal(rng);
  const double norm = m.norm();
  if (norm == 0.0) throw std::runtime_error("sample_input_weights: degenerate draw");
  return m / norm;
}

Vector eigvec_input_weights(const Matrix& W, int index) {
  if (index < 0 || index >= W.rows())
    throw std::invalid_argument("eigvec_input_weights: index out of range");
  Eigen::EigenSolver<Matrix> es(W);
  std::vector<int> order(W.rows());
  std::iota(order.begin(), order.end(), 0);
  const auto& vals = es.eigenvalues();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(vals[a]) > std::abs(vals[b]); });
  const int pick = order[index];
  if (std::abs(vals[pick].imag()) > 1e-10 * std::abs(vals[pick]))
    throw std::runtime_error("eigvec_input_weights: eigenvalue has no real invariant direction");
  Vector v = es.eigenvectors().col(pick).real();
  const double norm = v.norm();
  if (norm < 1e-12)
    throw std::runtime_error("eigvec_input_weights: eigenvector has no real part");
  return v / norm;
}

SpectralStats spectral_stats(const Matrix& W) {
  SpectralStats stats;
  Eigen::EigenSolver<Matrix> es(W, /*computeEigenvectors=*/false);
  stats.spectral_radius = es.eigenvalues().cwiseAbs().maxCoeff();
  // Operator norm via power iteration on W^T W.
  Vector v = Vector::Ones(W.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    Vector next = W.transpose() * (W * v);
    const double norm = next.norm();
    if (norm == 0.0) return stats;
    next /= norm;
    const double delta = (next - v).norm();
    v = next;
    lambda = norm;
    if (delta < 1e-12) break;
  }
  stats.operator_norm = std::sqrt(lambda);
  return stats;
}

SpectralMeasure SpectralMeasure::semicircle(double sigma) {
  SpectralMeasure mu;
  mu.kind = Kind::Semicircle;
  mu.sigma = sigma;
  return mu;
}

SpectralMeasure SpectralMeasure::two_point(double sigma) {
  SpectralMeasure mu;
  mu.kind = Kind::Discrete;
  mu.atoms = {{sigma, 0.5}, {-sigma, 0.5}};
  return mu;
}

SpectralMeasure SpectralMeasure::discrete(std::vector<std::pair<double, double>> atoms) {
  SpectralMeasure mu;
  mu.kind = Kind::Discrete;
  mu.atoms = std::move(atoms);
  return mu;
}

bool SpectralMeasure::symmetric(double tol) const {
  if (kind == Kind::Semicircle) return true;
  for (const auto& [t, w] : atoms) {
    double mirrored = 0.0;
    for (const auto& [t2, w2] : atoms)
      if (std::abs(t2 + t) <= tol) mirrored += w2;
    if (std::abs(mirrored - w) > tol) return false;
  }
  return true;
}

void SpectralMeasure::quadrature(int points, std::vector<double>& nodes,
                                 std::vector<double>& weights) const {
  nodes.clear();
  weights.clear();
  if (kind == Kind::Discrete) {
    for (const auto& [t, w] : atoms) {
      nodes.push_back(t);
      weights.push_back(w);
    }
    return;
  }
  // Semicircle on [-sigma, sigma]: Gauss-Chebyshev (second kind),
  // integral f d mu = sum_k (2/(N+1)) sin^2(k pi/(N+1)) f(sigma cos(k pi/(N+1))).
  const int N = points;
  nodes.reserve(N);
  weights.reserve(N);
  for (int k = 1; k <= N; ++k) {
    const double theta = M_PI * k / (N + 1.0);
    nodes.push_back(sigma * std::cos(theta));
    weights.push_back(2.0 / (N + 1.0) * std::sin(theta) * std::sin(theta));
  }
}

}  // namespace esnrmt
