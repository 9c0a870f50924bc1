#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bpgnn {

/// Multivariate Gaussian p(θ) ∝ exp(-½ θᵀAθ + bᵀθ) described by its
/// precision matrix A. Diagonal entries are local precisions, off-diagonal
/// entries are couplings.
struct GaussianPGM {
  Eigen::MatrixXd precision;
  /// Couplings with magnitude at or below this value count as absent when
  /// measuring density or reporting support.
  double edge_threshold = 0.01;

  int size() const { return static_cast<int>(precision.rows()); }
  Eigen::VectorXd local_precisions() const { return precision.diagonal(); }
  double coupling(int i, int j) const { return precision(i, j); }

  /// Off-diagonal support |A_ij| > edge_threshold as a boolean matrix.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support() const;

  /// Throws std::invalid_argument unless A is square, exactly symmetric and
  /// has a positive diagonal.
  void validate() const;
};

struct PrecisionSpec {
  int n = 12;
  double density = 0.6;
  double rcond = 0.2;
  double epsilon = 0.01;
  /// Rotation budget; non-positive means 100·n².
  long max_rotations = 0;
};

class DensityUnreachable : public std::runtime_error {
 public:
  DensityUnreachable(double achieved, double target);
  double achieved;
};

/// Random SPD matrix with a fixed spectrum (uniform in [rcond, 1], both
/// endpoints present) mixed by Jacobi rotations on random index pairs until
/// the off-diagonal density first reaches the target.
GaussianPGM random_precision_matrix(const PrecisionSpec& spec,
                                    std::uint64_t seed);

/// The pre-drawn spectrum random_precision_matrix uses for a seed, sorted
/// ascending.
Eigen::VectorXd precision_spectrum(const PrecisionSpec& spec,
                                   std::uint64_t seed);

/// Fraction of off-diagonal entries with |A_ij| > eps.
template <typename Derived>
double measure_density(const Eigen::MatrixBase<Derived>& a, double eps) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("measure_density: matrix must be square");
  if (n < 2) return 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j && std::abs(a(i, j)) > eps) ++count;
  return static_cast<double>(count) / static_cast<double>(n * (n - 1));
}

struct BiasSchedule {
  int duration = 100;
  /// Expected switches per step.
  double switch_rate = 0.05;
  double amplitude_sigma = 1.5;
  /// Odd smoothing-window length.
  int window_len = 5;

  void validate() const;
};

/// Hamming window of length m, w[k] = 0.54 − 0.46·cos(2πk/(m−1)); m = 1
/// gives [1]. With normalize the coefficients sum to one.
Eigen::VectorXd hamming_window(int m, bool normalize);

/// n×T matrix of piecewise-constant levels with geometric period lengths,
/// smoothed by a unit-sum Hamming window with replicate padding. Each vertex
/// draws from its own substream of seed.
Eigen::MatrixXd generate_bias_series(int n, const BiasSchedule& schedule,
                                     std::uint64_t seed);

/// Exact marginal means, the solution of A·μ = b.
Eigen::VectorXd exact_marginal_means(const GaussianPGM& pgm,
                                     const Eigen::VectorXd& b);

struct MarginalVariances {
  /// diag(A⁻¹), the true marginal variances.
  Eigen::VectorXd exact;
  /// 1/a_i, the local-precision variances.
  Eigen::VectorXd local;
};

MarginalVariances exact_marginal_variances(const GaussianPGM& pgm);

}  // namespace bpgnn
