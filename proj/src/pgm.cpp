#include "bpgnn/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bpgnn/random.hpp"

namespace bpgnn {

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> GaussianPGM::support() const {
  const int n = size();
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> s(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      s(i, j) = i != j && std::abs(precision(i, j)) > edge_threshold;
  return s;
}

void GaussianPGM::validate() const {
  if (precision.rows() != precision.cols())
    throw std::invalid_argument("GaussianPGM: precision matrix must be square");
  if (precision.rows() < 1) throw std::invalid_argument("GaussianPGM: empty precision matrix");
  if (!(precision.array() == precision.transpose().array()).all())
    throw std::invalid_argument("GaussianPGM: precision matrix is not exactly symmetric");
  if ((precision.diagonal().array() <= 0.0).any())
    throw std::invalid_argument("GaussianPGM: non-positive diagonal entry");
  if (!precision.allFinite()) throw std::invalid_argument("GaussianPGM: non-finite entry");
}

DensityUnreachable::DensityUnreachable(double achieved_density, double target)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "random_precision_matrix: density " << target
           << " unreachable within the rotation budget; achieved density " << achieved_density;
        return os.str();
      }()),
      achieved(achieved_density) {}

namespace {

void check_spec(const PrecisionSpec& spec) {
  if (spec.n < 1) throw std::invalid_argument("random_precision_matrix: n must be >= 1");
  if (!(spec.density >= 0.0 && spec.density <= 1.0))
    throw std::invalid_argument("random_precision_matrix: density must lie in [0, 1]");
  if (!(spec.rcond > 0.0 && spec.rcond <= 1.0))
    throw std::invalid_argument("random_precision_matrix: rcond must lie in (0, 1]");
}

// Spectrum in generation order (not sorted); consumes the first draws of rng.
Eigen::VectorXd draw_spectrum(const PrecisionSpec& spec, Rng& rng) {
  Eigen::VectorXd lambda(spec.n);
  if (spec.n == 1) {
    lambda(0) = 1.0;
    return lambda;
  }
  lambda(0) = spec.rcond;
  lambda(1) = 1.0;
  std::uniform_real_distribution<double> u(spec.rcond, 1.0);
  for (int k = 2; k < spec.n; ++k) lambda(k) = u(rng);
  std::shuffle(lambda.data(), lambda.data() + spec.n, rng);
  return lambda;
}

// Number of ordered off-diagonal entries above eps touching rows i or j.
long count_touching(const Eigen::MatrixXd& a, int i, int j, double eps) {
  long c = 0;
  for (int k = 0; k < a.rows(); ++k) {
    if (k != i && std::abs(a(i, k)) > eps) ++c;
    if (k != j && k != i && std::abs(a(j, k)) > eps) ++c;
  }
  // Row entries counted once; the mirrored column entries double them.
  return 2 * c;
}

void rotate(Eigen::MatrixXd& a, int i, int j, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const int n = static_cast<int>(a.rows());
  for (int k = 0; k < n; ++k) {
    if (k == i || k == j) continue;
    const double aki = a(k, i);
    const double akj = a(k, j);
    const double ni = c * aki - s * akj;
    const double nj = s * aki + c * akj;
    a(k, i) = ni;
    a(i, k) = ni;
    a(k, j) = nj;
    a(j, k) = nj;
  }
  Eigen::Matrix2d g;
  g << c, s, -s, c;
  Eigen::Matrix2d block;
  block << a(i, i), a(i, j), a(j, i), a(j, j);
  const Eigen::Matrix2d r = g.transpose() * block * g;
  a(i, i) = r(0, 0);
  a(j, j) = r(1, 1);
  a(i, j) = r(0, 1);
  a(j, i) = r(0, 1);
}

}  // namespace

Eigen::VectorXd precision_spectrum(const PrecisionSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Rng rng(seed);
  Eigen::VectorXd lambda = draw_spectrum(spec, rng);
  std::sort(lambda.data(), lambda.data() + lambda.size());
  return lambda;
}

GaussianPGM random_precision_matrix(const PrecisionSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Rng rng(seed);
  const int n = spec.n;
  GaussianPGM pgm;
  pgm.edge_threshold = spec.epsilon;
  pgm.precision = draw_spectrum(spec, rng).asDiagonal();
  if (n == 1 || spec.density <= 0.0) return pgm;

  const long budget = spec.max_rotations > 0 ? spec.max_rotations : 100L * n * n;
  const long total_pairs = static_cast<long>(n) * (n - 1);
  const long needed = static_cast<long>(std::ceil(spec.density * static_cast<double>(total_pairs) - 1e-9));
  long count = 0;
  std::uniform_int_distribution<int> pick_i(0, n - 1);
  std::uniform_int_distribution<int> pick_j(0, n - 2);
  std::uniform_real_distribution<double> pick_angle(0.0, 2.0 * std::numbers::pi);
  for (long r = 0; r < budget; ++r) {
    const int i = pick_i(rng);
    int j = pick_j(rng);
    if (j >= i) ++j;
    const double theta = pick_angle(rng);
    count -= count_touching(pgm.precision, i, j, spec.epsilon);
    rotate(pgm.precision, i, j, theta);
    count += count_touching(pgm.precision, i, j, spec.epsilon);
    if (count >= needed) return pgm;
  }
  throw DensityUnreachable(measure_density(pgm.precision, spec.epsilon), spec.density);
}

void BiasSchedule::validate() const {
  if (duration < 1) throw std::invalid_argument("BiasSchedule: duration must be >= 1");
  if (!(switch_rate >= 0.0 && switch_rate <= 1.0))
    throw std::invalid_argument("BiasSchedule: switch_rate must lie in [0, 1]");
  if (!(amplitude_sigma >= 0.0)) throw std::invalid_argument("BiasSchedule: amplitude_sigma must be >= 0");
  if (window_len < 1 || window_len % 2 == 0)
    throw std::invalid_argument("BiasSchedule: window_len must be odd and positive");
  if (window_len > duration) throw std::invalid_argument("BiasSchedule: window_len exceeds duration");
}

Eigen::VectorXd hamming_window(int m, bool normalize) {
  if (m < 1) throw std::invalid_argument("hamming_window: length must be >= 1");
  Eigen::VectorXd w(m);
  if (m == 1) {
    w(0) = 1.0;
    return w;
  }
  for (int k = 0; k < m; ++k)
    w(k) = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * k / (m - 1));
  if (normalize) w /= w.sum();
  return w;
}

Eigen::MatrixXd generate_bias_series(int n, const BiasSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  const int t_len = schedule.duration;
  const Eigen::VectorXd w = hamming_window(schedule.window_len, true);
  const int half = (schedule.window_len - 1) / 2;
  Eigen::MatrixXd out(n, t_len);
  Eigen::VectorXd raw(t_len);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "bias", static_cast<std::uint64_t>(i));
    int t = 0;
    while (t < t_len) {
      int len = t_len;
      if (schedule.switch_rate >= 1.0) {
        len = 1;
      } else if (schedule.switch_rate > 0.0) {
        len = 1 + std::geometric_distribution<int>(schedule.switch_rate)(rng);
      }
      const double level = normal(rng, 0.0, schedule.amplitude_sigma);
      const int end = std::min(t_len, t + len);
      for (; t < end; ++t) raw(t) = level;
    }
    for (int s = 0; s < t_len; ++s) {
      double acc = 0.0;
      for (int k = 0; k < schedule.window_len; ++k) {
        const int idx = std::clamp(s + k - half, 0, t_len - 1);
        acc += w(k) * raw(idx);
      }
      out(i, s) = acc;
    }
  }
  return out;
}

Eigen::VectorXd exact_marginal_means(const GaussianPGM& pgm, const Eigen::VectorXd& b) {
  if (b.size() != pgm.size())
    throw std::invalid_argument("exact_marginal_means: bias length does not match PGM size");
  Eigen::LLT<Eigen::MatrixXd> llt(pgm.precision);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("exact_marginal_means: precision matrix is not positive definite");
  return llt.solve(b);
}

MarginalVariances exact_marginal_variances(const GaussianPGM& pgm) {
  Eigen::LLT<Eigen::MatrixXd> llt(pgm.precision);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("exact_marginal_variances: precision matrix is not positive definite");
  const int n = pgm.size();
  MarginalVariances out;
  out.exact = llt.solve(Eigen::MatrixXd::Identity(n, n)).diagonal();
  out.local = pgm.precision.diagonal().cwiseInverse();
  return out;
}

}  // namespace bpgnn
