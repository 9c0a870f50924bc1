#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "bpgnn/pgm.hpp"
#include "support/gradcheck.hpp"

using namespace bpgnn;
using testsupport::random_matrix;

TEST_CASE("measure_density examples") {
  CHECK(measure_density(Eigen::MatrixXd::Identity(4, 4), 0.01) == 0.0);
  CHECK(measure_density(Eigen::MatrixXd::Ones(3, 3), 0.01) == 1.0);
  Eigen::Matrix2d a;
  a << 1, 0.005, 0.005, 1;
  CHECK(measure_density(a, 0.01) == 0.0);
}

TEST_CASE("random_precision_matrix trivial cases") {
  PrecisionSpec s;
  s.n = 1;
  const GaussianPGM one = random_precision_matrix(s, 3);
  REQUIRE(one.size() == 1);
  CHECK(one.precision(0, 0) > 0.0);

  s.n = 6;
  s.density = 0.0;
  const GaussianPGM diag = random_precision_matrix(s, 3);
  CHECK(measure_density(diag.precision, s.epsilon) == 0.0);
  CHECK(diag.precision.isDiagonal());
}

TEST_CASE("random_precision_matrix hits rcond and density at n = 12") {
  PrecisionSpec s;
  s.n = 12;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const GaussianPGM p = random_precision_matrix(s, seed);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p.precision).eigenvalues();
    CHECK(ev.minCoeff() / ev.maxCoeff() == doctest::Approx(0.2).epsilon(1e-9));
    const double d = measure_density(p.precision, s.epsilon);
    CHECK(d >= 0.6);
    CHECK(d <= 0.7);
  }
}

TEST_CASE("random_precision_matrix is symmetric, SPD and keeps its spectrum") {
  Rng rng(17);
  for (int c = 0; c < 100; ++c) {
    PrecisionSpec s;
    s.n = std::uniform_int_distribution<int>(4, 18)(rng);
    const std::uint64_t seed = rng();
    GaussianPGM p;
    try {
      p = random_precision_matrix(s, seed);
    } catch (const DensityUnreachable&) {
      continue;
    }
    CHECK(p.precision == p.precision.transpose());
    CHECK(p.precision.llt().info() == Eigen::Success);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p.precision).eigenvalues();
    CHECK((ev - precision_spectrum(s, seed)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("unreachable density names the achieved value") {
  PrecisionSpec s;
  s.n = 6;
  s.density = 1.0;
  s.epsilon = 10.0;
  CHECK_THROWS_AS(random_precision_matrix(s, 1), DensityUnreachable);
}

TEST_CASE("hamming window") {
  const Eigen::VectorXd w = hamming_window(5, false);
  const Eigen::VectorXd expected = (Eigen::VectorXd(5) << 0.08, 0.54, 1.0, 0.54, 0.08).finished();
  CHECK((w - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(hamming_window(5, true).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(hamming_window(1, true)(0) == 1.0);
}

TEST_CASE("bias series") {
  BiasSchedule s{40, 0.0, 1.5, 5};
  const Eigen::MatrixXd flat = generate_bias_series(3, s, 9);
  for (int i = 0; i < 3; ++i) CHECK((flat.row(i).array() == flat(i, 0)).all());

  s = {200, 0.1, 1.5, 1};
  const Eigen::MatrixXd raw = generate_bias_series(4, s, 9);
  int distinct_steps = 0;
  for (int t = 1; t < 200; ++t) distinct_steps += raw(0, t) != raw(0, t - 1);
  CHECK(distinct_steps > 0);
  CHECK(raw == generate_bias_series(4, s, 9));
  CHECK(raw.row(0) != raw.row(1));

  s.window_len = 5;
  const Eigen::MatrixXd smooth = generate_bias_series(4, s, 9);
  CHECK(smooth.cols() == 200);
  CHECK(smooth.allFinite());
}

TEST_CASE("exact marginals") {
  const Eigen::Vector2d b(0.5, -1.0);
  CHECK(exact_marginal_means({Eigen::Matrix2d::Identity()}, b) == b);

  Eigen::Matrix2d a;
  a << 1, 0.2, 0.2, 1;
  const Eigen::VectorXd mu = exact_marginal_means({a}, Eigen::Vector2d(1, 0));
  CHECK(mu(0) == doctest::Approx(1.0416667).epsilon(1e-7));
  CHECK(mu(1) == doctest::Approx(-0.2083333).epsilon(1e-6));

  const MarginalVariances v = exact_marginal_variances({a});
  CHECK(v.exact(0) == doctest::Approx(1 / 0.96).epsilon(1e-12));
  CHECK(v.exact(1) == doctest::Approx(1 / 0.96).epsilon(1e-12));
  CHECK(v.local(0) == 1.0);

  const GaussianPGM four{Eigen::MatrixXd::Constant(1, 1, 4.0)};
  CHECK(exact_marginal_means(four, Eigen::VectorXd::Constant(1, 2.0))(0) == 0.5);
  CHECK(exact_marginal_variances(four).exact(0) == 0.25);
}

TEST_CASE("exact_marginal_means inverts A x") {
  Rng rng(5);
  PrecisionSpec s;
  s.n = 10;
  for (int c = 0; c < 10; ++c) {
    const GaussianPGM p = random_precision_matrix(s, rng());
    const Eigen::VectorXd x = random_matrix(10, 1, rng).col(0);
    CHECK((exact_marginal_means(p, p.precision * x) - x).cwiseAbs().maxCoeff() <= 1e-9);
  }
}
