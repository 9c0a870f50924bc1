#include <doctest.h>

#include <cmath>

#include "bpgnn/autodiff.hpp"
#include "bpgnn/mmlp.hpp"
#include "support/gradcheck.hpp"

using namespace bpgnn;
using testsupport::random_matrix;

TEST_CASE("elu values") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.0) == 1.0);
  CHECK(elu(-1.0) == doctest::Approx(-0.6321206).epsilon(1e-7));
}

TEST_CASE("tape gradients of simple functions") {
  const std::vector<Eigen::MatrixXd> three{Eigen::MatrixXd::Constant(1, 1, 3.0)};
  const auto sq = ad::grad([](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(ad::square(v[0])); }, three);
  CHECK(sq.value == 9.0);
  CHECK(sq.gradients[0](0, 0) == doctest::Approx(6.0).epsilon(1e-14));

  const std::vector<Eigen::MatrixXd> minus_one{Eigen::MatrixXd::Constant(1, 1, -1.0)};
  const auto e = ad::grad([](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(ad::elu(v[0])); }, minus_one);
  CHECK(e.gradients[0](0, 0) == doctest::Approx(0.3678794).epsilon(1e-7));
}

TEST_CASE("gradient checks at random points") {
  Rng rng(2024);
  for (int k = 0; k < 10; ++k) {
    CHECK(testsupport::gradcheck_elu(rng) <= 1e-4);
    CHECK(testsupport::gradcheck_mmlp(rng) <= 1e-4);
  }
}

TEST_CASE("mMLP shapes and parameter counts") {
  const MMLPSpec s{24, 2, {16}, 12};
  CHECK(s.weight_shape(1) == std::pair{16, 26});
  CHECK(s.weight_shape(2) == std::pair{12, 18});
  CHECK(s.parameter_count() == 16u * 26 + 16 + 12u * 18 + 12);
  MMLPSpec bad = s;
  bad.hidden = {0};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("mMLP initialization") {
  const MMLPSpec s{24, 2, {16}, 12};
  const MMLPParams a = init_params(s, InitScheme::FanInUniform, 99);
  const MMLPParams b = init_params(s, InitScheme::FanInUniform, 99);
  CHECK(a.weights[0] == b.weights[0]);
  CHECK(a.weights[1] == b.weights[1]);
  CHECK(a.weights[0].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(26.0));
  CHECK(1.0 / std::sqrt(26.0) == doctest::Approx(0.1961).epsilon(1e-4));
  CHECK(a.weights[1].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(18.0));
  const MMLPParams z = init_params(s, InitScheme::Zero, 99);
  for (const auto& w : z.weights) CHECK(w.isZero(0.0));
  for (const auto& v : z.biases) CHECK(v.isZero(0.0));
  CHECK(a.matches(s));
}

TEST_CASE("mMLP forward examples") {
  Rng rng(1);
  const MMLPSpec s{3, 2, {5, 4}, 2};
  const MMLPParams zero = init_params(s, InitScheme::Zero, 0);
  CHECK(mmlp_forward(s, zero, random_matrix(3, 7, rng), random_matrix(2, 7, rng)).isZero(0.0));

  const MMLPSpec plain{3, 0, {5}, 2};
  const MMLPParams p = init_params(plain, InitScheme::FanInUniform, 3);
  const Eigen::MatrixXd x = random_matrix(3, 4, rng);
  const Eigen::MatrixXd h = (p.weights[0] * x).colwise() + p.biases[0];
  const Eigen::MatrixXd expected = (p.weights[1] * h.unaryExpr([](double z) { return elu(z); })).colwise() + p.biases[1];
  CHECK((mmlp_forward(plain, p, x, Eigen::MatrixXd(0, 1)) - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("mMLP is linear on the non-negative orthant") {
  Rng rng(8);
  const MMLPSpec s{3, 1, {4, 4}, 2};
  MMLPParams p = init_params(s, InitScheme::FanInUniform, 4);
  for (auto& w : p.weights) w = w.cwiseAbs();
  for (auto& b : p.biases) b = b.cwiseAbs();
  const Eigen::MatrixXd meta = random_matrix(1, 1, rng).cwiseAbs();
  const Eigen::MatrixXd x1 = random_matrix(3, 1, rng).cwiseAbs();
  const Eigen::MatrixXd x2 = random_matrix(3, 1, rng).cwiseAbs();
  const auto f = [&](const Eigen::MatrixXd& x) { return mmlp_forward(s, p, x, meta); };
  const Eigen::MatrixXd lhs = f(0.3 * x1 + 0.7 * x2);
  const Eigen::MatrixXd rhs = 0.3 * f(x1) + 0.7 * f(x2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("shared meta column equals repeated meta") {
  Rng rng(6);
  const MMLPSpec s{2, 3, {6}, 2};
  const MMLPParams p = init_params(s, InitScheme::FanInUniform, 6);
  const Eigen::MatrixXd x = random_matrix(2, 5, rng);
  const Eigen::MatrixXd m = random_matrix(3, 1, rng);
  CHECK((mmlp_forward(s, p, x, m) - mmlp_forward(s, p, x, m.replicate(1, 5))).cwiseAbs().maxCoeff() <= 1e-14);
}
