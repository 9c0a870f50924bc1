#include <doctest.h>

#include "bpgnn/bp.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace bpgnn;
using testsupport::random_matrix;

namespace {

GaussianPGM two_by_two() {
  Eigen::Matrix2d a;
  a << 1, 0.2, 0.2, 1;
  return {a};
}

}  // namespace

TEST_CASE("gaussian BP converges to the 2x2 solve") {
  const GaussianBP bp(two_by_two());
  const BPConfig cfg{0.5, 0.0, 200};
  const Eigen::Vector2d b(1, 0);
  GaussianMessageSet m = bp.initial_messages();
  GaussianBPStep s{m, {}, {}};
  for (int t = 0; t < 200; ++t) {
    s = bp.step(m, b, cfg, nullptr, t);
    m = s.messages;
  }
  CHECK(s.means(0) == doctest::Approx(1.0416667).epsilon(1e-6));
  CHECK(s.means(1) == doctest::Approx(-0.2083333).epsilon(1e-5));
}

TEST_CASE("frozen messages at gamma = 1") {
  const GaussianBP bp(two_by_two());
  GaussianMessageSet m{Eigen::Vector2d(0.3, 0.1), Eigen::Vector2d(-0.2, 0.4)};
  const GaussianBPStep s = bp.step(m, Eigen::Vector2d(1, 0), {1.0, 0.0, 1}, nullptr);
  CHECK(s.messages.precision == m.precision);
  CHECK(s.messages.potential == m.potential);
}

TEST_CASE("damping is affine between frozen and undamped") {
  Rng rng(3);
  PrecisionSpec spec;
  spec.n = 6;
  const GaussianBP bp(random_precision_matrix(spec, 8));
  const Eigen::VectorXd b = random_matrix(6, 1, rng).col(0);
  GaussianMessageSet m = bp.initial_messages();
  for (int t = 0; t < 3; ++t) m = bp.step(m, b, {0.0, 0.0, 1}, nullptr).messages;
  const GaussianMessageSet undamped = bp.step(m, b, {0.0, 0.0, 1}, nullptr).messages;
  for (double g : {0.25, 0.5, 0.9}) {
    const GaussianMessageSet d = bp.step(m, b, {g, 0.0, 1}, nullptr).messages;
    CHECK((d.precision - (g * m.precision + (1 - g) * undamped.precision)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((d.potential - (g * m.potential + (1 - g) * undamped.potential)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gaussian BP on trees") {
  Rng rng(41);
  for (int c = 0; c < 10; ++c) {
    const int n = std::uniform_int_distribution<int>(2, 9)(rng);
    std::vector<std::pair<int, int>> edges;
    const GaussianPGM p = testsupport::random_gaussian_tree(n, rng, &edges);
    const GaussianBP bp(p);
    const Eigen::VectorXd b = random_matrix(n, 1, rng).col(0);
    GaussianMessageSet m = bp.initial_messages();
    GaussianBPStep s{m, {}, {}};
    for (int t = 0; t <= testsupport::tree_diameter(n, edges); ++t) {
      s = bp.step(m, b, {0.0, 0.0, 1}, nullptr, t);
      m = s.messages;
    }
    CHECK((s.means - testsupport::lu_solve(p.precision, b)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((s.sigmas - testsupport::inverse_diagonal(p.precision).cwiseSqrt()).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("divergence names the edge and step") {
  Eigen::Matrix3d a;
  a << 1, 0.2, 0, 0.2, 1, 0.2, 0, 0.2, 1;
  const GaussianBP bp({a});
  GaussianMessageSet m{Eigen::VectorXd::Constant(4, -5.0), Eigen::VectorXd::Zero(4)};
  try {
    bp.step(m, Eigen::Vector3d::Zero(), {0.0, 0.0, 1}, nullptr, 7);
    FAIL("expected divergence");
  } catch (const BPDivergence& e) {
    CHECK(e.step == 7);
  }
}

TEST_CASE("discrete BP single vertex gives the normalized potential") {
  DiscretePGM p;
  p.states = {3};
  p.singleton = {Eigen::Vector3d(1, 2, 5)};
  const DiscreteBP bp(p);
  const auto marg = bp.step(bp.initial_messages(), {0.0, 0.0, 1}, nullptr).marginals;
  CHECK((marg[0] - Eigen::Vector3d(0.125, 0.25, 0.625)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("discrete BP on a 5-vertex binary tree matches enumeration") {
  Rng rng(77);
  for (int c = 0; c < 5; ++c) {
    DiscretePGM p = testsupport::random_discrete_tree(5, 2, rng);
    for (auto& s : p.states) s = 2;
    for (auto& phi : p.singleton) phi = random_matrix(2, 1, rng).col(0).array().exp();
    for (auto& e : p.edges) e.table = random_matrix(2, 2, rng).array().exp();
    const DiscreteBP bp(p);
    DiscreteMessageSet m = bp.initial_messages();
    std::vector<Eigen::VectorXd> marg;
    for (int t = 0; t < 6; ++t) {
      auto s = bp.step(m, {0.0, 0.0, 1}, nullptr);
      m = std::move(s.messages);
      marg = std::move(s.marginals);
    }
    const auto truth = testsupport::enumerate_marginals(p);
    for (int i = 0; i < 5; ++i) CHECK((marg[i] - truth[i]).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("discrete BP marginals stay normalized under noise and damping") {
  Rng rng(12);
  const DiscretePGM p = testsupport::random_discrete_tree(7, 3, rng);
  const DiscreteBP bp(p);
  DiscreteMessageSet m = bp.initial_messages();
  for (int t = 0; t < 20; ++t) {
    auto s = bp.step(m, {0.4, 0.3, 1}, &rng);
    for (const auto& q : s.marginals) CHECK(std::abs(q.sum() - 1.0) <= 1e-12);
    m = std::move(s.messages);
  }
}

TEST_CASE("discrete BP frozen at gamma = 1") {
  Rng rng(2);
  const DiscretePGM p = testsupport::random_discrete_tree(4, 3, rng);
  const DiscreteBP bp(p);
  DiscreteMessageSet m = bp.initial_messages();
  m = bp.step(m, {0.0, 0.0, 1}, nullptr).messages;
  const auto frozen = bp.step(m, {1.0, 0.0, 1}, nullptr).messages;
  for (std::size_t k = 0; k < m.log_messages.size(); ++k)
    CHECK((frozen.log_messages[k] - m.log_messages[k]).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("trace datasets") {
  PrecisionSpec spec;
  spec.n = 6;
  const GaussianPGM p = random_precision_matrix(spec, 4);
  const BiasSchedule sched{30, 0.05, 1.5, 5};

  const TraceDataset clean = generate_traces(p, sched, {0.7, 0.0, 1}, 5, {}, 11);
  for (int r = 0; r < clean.trials(); ++r) CHECK(clean.targets[r] == clean.reference[r]);

  const TraceDataset noisy = generate_traces(p, sched, {0.7, 0.05, 1}, 20, {0.8, 0.1, 0.1}, 11);
  CHECK(noisy.trials() == 20);
  CHECK(noisy.targets[0].rows() == 6);
  CHECK(noisy.targets[0].cols() == 30);
  double sum = 0.0, count = 0.0, sq = 0.0;
  for (int r = 0; r < noisy.trials(); ++r) {
    const Eigen::MatrixXd d = noisy.targets[r] - noisy.reference[r];
    sum += d.sum();
    sq += d.squaredNorm();
    count += static_cast<double>(d.size());
  }
  CHECK(sq > 0.0);
  CHECK(std::abs(sum / count) < 3.0 * std::sqrt(sq / count));
  CHECK(noisy.trials_in(Split::Train).size() == 16);
  CHECK(noisy.trials_in(Split::Validation).size() == 2);
  CHECK(noisy.trials_in(Split::Test).size() == 2);

  const TraceDataset again = generate_traces(p, sched, {0.7, 0.05, 1}, 20, {0.8, 0.1, 0.1}, 11);
  CHECK(again.targets[3] == noisy.targets[3]);
  CHECK(again.split == noisy.split);
}

TEST_CASE("trace dataset of 100 trials at n = 12, T = 80 holds 96000 targets") {
  PrecisionSpec spec;
  spec.n = 12;
  const TraceDataset d = generate_traces(random_precision_matrix(spec, 2), {80, 0.05, 1.5, 5}, {}, 100, {}, 3);
  long total = 0;
  for (const auto& y : d.targets) total += y.size();
  CHECK(total == 96000);
}
