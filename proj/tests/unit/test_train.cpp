#include <doctest.h>

#include "bpgnn/train.hpp"
#include "support/gradcheck.hpp"

using namespace bpgnn;
using testsupport::random_matrix;

namespace {

std::vector<TraceDataset> tiny_datasets(double noise) {
  std::vector<TraceDataset> out;
  for (int g = 0; g < 2; ++g) {
    PrecisionSpec spec;
    spec.n = 3 + g;
    out.push_back(generate_traces(random_precision_matrix(spec, 50 + g), {20, 0.1, 1.5, 3}, {0.7, noise, 1}, 12,
                                  {0.5, 0.25, 0.25}, 7 + g));
    out.back().pgm_id = g;
  }
  return out;
}

}  // namespace

TEST_CASE("loss examples") {
  const Eigen::MatrixXd y = Eigen::MatrixXd::Constant(2, 3, 1.5);
  CHECK(loss(y, y, burn_in_mask(2, 3, 0)) == 0.0);
  CHECK(loss(Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::MatrixXd::Constant(1, 1, 1.0), burn_in_mask(1, 1, 0)) == 4.0);
  CHECK(loss(y, Eigen::MatrixXd::Zero(2, 3), burn_in_mask(2, 3, 3)) == 0.0);
  const Mask m = burn_in_mask(2, 5, 2);
  CHECK(m.count() == 6);
  CHECK(!m(1, 1));
  CHECK(m(0, 2));
}

TEST_CASE("regularized objective examples") {
  StructuralParams s;
  s.n = 1;
  s.vertex = Eigen::Vector2d(3, 4);
  s.edge.resize(2, 0);
  CHECK(regularized_objective(1.0, s, 0.1) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(regularized_objective(1.0, s, 0.0) == 1.0);
  s.vertex.setZero();
  CHECK(regularized_objective(1.0, s, 0.1) == 1.0);
}

TEST_CASE("r squared examples") {
  const Eigen::RowVector3d y(0, 1, 2);
  const Mask all = burn_in_mask(1, 3, 0);
  CHECK(r_squared(y, y, all) == 1.0);
  CHECK(r_squared(Eigen::RowVector3d::Constant(1.0), y, all) == 0.0);
  CHECK(r_squared(Eigen::RowVector3d(0, 1, 1), y, all) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS(r_squared(y, Eigen::RowVector3d::Constant(2.0), all));
}

TEST_CASE("fit accumulator pools like a single evaluation") {
  Rng rng(1);
  const Eigen::MatrixXd o1 = random_matrix(3, 10, rng), y1 = random_matrix(3, 10, rng);
  const Eigen::MatrixXd o2 = random_matrix(3, 10, rng), y2 = random_matrix(3, 10, rng);
  FitAccumulator a, b;
  a.add(o1, y1, 2);
  b.add(o2, y2, 2);
  a.merge(b);
  Eigen::MatrixXd o(3, 16), y(3, 16);
  o << o1.rightCols(8), o2.rightCols(8);
  y << y1.rightCols(8), y2.rightCols(8);
  const Mask all = burn_in_mask(3, 16, 0);
  CHECK(a.count() == 48);
  CHECK(a.mse() == doctest::Approx(loss(o, y, all) / 48).epsilon(1e-12));
  CHECK(a.r2() == doctest::Approx(r_squared(o, y, all)).epsilon(1e-12));
}

TEST_CASE("baseline mse") {
  CHECK(baseline_mse(tiny_datasets(0.0)) == 0.0);
  const auto noisy = tiny_datasets(0.05);
  FitAccumulator acc;
  for (int r : noisy[0].trials_in(Split::Test)) acc.add(noisy[0].reference[r], noisy[0].targets[r], 0);
  CHECK(baseline_mse(std::span(noisy.data(), 1)) == doctest::Approx(acc.mse()).epsilon(1e-12));
}

TEST_CASE("zero readout gives zero objective on zero targets") {
  const GNNArchitecture a = testsupport::small_arch();
  Rng rng(2);
  DynamicalParams d = init_dynamical(a, rng);
  d.readout_weight.setZero();
  const StructuralParams s = init_structural(a, 3, rng);
  const Eigen::MatrixXd out = rollout(a, d, s, random_matrix(3, 6, rng)).output_matrix();
  CHECK(regularized_objective(loss(out, Eigen::MatrixXd::Zero(3, 6), burn_in_mask(3, 6, 0)), s, 0.0) == 0.0);
}

TEST_CASE("other graphs' structural parameters get exactly zero gradient") {
  const GNNArchitecture a = testsupport::small_arch();
  Rng rng(3);
  const DynamicalParams d = testsupport::random_dynamical(a, rng);
  const StructuralParams s0 = init_structural(a, 3, rng);
  const StructuralParams s1 = init_structural(a, 4, rng);
  const std::vector<Eigen::MatrixXd> inputs{random_matrix(3, 5, rng)};
  ad::Tape tape;
  const DynamicalVars dv = record_dynamical(tape, d, true);
  const StructuralVars v0 = record_structural(tape, s0, true);
  const StructuralVars v1 = record_structural(tape, s1, true);
  ad::Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (const auto& o : tape_rollout(a, dv, v0, 3, inputs)) total = total + ad::sum(ad::square(o));
  total = total + ad::affine(ad::squared_norm(v0.vertex) + ad::squared_norm(v0.edge), 1e-4, 0.0);
  tape.backward(total);
  CHECK(v1.vertex.grad().isZero(0.0));
  CHECK(v1.edge.grad().isZero(0.0));
  CHECK(!v0.edge.grad().isZero(0.0));
}

TEST_CASE("multi-graph training") {
  const auto data = tiny_datasets(0.05);
  GNNArchitecture a = testsupport::small_arch();
  a.vertex_dim = 1;
  a.edge_dim = 1;
  TrainConfig c;
  c.step_size = 1e-2;
  c.max_steps = 60;
  c.eval_interval = 10;
  c.patience = 100;
  c.burn_in = 2;
  c.batch_trials = 4;
  c.seed = 5;
  std::vector<TrainingRecord> log;
  const TrainedEnsemble e = train_multi(data, a, c, [&](const TrainingRecord& r) { log.push_back(r); });
  CHECK(e.graphs() == 2);
  CHECK(e.steps_run == 60);
  CHECK(log.size() == 60);
  CHECK(e.structural[1].n == 4);
  CHECK(e.structural[1].edge.cols() == 12);
  CHECK(std::isfinite(e.pooled.test.mse));

  double first = std::numeric_limits<double>::infinity(), best = first;
  for (const auto& r : log)
    if (!std::isnan(r.val_mse)) {
      if (std::isinf(first)) first = r.val_mse;
      best = std::min(best, r.val_mse);
    }
  CHECK(best <= first);

  const TrainedEnsemble again = train_multi(data, a, c);
  CHECK(again.dynamical.message.weights[0] == e.dynamical.message.weights[0]);
  CHECK(again.structural[0].edge == e.structural[0].edge);
  CHECK(again.pooled.test.mse == e.pooled.test.mse);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.l2_structural = -1.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.step_size = 0.0;
  CHECK_THROWS(c.validate());
  const auto data = tiny_datasets(0.05);
  TrainConfig burn;
  burn.burn_in = 20;
  CHECK_THROWS(train_multi(data, testsupport::small_arch(), burn));
}
