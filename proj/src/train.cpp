#include "bpgnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bpgnn {

Mask burn_in_mask(Eigen::Index rows, Eigen::Index cols, int burn_in) {
  Mask m = Mask::Constant(rows, cols, true);
  const Eigen::Index k = std::min<Eigen::Index>(std::max(burn_in, 0), cols);
  m.leftCols(k).setConstant(false);
  return m;
}

namespace {

void check_shapes(const Eigen::MatrixXd& o, const Eigen::MatrixXd& y, const Mask& mask) {
  if (o.rows() != y.rows() || o.cols() != y.cols() || mask.rows() != o.rows() || mask.cols() != o.cols())
    throw std::invalid_argument("shape mismatch between outputs, targets and mask");
}

}  // namespace

double loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, const Mask& mask) {
  check_shapes(outputs, targets, mask);
  return mask.select((outputs - targets).array().square(), 0.0).sum();
}

double regularized_objective(double loss_value, const StructuralParams& structure, double l2_weight) {
  if (l2_weight < 0.0) throw std::invalid_argument("regularized_objective: negative L2 weight");
  return loss_value + l2_weight * (structure.vertex.squaredNorm() + structure.edge.squaredNorm());
}

double r_squared(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, const Mask& mask) {
  check_shapes(outputs, targets, mask);
  const long count = mask.count();
  if (count < 2) throw std::invalid_argument("r_squared: at least two masked-in points are required");
  const double mean = mask.select(targets.array(), 0.0).sum() / static_cast<double>(count);
  const double ss_tot = mask.select((targets.array() - mean).square(), 0.0).sum();
  if (ss_tot <= 0.0) throw std::invalid_argument("r_squared: zero target variance");
  const double ss_res = mask.select((outputs - targets).array().square(), 0.0).sum();
  return 1.0 - ss_res / ss_tot;
}

void FitAccumulator::add(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, int burn_in) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw std::invalid_argument("FitAccumulator: shape mismatch");
  for (Eigen::Index t = std::max(burn_in, 0); t < targets.cols(); ++t)
    for (Eigen::Index i = 0; i < targets.rows(); ++i) {
      const long double y = targets(i, t);
      const long double d = outputs(i, t) - targets(i, t);
      sse_ += d * d;
      sum_y_ += y;
      sum_y2_ += y * y;
      ++count_;
    }
}

void FitAccumulator::merge(const FitAccumulator& other) {
  sse_ += other.sse_;
  sum_y_ += other.sum_y_;
  sum_y2_ += other.sum_y2_;
  count_ += other.count_;
}

double FitAccumulator::mse() const {
  if (count_ == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(sse_ / count_);
}

double FitAccumulator::r2() const {
  if (count_ < 2) return std::numeric_limits<double>::quiet_NaN();
  const long double ss_tot = sum_y2_ - sum_y_ * sum_y_ / count_;
  if (ss_tot <= 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(1.0L - sse_ / ss_tot);
}

void TrainConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("TrainConfig: step_size must be > 0");
  if (batch_trials < 1) throw std::invalid_argument("TrainConfig: batch_trials must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("TrainConfig: max_steps must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (!(l2_structural >= 0.0)) throw std::invalid_argument("TrainConfig: l2_structural must be >= 0");
  if (burn_in < 0) throw std::invalid_argument("TrainConfig: burn_in must be >= 0");
}

FitAccumulator evaluate_split(const GNNArchitecture& arch, const DynamicalParams& dynamical,
                              const StructuralParams& structure, const TraceDataset& data, Split split, int burn_in) {
  FitAccumulator acc;
  const auto trials = data.trials_in(split);
  if (trials.empty()) return acc;
  std::vector<Eigen::MatrixXd> inputs;
  inputs.reserve(trials.size());
  for (int r : trials) inputs.push_back(data.inputs[r]);
  const auto outputs = rollout_outputs(arch, dynamical, structure, inputs);
  for (std::size_t k = 0; k < trials.size(); ++k) acc.add(outputs[k], data.targets[trials[k]], burn_in);
  return acc;
}

SplitMetrics to_metrics(const FitAccumulator& acc) { return {acc.mse(), acc.r2(), acc.count()}; }

void compute_metrics(TrainedEnsemble& ensemble, std::span<const TraceDataset> datasets, int burn_in) {
  ensemble.per_graph.clear();
  FitAccumulator pooled[3];
  for (std::size_t g = 0; g < datasets.size(); ++g) {
    GraphMetrics gm;
    SplitMetrics* slots[3] = {&gm.train, &gm.validation, &gm.test};
    for (int s = 0; s < 3; ++s) {
      const FitAccumulator acc = evaluate_split(ensemble.arch, ensemble.dynamical, ensemble.structural[g],
                                                datasets[g], static_cast<Split>(s), burn_in);
      *slots[s] = to_metrics(acc);
      pooled[s].merge(acc);
    }
    ensemble.per_graph.push_back(gm);
  }
  ensemble.pooled = {to_metrics(pooled[0]), to_metrics(pooled[1]), to_metrics(pooled[2])};
}

Adam::Adam(double step_size, double beta1, double beta2, double epsilon)
    : lr_(step_size), b1_(beta1), b2_(beta2), eps_(epsilon) {}

void Adam::step(std::span<double* const> params, std::span<const Eigen::MatrixXd> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam::step: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& g : grads) {
      m_.push_back(Eigen::VectorXd::Zero(g.size()));
      v_.push_back(Eigen::VectorXd::Zero(g.size()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Eigen::Map<const Eigen::VectorXd> g(grads[k].data(), grads[k].size());
    Eigen::Map<Eigen::VectorXd> p(params[k], grads[k].size());
    m_[k] = b1_ * m_[k] + (1.0 - b1_) * g;
    v_[k] = b2_ * v_[k] + (1.0 - b2_) * g.cwiseAbs2();
    p.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

namespace {

void push_blocks(MMLPParams& p, std::vector<std::pair<double*, Eigen::Index>>& out) {
  for (auto& w : p.weights) out.emplace_back(w.data(), w.size());
  for (auto& b : p.biases) out.emplace_back(b.data(), b.size());
}

void push_vars(const MMLPVars& v, std::vector<ad::Var>& out) {
  out.insert(out.end(), v.weights.begin(), v.weights.end());
  out.insert(out.end(), v.biases.begin(), v.biases.end());
}

double pooled_validation_mse(const TrainedEnsemble& e, std::span<const TraceDataset> datasets, int burn_in) {
  FitAccumulator acc;
  for (std::size_t g = 0; g < datasets.size(); ++g)
    acc.merge(evaluate_split(e.arch, e.dynamical, e.structural[g], datasets[g], Split::Validation, burn_in));
  return acc.mse();
}

}  // namespace

std::vector<std::pair<double*, Eigen::Index>> dynamical_blocks(DynamicalParams& theta) {
  std::vector<std::pair<double*, Eigen::Index>> out;
  push_blocks(theta.message, out);
  push_blocks(theta.gate_z, out);
  push_blocks(theta.gate_r, out);
  push_blocks(theta.gate_s, out);
  out.emplace_back(theta.readout_weight.data(), theta.readout_weight.size());
  out.emplace_back(theta.readout_bias.data(), theta.readout_bias.size());
  return out;
}

std::vector<ad::Var> dynamical_vars(const DynamicalVars& vars) {
  std::vector<ad::Var> out;
  push_vars(vars.message, out);
  push_vars(vars.gate_z, out);
  push_vars(vars.gate_r, out);
  push_vars(vars.gate_s, out);
  out.push_back(vars.readout_weight);
  out.push_back(vars.readout_bias);
  return out;
}

TrainedEnsemble train_multi(std::span<const TraceDataset> datasets, const GNNArchitecture& arch,
                            const TrainConfig& config, const TrainingObserver& observer) {
  config.validate();
  arch.validate();
  if (datasets.empty()) throw std::invalid_argument("train_multi: no datasets");
  std::vector<std::vector<int>> train_trials;
  std::vector<double> weights;
  for (const auto& ds : datasets) {
    ds.validate();
    if (config.burn_in >= ds.duration) throw std::invalid_argument("train_multi: burn-in must be shorter than every trial");
    train_trials.push_back(ds.trials_in(Split::Train));
    if (train_trials.back().empty()) throw std::invalid_argument("train_multi: dataset without training trials");
    weights.push_back(config.size_weighted_sampling
                          ? static_cast<double>(train_trials.back().size()) * ds.n * ds.duration
                          : 1.0);
  }

  TrainedEnsemble ens;
  ens.arch = arch;
  {
    Rng init = make_rng(config.seed, "init", 0);
    ens.dynamical = init_dynamical(arch, init);
    for (std::size_t g = 0; g < datasets.size(); ++g) {
      Rng rng = make_rng(config.seed, "init", g + 1);
      ens.structural.push_back(init_structural(arch, datasets[g].n, rng));
    }
  }

  Adam dyn_opt(config.step_size, config.beta1, config.beta2, config.adam_epsilon);
  std::vector<Adam> str_opt(datasets.size(), Adam(config.step_size, config.beta1, config.beta2, config.adam_epsilon));
  Rng batch_rng = make_rng(config.seed, "batch");
  std::discrete_distribution<int> pick_graph(weights.begin(), weights.end());

  TrainedEnsemble best = ens;
  double best_val = pooled_validation_mse(ens, datasets, config.burn_in);
  if (!std::isfinite(best_val)) best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  int step = 0;
  for (; step < config.max_steps; ++step) {
    const int g = pick_graph(batch_rng);
    const TraceDataset& ds = datasets[g];
    std::vector<int> pool = train_trials[g];
    const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(config.batch_trials));
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> u(k, pool.size() - 1);
      std::swap(pool[k], pool[u(batch_rng)]);
    }
    std::vector<Eigen::MatrixXd> inputs;
    for (std::size_t k = 0; k < take; ++k) inputs.push_back(ds.inputs[pool[k]]);

    ad::Tape tape;
    const DynamicalVars dv = record_dynamical(tape, ens.dynamical, true);
    const StructuralVars sv = record_structural(tape, ens.structural[g], true);
    const auto outputs = tape_rollout(arch, dv, sv, ds.n, inputs);
    const Eigen::Index nb = outputs.empty() ? 0 : outputs.front().cols();
    std::vector<ad::Var> terms;
    for (std::size_t t = static_cast<std::size_t>(config.burn_in); t < outputs.size(); ++t) {
      Eigen::MatrixXd y(arch.output_dim, nb);
      for (std::size_t k = 0; k < take; ++k)
        y.middleCols(static_cast<Eigen::Index>(k) * ds.n, ds.n) =
            Eigen::Map<const Eigen::MatrixXd>(ds.targets[pool[k]].col(static_cast<Eigen::Index>(t)).data(),
                                              arch.output_dim, ds.n);
      terms.push_back(ad::squared_norm(outputs[t] - tape.constant(std::move(y))));
    }
    ad::Var objective = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) objective = objective + terms[k];
    if (config.l2_structural > 0.0)
      objective = objective + ad::affine(ad::squared_norm(sv.vertex) + ad::squared_norm(sv.edge),
                                         config.l2_structural, 0.0);
    const double obj_value = objective.value()(0, 0);
    if (!std::isfinite(obj_value)) {
      std::ostringstream os;
      os << "train_multi: non-finite objective at step " << step;
      throw std::runtime_error(os.str());
    }
    tape.backward(objective);

    const auto vars = dynamical_vars(dv);
    const auto blocks = dynamical_blocks(ens.dynamical);
    std::vector<double*> ptrs;
    std::vector<Eigen::MatrixXd> grads;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      ptrs.push_back(blocks[k].first);
      grads.push_back(vars[k].grad());
    }
    dyn_opt.step(ptrs, grads);
    double* sptr[2] = {ens.structural[g].vertex.data(), ens.structural[g].edge.data()};
    const Eigen::MatrixXd sgrad[2] = {sv.vertex.grad(), sv.edge.grad()};
    str_opt[g].step(sptr, sgrad);

    TrainingRecord rec{step, g, obj_value, nan};
    const bool check = (step + 1) % config.eval_interval == 0;
    if (check) {
      rec.val_mse = pooled_validation_mse(ens, datasets, config.burn_in);
      if (rec.val_mse < best_val) {
        best_val = rec.val_mse;
        best = ens;
        best.best_step = step + 1;
        stale = 0;
      } else {
        ++stale;
      }
    }
    ens.curve.push_back(rec);
    if (observer) observer(rec);
    if (check && stale >= config.patience) {
      ++step;
      break;
    }
  }
  best.curve = std::move(ens.curve);
  best.steps_run = step;
  compute_metrics(best, datasets, config.burn_in);
  return best;
}

double baseline_mse(std::span<const TraceDataset> datasets, int burn_in) {
  if (datasets.empty()) throw std::invalid_argument("baseline_mse: no datasets");
  std::vector<double> per;
  for (const auto& ds : datasets) {
    FitAccumulator acc;
    for (int r : ds.trials_in(Split::Test)) acc.add(ds.reference[r], ds.targets[r], burn_in);
    per.push_back(acc.mse());
  }
  std::sort(per.begin(), per.end());
  const std::size_t m = per.size();
  return m % 2 == 1 ? per[m / 2] : 0.5 * (per[m / 2 - 1] + per[m / 2]);
}

}  // namespace bpgnn
