#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/bp.hpp"
#include "bpgnn/gnn.hpp"

namespace bpgnn {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// rows×cols mask that excludes the first burn_in columns (time steps).
Mask burn_in_mask(Eigen::Index rows, Eigen::Index cols, int burn_in);

/// Sum of squared differences over masked-in entries.
double loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, const Mask& mask);

/// loss + λ·(Σ‖v_i‖² + Σ‖e_ij‖²).
double regularized_objective(double loss_value, const StructuralParams& structure, double l2_weight);

/// 1 − SS_res/SS_tot over masked-in entries. Throws on fewer than two
/// points or zero target variance.
double r_squared(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, const Mask& mask);

/// Running sums for MSE and R² pooled over many trials or graphs.
class FitAccumulator {
 public:
  void add(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, int burn_in);
  void merge(const FitAccumulator& other);
  long count() const { return count_; }
  double mse() const;
  double r2() const;

 private:
  long double sse_ = 0;
  long double sum_y_ = 0;
  long double sum_y2_ = 0;
  long count_ = 0;
};

struct TrainConfig {
  double step_size = 1e-3;
  int batch_trials = 16;
  int max_steps = 20000;
  /// Validation checks without improvement before stopping.
  int patience = 20;
  int eval_interval = 200;
  double l2_structural = 1e-4;
  int burn_in = 10;
  std::uint64_t seed = 0;
  /// Sample graphs proportionally to their training data instead of uniformly.
  bool size_weighted_sampling = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct SplitMetrics {
  double mse = 0.0;
  double r2 = 0.0;
  long points = 0;
};

struct GraphMetrics {
  SplitMetrics train;
  SplitMetrics validation;
  SplitMetrics test;
};

struct TrainingRecord {
  int step = 0;
  int graph_id = 0;
  double objective = 0.0;
  /// NaN on steps without a validation check.
  double val_mse = 0.0;
};

struct TrainedEnsemble {
  GNNArchitecture arch;
  DynamicalParams dynamical;
  std::vector<StructuralParams> structural;
  std::vector<GraphMetrics> per_graph;
  GraphMetrics pooled;
  std::vector<TrainingRecord> curve;
  int best_step = 0;
  int steps_run = 0;

  int graphs() const { return static_cast<int>(structural.size()); }
};

/// Metrics of one model on one split of one dataset, excluding the first
/// burn_in steps of every trial.
FitAccumulator evaluate_split(const GNNArchitecture& arch, const DynamicalParams& dynamical,
                              const StructuralParams& structure, const TraceDataset& data, Split split, int burn_in);

SplitMetrics to_metrics(const FitAccumulator& acc);

/// Fills per_graph and pooled metrics of an ensemble.
void compute_metrics(TrainedEnsemble& ensemble, std::span<const TraceDataset> datasets, int burn_in);

/// Adam on a flat list of parameter blocks.
class Adam {
 public:
  Adam(double step_size, double beta1, double beta2, double epsilon);
  void step(std::span<double* const> params, std::span<const Eigen::MatrixXd> grads);

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

/// Parameter blocks of Θ^D in a fixed order, matching dynamical_vars().
std::vector<std::pair<double*, Eigen::Index>> dynamical_blocks(DynamicalParams& theta);
std::vector<ad::Var> dynamical_vars(const DynamicalVars& vars);

using TrainingObserver = std::function<void(const TrainingRecord&)>;

/// Trains one shared Θ^D and one Θ^S per dataset. Each step draws a graph,
/// a batch of its training trials, and applies Adam to the gradient of the
/// summed squared error plus the L2 penalty on that graph's Θ^S. Returns
/// the parameters with the best pooled validation MSE.
TrainedEnsemble train_multi(std::span<const TraceDataset> datasets, const GNNArchitecture& arch,
                            const TrainConfig& config, const TrainingObserver& observer = {});

/// Median over datasets of the test-split MSE of the noiseless reference
/// traces against the noisy targets.
double baseline_mse(std::span<const TraceDataset> datasets, int burn_in = 0);

}  // namespace bpgnn
