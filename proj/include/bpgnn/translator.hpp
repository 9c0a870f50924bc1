#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/bp.hpp"
#include "bpgnn/gnn.hpp"
#include "bpgnn/mmlp.hpp"
#include "bpgnn/pgm.hpp"
#include "bpgnn/train.hpp"

namespace bpgnn {

enum class TranslatorDirection { VertexForward, VertexInverse, EdgeForward, EdgeInverse };

std::string to_string(TranslatorDirection d);
TranslatorDirection translator_direction_from_string(const std::string& s);
constexpr std::array<TranslatorDirection, 4> all_translator_directions{
    TranslatorDirection::VertexForward, TranslatorDirection::VertexInverse, TranslatorDirection::EdgeForward,
    TranslatorDirection::EdgeInverse};
bool is_vertex(TranslatorDirection d);
bool is_forward(TranslatorDirection d);

/// Graph-level partition plus the fraction of vertices or edges of each
/// training graph used as training pairs.
struct TranslatorSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  double pair_fraction = 0.8;

  void validate(int graph_count) const;
};

TranslatorSplit make_translator_split(int graph_count, int train, int validation, int test, double pair_fraction,
                                      std::uint64_t seed);

struct TranslatorConfig {
  std::vector<int> hidden{32, 32};
  double step_size = 3e-3;
  int max_epochs = 5000;
  int eval_interval = 25;
  int patience = 20;

  void validate() const;
};

/// Structural parameters and PGM attributes of the training and validation
/// graphs only; test-graph attributes are never stored here.
struct TranslatorData {
  GNNArchitecture arch;
  TranslatorSplit split;
  std::vector<StructuralParams> train_structure;
  std::vector<Eigen::MatrixXd> train_precision;
  std::vector<StructuralParams> validation_structure;
  std::vector<Eigen::MatrixXd> validation_precision;
};

TranslatorData make_translator_data(const TrainedEnsemble& ensemble, std::span<const GaussianPGM> pgms,
                                    const TranslatorSplit& split);

/// Input/output pairs of one direction for one graph, as columns.
struct PairSet {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd outputs;
};

PairSet translator_pairs(const GNNArchitecture& arch, const StructuralParams& structure,
                         const Eigen::MatrixXd& precision, TranslatorDirection direction);

/// Two-hidden-layer ELU regressor on z-scored inputs and outputs.
struct Regressor {
  TranslatorDirection direction = TranslatorDirection::VertexForward;
  MMLPSpec spec;
  MMLPParams params;
  Eigen::VectorXd input_mean, input_scale;
  Eigen::VectorXd output_mean, output_scale;
  /// Range of every input component over the training pairs.
  Eigen::VectorXd input_min, input_max;
  int epochs = 0;
  double validation_mse = 0.0;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& inputs) const;
  /// Throws std::out_of_range when an input leaves the training range by
  /// more than 20% of its span.
  void check_range(const Eigen::MatrixXd& inputs) const;
};

/// Fits one direction on sampled pairs of the training graphs with full-batch
/// Adam, early-stopped on the validation graphs.
Regressor fit_translator(const TranslatorData& data, TranslatorDirection direction, const TranslatorConfig& config,
                         std::uint64_t seed);

struct GraphTranslator {
  std::array<std::optional<Regressor>, 4> regressors;

  const Regressor& get(TranslatorDirection d) const;
  void set(Regressor r);
  bool has(TranslatorDirection d) const { return regressors[static_cast<std::size_t>(d)].has_value(); }
};

/// Pooled R² of a regressor over every pair of the given graphs.
double translator_r2(const Regressor& regressor, const GNNArchitecture& arch,
                     std::span<const StructuralParams> structures, std::span<const Eigen::MatrixXd> precisions);

using AttributeMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

struct RecoveredPrecision {
  Eigen::MatrixXd estimate;
  /// (Â + Âᵀ)/2.
  Eigen::MatrixXd symmetrized;
  Eigen::VectorXd diagonal;
  /// |symmetrized_ij| > threshold off the diagonal.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> adjacency;
  double threshold = 0.0;
};

/// Â_ii = vertex_map(v_i), Â_ij = edge_map(e_ij) for the edge list of a full
/// graph. Maps take parameters as columns and return 1×N attributes.
RecoveredPrecision recover_precision_matrix(const GNNArchitecture& arch, const StructuralParams& structure,
                                            const AttributeMap& vertex_map, const AttributeMap& edge_map,
                                            double threshold);

RecoveredPrecision recover_precision_matrix(const GNNArchitecture& arch, const StructuralParams& structure,
                                            const GraphTranslator& translator, double threshold);

/// ε times the span of off-diagonal training attributes seen by the edge
/// forward regressor.
double default_adjacency_threshold(const TranslatorData& data, double epsilon);

/// F1 of predicted against true off-diagonal support.
double support_f1(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& predicted,
                  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& truth);

/// Structural parameters for a new PGM from the inverse regressors. Colorless
/// architectures need no translator.
StructuralParams construct_gnn(const GNNArchitecture& arch, const GaussianPGM& pgm, const GraphTranslator* translator,
                               bool allow_extrapolation = false);

struct ModelVariant {
  std::string name;
  GNNArchitecture arch;
  DynamicalParams dynamical;
  /// One entry per evaluated graph, aligned with the datasets.
  std::vector<StructuralParams> structure;
};

struct ComparisonRow {
  int graph_id = 0;
  std::string variant;
  double mse = 0.0;
  double r2 = 0.0;
};

struct TraceRow {
  int graph_id = 0;
  std::string variant;
  int vertex = 0;
  int t = 0;
  double output = 0.0;
  double target = 0.0;
};

struct GeneralizationReport {
  std::vector<ComparisonRow> rows;
  std::vector<TraceRow> example;
  /// Test MSE pooled over graphs, per variant in input order.
  std::vector<double> pooled_mse;
  bool all_finite = true;
};

GeneralizationReport evaluate_generalization(std::span<const TraceDataset> datasets,
                                             std::span<const ModelVariant> variants, int burn_in);

}  // namespace bpgnn
