#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/autodiff.hpp"
#include "bpgnn/mmlp.hpp"
#include "bpgnn/random.hpp"

namespace bpgnn {

enum class Connectivity { Null, Full };

std::string to_string(Connectivity c);
Connectivity connectivity_from_string(const std::string& s);

struct GNNArchitecture {
  Connectivity connectivity = Connectivity::Full;
  int vertex_dim = 2;   // D_v
  int edge_dim = 2;     // D_e
  int state_dim = 8;    // D_s
  int message_dim = 8;  // D_m
  int input_dim = 1;    // D_x
  int output_dim = 1;   // D_o
  std::vector<int> message_hidden{16};
  std::vector<int> gate_hidden{};

  void validate() const;
  /// mMLP of [s_i; s_j] with meta e_ij.
  MMLPSpec message_spec() const;
  /// mMLP of [x; m; s] with meta v_i, shared shape of the three gates.
  MMLPSpec gate_spec() const;

  bool operator==(const GNNArchitecture&) const = default;
};

/// Directed edges (i, j), i ≠ j, in lexicographic order; empty for null
/// connectivity. Edge (i, j) carries the message from j into i.
std::vector<std::pair<int, int>> edge_list(Connectivity c, int n);

/// Per-graph structural parameters: vertex is D_v×n, edge is D_e×E with
/// columns ordered as edge_list().
struct StructuralParams {
  int n = 0;
  Eigen::MatrixXd vertex;
  Eigen::MatrixXd edge;

  bool matches(const GNNArchitecture& arch) const;
};

/// Shared canonical-function parameters.
struct DynamicalParams {
  MMLPParams message;
  MMLPParams gate_z;
  MMLPParams gate_r;
  MMLPParams gate_s;
  Eigen::MatrixXd readout_weight;  // D_o×D_s
  Eigen::VectorXd readout_bias;    // D_o

  bool matches(const GNNArchitecture& arch) const;
};

/// Normal(0, 0.1²) per component.
StructuralParams init_structural(const GNNArchitecture& arch, int n, Rng& rng);
DynamicalParams init_dynamical(const GNNArchitecture& arch, Rng& rng);

/// Canonical message for one edge.
Eigen::VectorXd message(const GNNArchitecture& arch, const DynamicalParams& theta, const Eigen::VectorXd& s_i,
                        const Eigen::VectorXd& s_j, const Eigen::VectorXd& e_ij);

/// Elementwise sum; the empty set gives the zero vector of length dim.
Eigen::VectorXd aggregate(std::span<const Eigen::VectorXd> messages, int dim);

struct UpdateResult {
  Eigen::VectorXd state;
  Eigen::VectorXd update_gate;  // z
  Eigen::VectorXd reset_gate;   // r
};

/// Meta-GRU update: z and r gates, s' = (1−z)∘s + z∘tanh(mMLP_s([x; m; s], v)).
UpdateResult update(const GNNArchitecture& arch, const DynamicalParams& theta, const Eigen::VectorXd& s,
                    const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::VectorXd& v);

/// Linear readout W_R·s + b_R.
Eigen::VectorXd readout(const DynamicalParams& theta, const Eigen::VectorXd& s);

/// Intermediates of one rollout. states has T+1 entries (D_s×n, the first
/// being s⁰); messages (D_m×E), aggregated (D_m×n) and outputs (D_o×n) have
/// T entries, outputs[t] being read out after the update consuming x^t.
struct RolloutResult {
  std::vector<Eigen::MatrixXd> states;
  std::vector<Eigen::MatrixXd> messages;
  std::vector<Eigen::MatrixXd> aggregated;
  std::vector<Eigen::MatrixXd> outputs;

  int steps() const { return static_cast<int>(outputs.size()); }
  /// (n·D_o)×T matrix of outputs, row i·D_o + d.
  Eigen::MatrixXd output_matrix() const;
};

/// Full rollout over inputs of shape (n·D_x)×T (row i·D_x + d). Throws
/// std::runtime_error naming the step if a state becomes non-finite.
RolloutResult rollout(const GNNArchitecture& arch, const DynamicalParams& theta, const StructuralParams& structure,
                      const Eigen::MatrixXd& inputs, const std::optional<Eigen::MatrixXd>& initial_state = std::nullopt);

/// Batched rollout of many trials sharing one graph; returns only the output
/// matrices ((n·D_o)×T each), bit-identical to rollout(...).output_matrix().
std::vector<Eigen::MatrixXd> rollout_outputs(const GNNArchitecture& arch, const DynamicalParams& theta,
                                             const StructuralParams& structure,
                                             std::span<const Eigen::MatrixXd> inputs);

struct DynamicalVars {
  MMLPVars message;
  MMLPVars gate_z;
  MMLPVars gate_r;
  MMLPVars gate_s;
  ad::Var readout_weight;
  ad::Var readout_bias;
};

struct StructuralVars {
  ad::Var vertex;
  ad::Var edge;
};

DynamicalVars record_dynamical(ad::Tape& tape, const DynamicalParams& theta, bool trainable);
StructuralVars record_structural(ad::Tape& tape, const StructuralParams& structure, bool trainable);

/// Differentiable canonical functions on columns: s_i, s_j are D_s×N,
/// e_ij is D_e×N or D_e×1; the update returns the new state.
ad::Var message(const GNNArchitecture& arch, const DynamicalVars& theta, const ad::Var& s_i, const ad::Var& s_j,
                const ad::Var& e_ij);
ad::Var update(const GNNArchitecture& arch, const DynamicalVars& theta, const ad::Var& s, const ad::Var& x,
               const ad::Var& m, const ad::Var& v);
ad::Var readout(const DynamicalVars& theta, const ad::Var& s);

/// Differentiable batched rollout. Returns one D_o×(n·B) output node per
/// step, column b·n + i for trial b and vertex i. The reset gate does not
/// influence the outputs and is not recorded.
std::vector<ad::Var> tape_rollout(const GNNArchitecture& arch, const DynamicalVars& theta,
                                  const StructuralVars& structure, int n, std::span<const Eigen::MatrixXd> inputs);

}  // namespace bpgnn
