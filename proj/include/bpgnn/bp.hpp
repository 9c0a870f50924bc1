#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/pgm.hpp"
#include "bpgnn/random.hpp"

namespace bpgnn {

struct BPConfig {
  /// Damping coefficient in [0, 1); 1 is accepted to freeze messages.
  double gamma = 0.7;
  /// Std of the processing noise.
  double noise_sigma = 0.05;
  int steps = 100;

  void validate() const;
};

/// Raised when a cavity precision turns non-positive.
class BPDivergence : public std::runtime_error {
 public:
  BPDivergence(int target, int source, int step);
  int target;
  int source;
  int step;
};

/// Natural parameters of every directed Gaussian message m_ij(θ_i), indexed
/// by GaussianBP::edges().
struct GaussianMessageSet {
  Eigen::VectorXd precision;
  Eigen::VectorXd potential;
};

struct GaussianBPStep {
  GaussianMessageSet messages;
  Eigen::VectorXd means;
  Eigen::VectorXd sigmas;
};

/// Damped, noisy Gaussian belief propagation on the graph of a GaussianPGM.
/// Every non-zero off-diagonal entry is an edge.
class GaussianBP {
 public:
  struct DirectedEdge {
    int target;  // i: the message is a function of θ_i
    int source;  // j
    int reverse;  // index of (j, i)
    double coupling;  // J_ij
  };

  explicit GaussianBP(GaussianPGM pgm);

  const GaussianPGM& pgm() const { return pgm_; }
  const std::vector<DirectedEdge>& edges() const { return edges_; }
  int size() const { return pgm_.size(); }

  /// Vacuous messages, P = h = 0.
  GaussianMessageSet initial_messages() const;

  /// One synchronous damped update. Noise (std config.noise_sigma) is added
  /// to the linear parameter of each outgoing message when rng is given.
  /// step_index only labels divergence errors.
  GaussianBPStep step(const GaussianMessageSet& messages, const Eigen::VectorXd& bias,
                      const BPConfig& config, Rng* rng, int step_index = 0) const;

  /// Marginal means and sigmas implied by a message set.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> marginals(const GaussianMessageSet& messages,
                                                         const Eigen::VectorXd& bias) const;

 private:
  GaussianPGM pgm_;
  std::vector<DirectedEdge> edges_;
  std::vector<std::vector<int>> incoming_;  // per vertex: edges whose target it is
};

/// Pairwise discrete model with strictly positive potentials.
struct DiscretePGM {
  struct Edge {
    int a;
    int b;
    /// table(x_a, x_b) = ψ_ab(x_a, x_b)
    Eigen::MatrixXd table;
  };

  std::vector<int> states;
  std::vector<Eigen::VectorXd> singleton;
  std::vector<Edge> edges;

  int size() const { return static_cast<int>(states.size()); }
  void validate() const;
};

/// Log-domain messages of discrete BP; log_messages[k] is the message into
/// edges()[k].target, normalized in the probability domain.
struct DiscreteMessageSet {
  std::vector<Eigen::VectorXd> log_messages;
};

struct DiscreteBPStep {
  DiscreteMessageSet messages;
  std::vector<Eigen::VectorXd> marginals;
};

class DiscreteBP {
 public:
  struct DirectedEdge {
    int target;
    int source;
    int pgm_edge;
    bool transposed;  // table is indexed (x_target, x_source) when false
  };

  explicit DiscreteBP(DiscretePGM pgm);

  const std::vector<DirectedEdge>& edges() const { return edges_; }

  /// Uniform messages.
  DiscreteMessageSet initial_messages() const;

  /// Damped log-domain update; noise n_i ~ N(0, σ_n²) is added to every
  /// message into vertex i before renormalization. Singleton potentials
  /// override pgm().singleton when given.
  DiscreteBPStep step(const DiscreteMessageSet& messages, const BPConfig& config, Rng* rng,
                      const std::vector<Eigen::VectorXd>* singleton = nullptr) const;

  std::vector<Eigen::VectorXd> marginals(const DiscreteMessageSet& messages,
                                         const std::vector<Eigen::VectorXd>* singleton = nullptr) const;

  const DiscretePGM& pgm() const { return pgm_; }

 private:
  DiscretePGM pgm_;
  std::vector<DirectedEdge> edges_;
  std::vector<std::vector<int>> incoming_;
};

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct SplitFractions {
  double train = 0.9;
  double validation = 0.05;
  double test = 0.05;
};

/// Noisy BP traces for one PGM: per trial an n×T matrix of biases (inputs),
/// noisy marginal means (targets) and noiseless means (reference).
struct TraceDataset {
  int pgm_id = 0;
  int n = 0;
  int duration = 0;
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> targets;
  std::vector<Eigen::MatrixXd> reference;
  std::vector<Split> split;

  int trials() const { return static_cast<int>(inputs.size()); }
  std::vector<int> trials_in(Split s) const;
  void validate() const;
};

/// Per-trial split assignment: a seeded permutation, with the first
/// round(train·R) trials train and the next round(validation·R) validation.
std::vector<Split> assign_splits(int trials, const SplitFractions& fractions, std::uint64_t seed);

/// Runs BP for every trial on a fresh bias series. Trial r draws its bias
/// from substream ("trial-bias", r) and its noise from ("trial-noise", r).
/// Propagates BPDivergence.
TraceDataset generate_traces(const GaussianPGM& pgm, const BiasSchedule& schedule,
                             const BPConfig& config, int trials, const SplitFractions& split,
                             std::uint64_t seed);

}  // namespace bpgnn
