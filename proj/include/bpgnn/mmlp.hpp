#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/autodiff.hpp"
#include "bpgnn/random.hpp"

namespace bpgnn {

inline double elu(double z) { return z >= 0.0 ? z : std::expm1(z); }
inline double elu_derivative(double z) { return z >= 0.0 ? 1.0 : std::exp(z); }
inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Shape of a meta-MLP: every layer sees [x^l; ζ]. Hidden layers use ELU,
/// the last layer is linear.
struct MMLPSpec {
  int input_dim = 0;
  int meta_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;

  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  /// Width of activation l, l = 0 being the input.
  int width(int l) const;
  /// (rows, cols) of the weight of layer l = 1..L.
  std::pair<int, int> weight_shape(int l) const;
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const MMLPSpec&) const = default;
};

struct MMLPParams {
  /// weights[l-1] has shape weight_shape(l); the last meta_dim columns
  /// multiply ζ.
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  bool matches(const MMLPSpec& spec) const;
};

enum class InitScheme {
  /// Uniform in ±fan_in^{-1/2}, biases zero.
  FanInUniform,
  Zero,
};

MMLPParams init_params(const MMLPSpec& spec, InitScheme scheme, Rng& rng);
MMLPParams init_params(const MMLPSpec& spec, InitScheme scheme, std::uint64_t seed);

/// Column-batched forward pass. x is input_dim×N; meta is meta_dim×N or
/// meta_dim×1 (shared by all columns).
Eigen::MatrixXd mmlp_forward(const MMLPSpec& spec, const MMLPParams& params, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& meta);

Eigen::VectorXd mmlp_forward(const MMLPSpec& spec, const MMLPParams& params, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& meta);

/// Meta contributions W^l_ζ·ζ + b^l for every layer, reusable across many
/// inputs with the same ζ columns.
std::vector<Eigen::MatrixXd> mmlp_meta_terms(const MMLPSpec& spec, const MMLPParams& params,
                                             const Eigen::MatrixXd& meta, Eigen::Index cols);

Eigen::MatrixXd mmlp_apply(const MMLPSpec& spec, const MMLPParams& params,
                           const std::vector<Eigen::MatrixXd>& meta_terms, const Eigen::MatrixXd& x);

/// mMLP parameters recorded on a tape.
struct MMLPVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

MMLPVars record_params(ad::Tape& tape, const MMLPParams& params, bool trainable);

/// Tape counterpart of mmlp_meta_terms / mmlp_apply. The meta Var may have
/// zero rows.
class TapeMMLP {
 public:
  TapeMMLP(const MMLPSpec& spec, const MMLPVars& vars, const ad::Var& meta, Eigen::Index cols);

  ad::Var operator()(const ad::Var& x) const;

  /// Weight columns acting on the non-meta input of layer 1.
  const ad::Var& first_input_weight() const { return input_weights_.front(); }
  const ad::Var& first_meta_term() const { return meta_terms_.front(); }
  /// Applies layers 2..L to a precomputed layer-1 pre-activation.
  ad::Var from_first_preactivation(const ad::Var& pre) const;

 private:
  MMLPSpec spec_;
  std::vector<ad::Var> input_weights_;
  std::vector<ad::Var> meta_terms_;
};

ad::Var mmlp_forward(const MMLPSpec& spec, const MMLPVars& vars, const ad::Var& x, const ad::Var& meta);

}  // namespace bpgnn
