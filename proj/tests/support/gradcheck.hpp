#pragma once

#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/autodiff.hpp"
#include "bpgnn/gnn.hpp"
#include "bpgnn/mmlp.hpp"
#include "bpgnn/random.hpp"
#include "bpgnn/train.hpp"
#include "finite_diff.hpp"

namespace testsupport {

namespace ad = bpgnn::ad;

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, bpgnn::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index e = 0; e < m.size(); ++e) m(e) = nd(rng);
  return m;
}

/// Entries of magnitude in [0.05, 2], away from the ELU kink.
inline Eigen::MatrixXd off_kink(Eigen::Index r, Eigen::Index c, bpgnn::Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index e = 0; e < m.size(); ++e) m(e) = (rng() & 1 ? 1.0 : -1.0) * u(rng);
  return m;
}

inline void append(Inputs& out, const bpgnn::MMLPParams& p) {
  out.insert(out.end(), p.weights.begin(), p.weights.end());
  for (const auto& b : p.biases) out.emplace_back(b);
}

inline bpgnn::MMLPParams take_params(const Inputs& in, std::size_t& at, int layers) {
  bpgnn::MMLPParams p;
  for (int l = 0; l < layers; ++l) p.weights.push_back(in[at++]);
  for (int l = 0; l < layers; ++l) p.biases.push_back(in[at++].col(0));
  return p;
}

inline bpgnn::MMLPVars take_vars(std::span<const ad::Var> in, std::size_t& at, int layers) {
  bpgnn::MMLPVars v;
  for (int l = 0; l < layers; ++l) v.weights.push_back(in[at++]);
  for (int l = 0; l < layers; ++l) v.biases.push_back(in[at++]);
  return v;
}

inline bpgnn::MMLPParams perturbed(bpgnn::MMLPParams p, bpgnn::Rng& rng, double scale = 0.3) {
  for (auto& w : p.weights) w += random_matrix(w.rows(), w.cols(), rng, scale);
  for (auto& b : p.biases) b += random_matrix(b.size(), 1, rng, scale).col(0);
  return p;
}

inline double check(const ad::GradResult& g, const ScalarFn& plain, const Inputs& x) {
  return max_relative_error(g.gradients, central_difference(plain, x));
}

/// f = Σ w∘elu(x).
inline double gradcheck_elu(bpgnn::Rng& rng) {
  const Eigen::MatrixXd w = random_matrix(3, 4, rng);
  const Inputs x{off_kink(3, 4, rng)};
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) { return ad::sum(ad::cwise_product(t.constant(w), ad::elu(v[0]))); },
      x);
  return check(
      g, [&](const Inputs& in) { return (w.array() * in[0].unaryExpr([](double z) { return bpgnn::elu(z); }).array()).sum(); },
      x);
}

inline bpgnn::MMLPSpec random_spec(bpgnn::Rng& rng) {
  std::uniform_int_distribution<int> d(1, 4), h(0, 2);
  bpgnn::MMLPSpec s{d(rng), d(rng) - 1, {}, d(rng)};
  for (int k = h(rng); k > 0; --k) s.hidden.push_back(d(rng) + 1);
  return s;
}

/// Gradient of Σ w∘mMLP(x, ζ) with respect to x, ζ and every parameter.
inline double gradcheck_mmlp(bpgnn::Rng& rng) {
  const bpgnn::MMLPSpec spec = random_spec(rng);
  const Eigen::Index cols = 3;
  const Eigen::MatrixXd w = random_matrix(spec.output_dim, cols, rng);
  Inputs x{random_matrix(spec.input_dim, cols, rng), random_matrix(spec.meta_dim, cols, rng)};
  append(x, perturbed(bpgnn::init_params(spec, bpgnn::InitScheme::FanInUniform, rng), rng));
  const int L = spec.layers();
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t at = 2;
        const auto vars = take_vars(v, at, L);
        return ad::sum(ad::cwise_product(t.constant(w), bpgnn::mmlp_forward(spec, vars, v[0], v[1])));
      },
      x);
  return check(
      g,
      [&](const Inputs& in) {
        std::size_t at = 2;
        return (w.array() * bpgnn::mmlp_forward(spec, take_params(in, at, L), in[0], in[1]).array()).sum();
      },
      x);
}

inline bpgnn::GNNArchitecture small_arch() {
  bpgnn::GNNArchitecture a;
  a.vertex_dim = 2;
  a.edge_dim = 2;
  a.state_dim = 3;
  a.message_dim = 3;
  a.message_hidden = {4};
  a.gate_hidden = {};
  return a;
}

inline bpgnn::DynamicalParams random_dynamical(const bpgnn::GNNArchitecture& a, bpgnn::Rng& rng) {
  bpgnn::DynamicalParams p = bpgnn::init_dynamical(a, rng);
  p.message = perturbed(p.message, rng);
  p.gate_z = perturbed(p.gate_z, rng);
  p.gate_r = perturbed(p.gate_r, rng);
  p.gate_s = perturbed(p.gate_s, rng);
  p.readout_weight += random_matrix(p.readout_weight.rows(), p.readout_weight.cols(), rng, 0.3);
  p.readout_bias += random_matrix(p.readout_bias.size(), 1, rng, 0.3).col(0);
  return p;
}

/// Σ w·M(s_i, s_j, e_ij) over s_i, s_j, e_ij and Θ_M.
inline double gradcheck_message(bpgnn::Rng& rng) {
  const auto arch = small_arch();
  const auto theta = random_dynamical(arch, rng);
  const Eigen::VectorXd w = random_matrix(arch.message_dim, 1, rng).col(0);
  Inputs x{random_matrix(arch.state_dim, 1, rng, 0.5), random_matrix(arch.state_dim, 1, rng, 0.5),
           random_matrix(arch.edge_dim, 1, rng)};
  append(x, theta.message);
  const int L = arch.message_spec().layers();
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t at = 3;
        bpgnn::DynamicalVars dv;
        dv.message = take_vars(v, at, L);
        return ad::sum(ad::cwise_product(t.constant(w), bpgnn::message(arch, dv, v[0], v[1], v[2])));
      },
      x);
  return check(
      g,
      [&](const Inputs& in) {
        std::size_t at = 3;
        bpgnn::DynamicalParams p = theta;
        p.message = take_params(in, at, L);
        return w.dot(bpgnn::message(arch, p, in[0].col(0), in[1].col(0), in[2].col(0)));
      },
      x);
}

/// Σ w·U(s, x, m, v) over s, x, m, v and all three gates.
inline double gradcheck_update(bpgnn::Rng& rng) {
  const auto arch = small_arch();
  const auto theta = random_dynamical(arch, rng);
  const Eigen::VectorXd w = random_matrix(arch.state_dim, 1, rng).col(0);
  Inputs x{random_matrix(arch.state_dim, 1, rng, 0.5), random_matrix(arch.input_dim, 1, rng),
           random_matrix(arch.message_dim, 1, rng), random_matrix(arch.vertex_dim, 1, rng)};
  append(x, theta.gate_z);
  append(x, theta.gate_r);
  append(x, theta.gate_s);
  const int L = arch.gate_spec().layers();
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t at = 4;
        bpgnn::DynamicalVars dv;
        dv.gate_z = take_vars(v, at, L);
        dv.gate_r = take_vars(v, at, L);
        dv.gate_s = take_vars(v, at, L);
        return ad::sum(ad::cwise_product(t.constant(w), bpgnn::update(arch, dv, v[0], v[1], v[2], v[3])));
      },
      x);
  return check(
      g,
      [&](const Inputs& in) {
        std::size_t at = 4;
        bpgnn::DynamicalParams p = theta;
        p.gate_z = take_params(in, at, L);
        p.gate_r = take_params(in, at, L);
        p.gate_s = take_params(in, at, L);
        return w.dot(bpgnn::update(arch, p, in[0].col(0), in[1].col(0), in[2].col(0), in[3].col(0)).state);
      },
      x);
}

/// Σ w·R(s) over s, W_R and b_R.
inline double gradcheck_readout(bpgnn::Rng& rng) {
  const auto arch = small_arch();
  const auto theta = random_dynamical(arch, rng);
  const Eigen::VectorXd w = random_matrix(arch.output_dim, 1, rng).col(0);
  const Inputs x{random_matrix(arch.state_dim, 1, rng), theta.readout_weight, theta.readout_bias};
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        bpgnn::DynamicalVars dv;
        dv.readout_weight = v[1];
        dv.readout_bias = v[2];
        return ad::sum(ad::cwise_product(t.constant(w), bpgnn::readout(dv, v[0])));
      },
      x);
  return check(
      g,
      [&](const Inputs& in) {
        bpgnn::DynamicalParams p = theta;
        p.readout_weight = in[1];
        p.readout_bias = in[2].col(0);
        return w.dot(bpgnn::readout(p, in[0].col(0)));
      },
      x);
}

/// Masked squared-error loss of a 3-vertex, T=4 rollout over Θ^D and Θ^S,
/// with the first step excluded.
inline double gradcheck_rollout_loss(bpgnn::Rng& rng) {
  const auto arch = small_arch();
  const int n = 3, T = 4, burn_in = 1;
  const auto theta = random_dynamical(arch, rng);
  const auto structure = [&] {
    auto s = bpgnn::init_structural(arch, n, rng);
    s.vertex = random_matrix(s.vertex.rows(), s.vertex.cols(), rng);
    s.edge = random_matrix(s.edge.rows(), s.edge.cols(), rng);
    return s;
  }();
  const Eigen::MatrixXd inputs = random_matrix(n, T, rng);
  const Eigen::MatrixXd targets = random_matrix(n, T, rng, 0.5);
  Inputs x{structure.vertex, structure.edge};
  append(x, theta.message);
  append(x, theta.gate_z);
  append(x, theta.gate_r);
  append(x, theta.gate_s);
  x.push_back(theta.readout_weight);
  x.emplace_back(theta.readout_bias);
  const int Lm = arch.message_spec().layers(), Lg = arch.gate_spec().layers();
  const auto g = ad::grad(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        std::size_t at = 2;
        bpgnn::DynamicalVars dv;
        dv.message = take_vars(v, at, Lm);
        dv.gate_z = take_vars(v, at, Lg);
        dv.gate_r = take_vars(v, at, Lg);
        dv.gate_s = take_vars(v, at, Lg);
        dv.readout_weight = v[at++];
        dv.readout_bias = v[at++];
        const bpgnn::StructuralVars sv{v[0], v[1]};
        const std::vector<Eigen::MatrixXd> batch{inputs};
        const auto outs = bpgnn::tape_rollout(arch, dv, sv, n, batch);
        ad::Var total = t.constant(Eigen::MatrixXd::Zero(1, 1));
        for (int s = burn_in; s < T; ++s)
          total = total + ad::squared_norm(outs[s] - t.constant(targets.col(s).transpose()));
        return total;
      },
      x);
  return check(
      g,
      [&](const Inputs& in) {
        std::size_t at = 2;
        bpgnn::DynamicalParams p;
        p.message = take_params(in, at, Lm);
        p.gate_z = take_params(in, at, Lg);
        p.gate_r = take_params(in, at, Lg);
        p.gate_s = take_params(in, at, Lg);
        p.readout_weight = in[at++];
        p.readout_bias = in[at++].col(0);
        const bpgnn::StructuralParams s{n, in[0], in[1]};
        const auto r = bpgnn::rollout(arch, p, s, inputs);
        return bpgnn::loss(r.output_matrix(), targets, bpgnn::burn_in_mask(n, T, burn_in));
      },
      x);
}

}  // namespace testsupport
