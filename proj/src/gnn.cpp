#include "bpgnn/gnn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bpgnn {

std::string to_string(Connectivity c) { return c == Connectivity::Full ? "full" : "null"; }

Connectivity connectivity_from_string(const std::string& s) {
  if (s == "full") return Connectivity::Full;
  if (s == "null") return Connectivity::Null;
  throw std::invalid_argument("unknown connectivity '" + s + "' (expected 'null' or 'full')");
}

void GNNArchitecture::validate() const {
  if (state_dim < 1) throw std::invalid_argument("GNNArchitecture: D_s must be >= 1");
  if (connectivity == Connectivity::Full && message_dim < 1)
    throw std::invalid_argument("GNNArchitecture: D_m must be >= 1 with full connectivity");
  if (vertex_dim < 0 || edge_dim < 0 || message_dim < 0 || input_dim < 0 || output_dim < 0)
    throw std::invalid_argument("GNNArchitecture: negative dimension");
  for (int w : message_hidden)
    if (w < 1) throw std::invalid_argument("GNNArchitecture: message hidden widths must be >= 1");
  for (int w : gate_hidden)
    if (w < 1) throw std::invalid_argument("GNNArchitecture: gate hidden widths must be >= 1");
}

MMLPSpec GNNArchitecture::message_spec() const {
  return MMLPSpec{2 * state_dim, edge_dim, message_hidden, message_dim};
}

MMLPSpec GNNArchitecture::gate_spec() const {
  return MMLPSpec{input_dim + message_dim + state_dim, vertex_dim, gate_hidden, state_dim};
}

std::vector<std::pair<int, int>> edge_list(Connectivity c, int n) {
  std::vector<std::pair<int, int>> out;
  if (c == Connectivity::Null) return out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) out.emplace_back(i, j);
  return out;
}

bool StructuralParams::matches(const GNNArchitecture& arch) const {
  const auto e = static_cast<Eigen::Index>(edge_list(arch.connectivity, n).size());
  return vertex.rows() == arch.vertex_dim && vertex.cols() == n && edge.rows() == arch.edge_dim && edge.cols() == e;
}

bool DynamicalParams::matches(const GNNArchitecture& arch) const {
  const MMLPSpec g = arch.gate_spec();
  return message.matches(arch.message_spec()) && gate_z.matches(g) && gate_r.matches(g) && gate_s.matches(g) &&
         readout_weight.rows() == arch.output_dim && readout_weight.cols() == arch.state_dim &&
         readout_bias.size() == arch.output_dim;
}

StructuralParams init_structural(const GNNArchitecture& arch, int n, Rng& rng) {
  StructuralParams p;
  p.n = n;
  const auto e = static_cast<Eigen::Index>(edge_list(arch.connectivity, n).size());
  p.vertex.resize(arch.vertex_dim, n);
  p.edge.resize(arch.edge_dim, e);
  for (Eigen::Index k = 0; k < p.vertex.size(); ++k) p.vertex.data()[k] = normal(rng, 0.0, 0.1);
  for (Eigen::Index k = 0; k < p.edge.size(); ++k) p.edge.data()[k] = normal(rng, 0.0, 0.1);
  return p;
}

DynamicalParams init_dynamical(const GNNArchitecture& arch, Rng& rng) {
  arch.validate();
  DynamicalParams d;
  d.message = init_params(arch.message_spec(), InitScheme::FanInUniform, rng);
  d.gate_z = init_params(arch.gate_spec(), InitScheme::FanInUniform, rng);
  d.gate_r = init_params(arch.gate_spec(), InitScheme::FanInUniform, rng);
  d.gate_s = init_params(arch.gate_spec(), InitScheme::FanInUniform, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.state_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  d.readout_weight.resize(arch.output_dim, arch.state_dim);
  for (Eigen::Index k = 0; k < d.readout_weight.size(); ++k) d.readout_weight.data()[k] = u(rng);
  d.readout_bias = Eigen::VectorXd::Zero(arch.output_dim);
  return d;
}

Eigen::VectorXd message(const GNNArchitecture& arch, const DynamicalParams& theta, const Eigen::VectorXd& s_i,
                        const Eigen::VectorXd& s_j, const Eigen::VectorXd& e_ij) {
  if (s_i.size() != arch.state_dim || s_j.size() != arch.state_dim)
    throw std::invalid_argument("message: state dimension mismatch");
  Eigen::VectorXd in(2 * arch.state_dim);
  in << s_i, s_j;
  return mmlp_forward(arch.message_spec(), theta.message, in, e_ij);
}

Eigen::VectorXd aggregate(std::span<const Eigen::VectorXd> messages, int dim) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
  for (const auto& m : messages) {
    if (m.size() != dim) throw std::invalid_argument("aggregate: message dimension mismatch");
    acc += m;
  }
  return acc;
}

UpdateResult update(const GNNArchitecture& arch, const DynamicalParams& theta, const Eigen::VectorXd& s,
                    const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::VectorXd& v) {
  if (s.size() != arch.state_dim || x.size() != arch.input_dim || m.size() != arch.message_dim)
    throw std::invalid_argument("update: dimension mismatch");
  const MMLPSpec spec = arch.gate_spec();
  Eigen::VectorXd in(spec.input_dim);
  in << x, m, s;
  UpdateResult r;
  r.update_gate = mmlp_forward(spec, theta.gate_z, in, v).unaryExpr([](double z) { return logistic(z); });
  r.reset_gate = mmlp_forward(spec, theta.gate_r, in, v).unaryExpr([](double z) { return logistic(z); });
  const Eigen::VectorXd cand = mmlp_forward(spec, theta.gate_s, in, v).array().tanh().matrix();
  r.state = (1.0 - r.update_gate.array()) * s.array() + r.update_gate.array() * cand.array();
  return r;
}

Eigen::VectorXd readout(const DynamicalParams& theta, const Eigen::VectorXd& s) {
  return theta.readout_weight * s + theta.readout_bias;
}

Eigen::MatrixXd RolloutResult::output_matrix() const {
  if (outputs.empty()) return {};
  const Eigen::Index rows = outputs.front().size();
  Eigen::MatrixXd out(rows, steps());
  for (int t = 0; t < steps(); ++t) out.col(t) = Eigen::Map<const Eigen::VectorXd>(outputs[t].data(), rows);
  return out;
}

namespace {

// Column-batched evaluator for B trials on one graph: vertex column b·n + i,
// edge column b·E + e.
class BatchEngine {
 public:
  BatchEngine(const GNNArchitecture& arch, const DynamicalParams& theta, const StructuralParams& st, int batch)
      : arch_(arch), theta_(theta), n_(st.n), batch_(batch) {
    arch.validate();
    if (!theta.matches(arch)) throw std::invalid_argument("rollout: dynamical parameters do not match architecture");
    if (!st.matches(arch)) throw std::invalid_argument("rollout: structural parameters do not match architecture");
    const auto edges = edge_list(arch.connectivity, n_);
    e_ = static_cast<Eigen::Index>(edges.size());
    const Eigen::Index nb = n_ * batch_;
    const Eigen::Index eb = e_ * batch_;
    tgt_.resize(eb);
    src_.resize(eb);
    Eigen::MatrixXd edge_meta(arch.edge_dim, eb);
    for (int b = 0; b < batch_; ++b)
      for (Eigen::Index e = 0; e < e_; ++e) {
        tgt_[b * e_ + e] = b * n_ + edges[e].first;
        src_[b * e_ + e] = b * n_ + edges[e].second;
        edge_meta.col(b * e_ + e) = st.edge.col(e);
      }
    Eigen::MatrixXd vertex_meta(arch.vertex_dim, nb);
    for (int b = 0; b < batch_; ++b) vertex_meta.middleCols(b * n_, n_) = st.vertex;
    msg_spec_ = arch.message_spec();
    gate_spec_ = arch.gate_spec();
    if (e_ > 0) msg_terms_ = mmlp_meta_terms(msg_spec_, theta.message, edge_meta, eb);
    z_terms_ = mmlp_meta_terms(gate_spec_, theta.gate_z, vertex_meta, nb);
    s_terms_ = mmlp_meta_terms(gate_spec_, theta.gate_s, vertex_meta, nb);
  }

  Eigen::Index vertex_cols() const { return n_ * batch_; }

  struct Step {
    Eigen::MatrixXd messages;
    Eigen::MatrixXd aggregated;
    Eigen::MatrixXd state;
    Eigen::MatrixXd output;
  };

  Step step(const Eigen::MatrixXd& s, const Eigen::MatrixXd& x, bool keep_messages) const {
    const Eigen::Index nb = vertex_cols();
    const int ds = arch_.state_dim;
    Step out;
    out.aggregated = Eigen::MatrixXd::Zero(arch_.message_dim, nb);
    if (e_ > 0) {
      const Eigen::MatrixXd& w1 = theta_.message.weights.front();
      const Eigen::MatrixXd a = w1.leftCols(ds) * s;
      const Eigen::MatrixXd c = w1.middleCols(ds, ds) * s;
      Eigen::MatrixXd act = msg_terms_.front();
      for (Eigen::Index k = 0; k < act.cols(); ++k) act.col(k) += a.col(tgt_[k]) + c.col(src_[k]);
      for (int l = 1; l <= msg_spec_.layers(); ++l) {
        if (l > 1) {
          const auto& w = theta_.message.weights[static_cast<std::size_t>(l - 1)];
          act = w.leftCols(msg_spec_.width(l - 1)) * act + msg_terms_[static_cast<std::size_t>(l - 1)];
        }
        if (l < msg_spec_.layers()) act = act.unaryExpr([](double z) { return elu(z); });
      }
      for (Eigen::Index k = 0; k < act.cols(); ++k) out.aggregated.col(tgt_[k]) += act.col(k);
      if (keep_messages) out.messages = std::move(act);
    }
    Eigen::MatrixXd in(gate_spec_.input_dim, nb);
    in << x, out.aggregated, s;
    const Eigen::MatrixXd z =
        mmlp_apply(gate_spec_, theta_.gate_z, z_terms_, in).unaryExpr([](double v) { return logistic(v); });
    const Eigen::MatrixXd cand = mmlp_apply(gate_spec_, theta_.gate_s, s_terms_, in).array().tanh().matrix();
    out.state = s + z.cwiseProduct(cand - s);
    out.output = theta_.readout_weight * out.state;
    out.output.colwise() += theta_.readout_bias;
    return out;
  }

 private:
  const GNNArchitecture& arch_;
  const DynamicalParams& theta_;
  int n_;
  int batch_;
  Eigen::Index e_ = 0;
  std::vector<Eigen::Index> tgt_;
  std::vector<Eigen::Index> src_;
  MMLPSpec msg_spec_;
  MMLPSpec gate_spec_;
  std::vector<Eigen::MatrixXd> msg_terms_;
  std::vector<Eigen::MatrixXd> z_terms_;
  std::vector<Eigen::MatrixXd> s_terms_;
};

void check_inputs(const GNNArchitecture& arch, int n, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != static_cast<Eigen::Index>(n) * arch.input_dim)
    throw std::invalid_argument("rollout: input rows must equal n·D_x");
}

[[noreturn]] void diverged(int t) {
  std::ostringstream os;
  os << "rollout diverged: non-finite state at step " << t;
  throw std::runtime_error(os.str());
}

}  // namespace

RolloutResult rollout(const GNNArchitecture& arch, const DynamicalParams& theta, const StructuralParams& structure,
                      const Eigen::MatrixXd& inputs, const std::optional<Eigen::MatrixXd>& initial_state) {
  const int n = structure.n;
  check_inputs(arch, n, inputs);
  const BatchEngine engine(arch, theta, structure, 1);
  RolloutResult r;
  Eigen::MatrixXd s = initial_state ? *initial_state : Eigen::MatrixXd::Zero(arch.state_dim, n);
  if (s.rows() != arch.state_dim || s.cols() != n) throw std::invalid_argument("rollout: initial state shape mismatch");
  r.states.push_back(s);
  for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(inputs.col(t).data(), arch.input_dim, n);
    auto st = engine.step(s, x, true);
    if (!st.state.allFinite()) diverged(static_cast<int>(t));
    if (st.messages.size() == 0) st.messages.resize(arch.message_dim, 0);
    s = st.state;
    r.states.push_back(std::move(st.state));
    r.messages.push_back(std::move(st.messages));
    r.aggregated.push_back(std::move(st.aggregated));
    r.outputs.push_back(std::move(st.output));
  }
  return r;
}

std::vector<Eigen::MatrixXd> rollout_outputs(const GNNArchitecture& arch, const DynamicalParams& theta,
                                             const StructuralParams& structure,
                                             std::span<const Eigen::MatrixXd> inputs) {
  if (inputs.empty()) return {};
  const int n = structure.n;
  const int batch = static_cast<int>(inputs.size());
  const Eigen::Index t_len = inputs.front().cols();
  for (const auto& in : inputs) {
    check_inputs(arch, n, in);
    if (in.cols() != t_len) throw std::invalid_argument("rollout_outputs: trials must share a duration");
  }
  const BatchEngine engine(arch, theta, structure, batch);
  const Eigen::Index nb = engine.vertex_cols();
  std::vector<Eigen::MatrixXd> out(inputs.size(), Eigen::MatrixXd(static_cast<Eigen::Index>(n) * arch.output_dim, t_len));
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(arch.state_dim, nb);
  Eigen::MatrixXd x(arch.input_dim, nb);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int b = 0; b < batch; ++b)
      x.middleCols(static_cast<Eigen::Index>(b) * n, n) =
          Eigen::Map<const Eigen::MatrixXd>(inputs[b].col(t).data(), arch.input_dim, n);
    auto st = engine.step(s, x, false);
    if (!st.state.allFinite()) diverged(static_cast<int>(t));
    s = std::move(st.state);
    for (int b = 0; b < batch; ++b) {
      const Eigen::MatrixXd block = st.output.middleCols(static_cast<Eigen::Index>(b) * n, n);
      out[b].col(t) = Eigen::Map<const Eigen::VectorXd>(block.data(), block.size());
    }
  }
  return out;
}

DynamicalVars record_dynamical(ad::Tape& tape, const DynamicalParams& theta, bool trainable) {
  DynamicalVars v;
  v.message = record_params(tape, theta.message, trainable);
  v.gate_z = record_params(tape, theta.gate_z, trainable);
  v.gate_r = record_params(tape, theta.gate_r, trainable);
  v.gate_s = record_params(tape, theta.gate_s, trainable);
  v.readout_weight = trainable ? tape.variable(theta.readout_weight) : tape.constant(theta.readout_weight);
  Eigen::MatrixXd b = theta.readout_bias;
  v.readout_bias = trainable ? tape.variable(std::move(b)) : tape.constant(std::move(b));
  return v;
}

StructuralVars record_structural(ad::Tape& tape, const StructuralParams& structure, bool trainable) {
  StructuralVars v;
  v.vertex = trainable ? tape.variable(structure.vertex) : tape.constant(structure.vertex);
  v.edge = trainable ? tape.variable(structure.edge) : tape.constant(structure.edge);
  return v;
}

ad::Var message(const GNNArchitecture& arch, const DynamicalVars& theta, const ad::Var& s_i, const ad::Var& s_j,
                const ad::Var& e_ij) {
  return mmlp_forward(arch.message_spec(), theta.message, ad::concat_rows({s_i, s_j}), e_ij);
}

ad::Var update(const GNNArchitecture& arch, const DynamicalVars& theta, const ad::Var& s, const ad::Var& x,
               const ad::Var& m, const ad::Var& v) {
  const MMLPSpec spec = arch.gate_spec();
  const ad::Var in = ad::concat_rows({x, m, s});
  const ad::Var z = ad::logistic(mmlp_forward(spec, theta.gate_z, in, v));
  const ad::Var cand = ad::tanh(mmlp_forward(spec, theta.gate_s, in, v));
  return s + ad::cwise_product(z, cand - s);
}

ad::Var readout(const DynamicalVars& theta, const ad::Var& s) {
  return ad::add_col(ad::matmul(theta.readout_weight, s), theta.readout_bias);
}

std::vector<ad::Var> tape_rollout(const GNNArchitecture& arch, const DynamicalVars& theta,
                                  const StructuralVars& structure, int n, std::span<const Eigen::MatrixXd> inputs) {
  arch.validate();
  std::vector<ad::Var> outputs;
  if (inputs.empty()) return outputs;
  ad::Tape& tape = *theta.readout_weight.tape();
  const int batch = static_cast<int>(inputs.size());
  const Eigen::Index t_len = inputs.front().cols();
  for (const auto& in : inputs) {
    check_inputs(arch, n, in);
    if (in.cols() != t_len) throw std::invalid_argument("tape_rollout: trials must share a duration");
  }
  const auto edges = edge_list(arch.connectivity, n);
  const auto e = static_cast<Eigen::Index>(edges.size());
  if (structure.vertex.rows() != arch.vertex_dim || structure.vertex.cols() != n || structure.edge.rows() != arch.edge_dim ||
      structure.edge.cols() != e)
    throw std::invalid_argument("tape_rollout: structural parameters do not match architecture");
  const Eigen::Index nb = static_cast<Eigen::Index>(n) * batch;
  const Eigen::Index eb = e * batch;

  std::vector<Eigen::Index> tgt(eb), src(eb), edge_of(eb), vertex_of(nb);
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index k = 0; k < e; ++k) {
      tgt[b * e + k] = b * n + edges[k].first;
      src[b * e + k] = b * n + edges[k].second;
      edge_of[b * e + k] = k;
    }
    for (int i = 0; i < n; ++i) vertex_of[b * n + i] = i;
  }
  const ad::IndexList tgt_idx = ad::make_index(std::move(tgt));
  const ad::IndexList src_idx = ad::make_index(std::move(src));

  const MMLPSpec msg_spec = arch.message_spec();
  const MMLPSpec gate_spec = arch.gate_spec();
  const ad::Var vertex_meta = ad::gather_cols(structure.vertex, ad::make_index(std::move(vertex_of)));
  const TapeMMLP gate_z(gate_spec, theta.gate_z, vertex_meta, nb);
  const TapeMMLP gate_s(gate_spec, theta.gate_s, vertex_meta, nb);

  std::optional<TapeMMLP> msg;
  ad::Var w_target, w_source;
  if (e > 0) {
    const ad::Var edge_meta = ad::gather_cols(structure.edge, ad::make_index(std::move(edge_of)));
    msg.emplace(msg_spec, theta.message, edge_meta, eb);
    w_target = ad::block_cols(msg->first_input_weight(), 0, arch.state_dim);
    w_source = ad::block_cols(msg->first_input_weight(), arch.state_dim, arch.state_dim);
  }
  const ad::Var no_messages = tape.constant(Eigen::MatrixXd::Zero(arch.message_dim, nb));

  ad::Var s = tape.constant(Eigen::MatrixXd::Zero(arch.state_dim, nb));
  Eigen::MatrixXd x(arch.input_dim, nb);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int b = 0; b < batch; ++b)
      x.middleCols(static_cast<Eigen::Index>(b) * n, n) =
          Eigen::Map<const Eigen::MatrixXd>(inputs[b].col(t).data(), arch.input_dim, n);
    ad::Var agg = no_messages;
    if (msg) {
      const ad::Var pre = ad::gather_cols(ad::matmul(w_target, s), tgt_idx) +
                          ad::gather_cols(ad::matmul(w_source, s), src_idx) + msg->first_meta_term();
      agg = ad::scatter_add_cols(msg->from_first_preactivation(pre), tgt_idx, nb);
    }
    const ad::Var in = ad::concat_rows({tape.constant(x), agg, s});
    const ad::Var z = ad::logistic(gate_z(in));
    const ad::Var cand = ad::tanh(gate_s(in));
    s = s + ad::cwise_product(z, cand - s);
    outputs.push_back(ad::add_col(ad::matmul(theta.readout_weight, s), theta.readout_bias));
  }
  return outputs;
}

}  // namespace bpgnn
