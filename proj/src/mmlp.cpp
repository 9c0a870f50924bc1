#include "bpgnn/mmlp.hpp"

#include <cmath>
#include <stdexcept>

namespace bpgnn {

int MMLPSpec::width(int l) const {
  if (l == 0) return input_dim;
  if (l == layers()) return output_dim;
  return hidden.at(static_cast<std::size_t>(l - 1));
}

std::pair<int, int> MMLPSpec::weight_shape(int l) const { return {width(l), width(l - 1) + meta_dim}; }

std::size_t MMLPSpec::parameter_count() const {
  std::size_t c = 0;
  for (int l = 1; l <= layers(); ++l) {
    const auto [r, k] = weight_shape(l);
    c += static_cast<std::size_t>(r) * static_cast<std::size_t>(k + 1);
  }
  return c;
}

void MMLPSpec::validate() const {
  if (input_dim < 0 || meta_dim < 0 || output_dim < 0) throw std::invalid_argument("MMLPSpec: negative dimension");
  for (int w : hidden)
    if (w < 1) throw std::invalid_argument("MMLPSpec: hidden widths must be >= 1");
}

bool MMLPParams::matches(const MMLPSpec& spec) const {
  if (static_cast<int>(weights.size()) != spec.layers() || static_cast<int>(biases.size()) != spec.layers())
    return false;
  for (int l = 1; l <= spec.layers(); ++l) {
    const auto [r, c] = spec.weight_shape(l);
    const auto& w = weights[static_cast<std::size_t>(l - 1)];
    if (w.rows() != r || w.cols() != c || biases[static_cast<std::size_t>(l - 1)].size() != r) return false;
  }
  return true;
}

MMLPParams init_params(const MMLPSpec& spec, InitScheme scheme, Rng& rng) {
  spec.validate();
  MMLPParams p;
  for (int l = 1; l <= spec.layers(); ++l) {
    const auto [r, c] = spec.weight_shape(l);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(r, c);
    if (scheme == InitScheme::FanInUniform && c > 0) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) w(i, j) = u(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(r));
  }
  return p;
}

MMLPParams init_params(const MMLPSpec& spec, InitScheme scheme, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(spec, scheme, rng);
}

namespace {

void check_dims(const MMLPSpec& spec, const MMLPParams& params, Eigen::Index x_rows, Eigen::Index meta_rows) {
  if (!params.matches(spec)) throw std::invalid_argument("mmlp_forward: parameters do not match spec");
  if (x_rows != spec.input_dim) throw std::invalid_argument("mmlp_forward: input dimension mismatch");
  if (meta_rows != spec.meta_dim) throw std::invalid_argument("mmlp_forward: meta dimension mismatch");
}

}  // namespace

std::vector<Eigen::MatrixXd> mmlp_meta_terms(const MMLPSpec& spec, const MMLPParams& params,
                                             const Eigen::MatrixXd& meta, Eigen::Index cols) {
  if (meta.rows() != spec.meta_dim) throw std::invalid_argument("mmlp_meta_terms: meta dimension mismatch");
  if (meta.cols() != cols && meta.cols() != 1)
    throw std::invalid_argument("mmlp_meta_terms: meta must have one column or one per input column");
  std::vector<Eigen::MatrixXd> terms;
  for (int l = 1; l <= spec.layers(); ++l) {
    const auto& w = params.weights[static_cast<std::size_t>(l - 1)];
    const auto& b = params.biases[static_cast<std::size_t>(l - 1)];
    const auto wz = w.rightCols(spec.meta_dim);
    if (meta.cols() == 1) {
      const Eigen::VectorXd col = wz * meta + b;
      terms.push_back(col.replicate(1, cols));
    } else {
      Eigen::MatrixXd t = wz * meta;
      t.colwise() += b;
      terms.push_back(std::move(t));
    }
  }
  return terms;
}

Eigen::MatrixXd mmlp_apply(const MMLPSpec& spec, const MMLPParams& params,
                           const std::vector<Eigen::MatrixXd>& meta_terms, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd act = x;
  for (int l = 1; l <= spec.layers(); ++l) {
    const auto& w = params.weights[static_cast<std::size_t>(l - 1)];
    Eigen::MatrixXd pre = w.leftCols(spec.width(l - 1)) * act + meta_terms[static_cast<std::size_t>(l - 1)];
    if (l < spec.layers()) pre = pre.unaryExpr([](double z) { return elu(z); });
    act = std::move(pre);
  }
  return act;
}

Eigen::MatrixXd mmlp_forward(const MMLPSpec& spec, const MMLPParams& params, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& meta) {
  check_dims(spec, params, x.rows(), meta.rows());
  return mmlp_apply(spec, params, mmlp_meta_terms(spec, params, meta, x.cols()), x);
}

Eigen::VectorXd mmlp_forward(const MMLPSpec& spec, const MMLPParams& params, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& meta) {
  const Eigen::MatrixXd out = mmlp_forward(spec, params, Eigen::MatrixXd(x), Eigen::MatrixXd(meta));
  return out.col(0);
}

MMLPVars record_params(ad::Tape& tape, const MMLPParams& params, bool trainable) {
  MMLPVars v;
  for (const auto& w : params.weights) v.weights.push_back(trainable ? tape.variable(w) : tape.constant(w));
  for (const auto& b : params.biases) {
    Eigen::MatrixXd col = b;
    v.biases.push_back(trainable ? tape.variable(std::move(col)) : tape.constant(std::move(col)));
  }
  return v;
}

TapeMMLP::TapeMMLP(const MMLPSpec& spec, const MMLPVars& vars, const ad::Var& meta, Eigen::Index cols)
    : spec_(spec) {
  if (meta.rows() != spec.meta_dim) throw std::invalid_argument("TapeMMLP: meta dimension mismatch");
  if (spec.meta_dim > 0 && meta.cols() != cols) throw std::invalid_argument("TapeMMLP: meta column count mismatch");
  for (int l = 1; l <= spec.layers(); ++l) {
    const auto& w = vars.weights[static_cast<std::size_t>(l - 1)];
    const auto& b = vars.biases[static_cast<std::size_t>(l - 1)];
    const int in = spec.width(l - 1);
    input_weights_.push_back(ad::block_cols(w, 0, in));
    if (spec.meta_dim > 0) {
      meta_terms_.push_back(ad::add_col(ad::matmul(ad::block_cols(w, in, spec.meta_dim), meta), b));
    } else {
      meta_terms_.push_back(ad::broadcast_cols(b, cols));
    }
  }
}

ad::Var TapeMMLP::from_first_preactivation(const ad::Var& pre) const {
  ad::Var act = pre;
  for (int l = 1; l <= spec_.layers(); ++l) {
    if (l > 1) act = ad::matmul(input_weights_[static_cast<std::size_t>(l - 1)], act) + meta_terms_[static_cast<std::size_t>(l - 1)];
    if (l < spec_.layers()) act = ad::elu(act);
  }
  return act;
}

ad::Var TapeMMLP::operator()(const ad::Var& x) const {
  if (x.rows() != spec_.input_dim) throw std::invalid_argument("TapeMMLP: input dimension mismatch");
  return from_first_preactivation(ad::matmul(input_weights_.front(), x) + meta_terms_.front());
}

ad::Var mmlp_forward(const MMLPSpec& spec, const MMLPVars& vars, const ad::Var& x, const ad::Var& meta) {
  return TapeMMLP(spec, vars, meta, x.cols())(x);
}

}  // namespace bpgnn
