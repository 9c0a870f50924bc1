#include "bpgnn/translator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bpgnn/random.hpp"

namespace bpgnn {

std::string to_string(TranslatorDirection d) {
  switch (d) {
    case TranslatorDirection::VertexForward: return "vertex-forward";
    case TranslatorDirection::VertexInverse: return "vertex-inverse";
    case TranslatorDirection::EdgeForward: return "edge-forward";
    case TranslatorDirection::EdgeInverse: return "edge-inverse";
  }
  return "unknown";
}

TranslatorDirection translator_direction_from_string(const std::string& s) {
  for (auto d : all_translator_directions)
    if (to_string(d) == s) return d;
  throw std::invalid_argument("unknown translator direction: " + s);
}

bool is_vertex(TranslatorDirection d) {
  return d == TranslatorDirection::VertexForward || d == TranslatorDirection::VertexInverse;
}

bool is_forward(TranslatorDirection d) {
  return d == TranslatorDirection::VertexForward || d == TranslatorDirection::EdgeForward;
}

void TranslatorSplit::validate(int graph_count) const {
  if (!(pair_fraction > 0.0 && pair_fraction <= 1.0))
    throw std::invalid_argument("TranslatorSplit: pair_fraction must lie in (0, 1]");
  std::vector<int> seen(static_cast<std::size_t>(std::max(graph_count, 0)), 0);
  for (const auto* set : {&train, &validation, &test})
    for (int g : *set) {
      if (g < 0 || g >= graph_count) throw std::invalid_argument("TranslatorSplit: graph id out of range");
      if (seen[static_cast<std::size_t>(g)]++) throw std::invalid_argument("TranslatorSplit: sets overlap");
    }
  if (train.empty()) throw std::invalid_argument("TranslatorSplit: no training graphs");
}

TranslatorSplit make_translator_split(int graph_count, int train, int validation, int test, double pair_fraction,
                                      std::uint64_t seed) {
  if (train < 1 || validation < 0 || test < 0 || train + validation + test != graph_count)
    throw std::invalid_argument("make_translator_split: set sizes must cover all graphs");
  std::vector<int> order(static_cast<std::size_t>(graph_count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "translator-split");
  std::shuffle(order.begin(), order.end(), rng);
  TranslatorSplit s;
  s.pair_fraction = pair_fraction;
  s.train.assign(order.begin(), order.begin() + train);
  s.validation.assign(order.begin() + train, order.begin() + train + validation);
  s.test.assign(order.begin() + train + validation, order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  s.validate(graph_count);
  return s;
}

void TranslatorConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("TranslatorConfig: at least one hidden layer required");
  for (int w : hidden)
    if (w < 1) throw std::invalid_argument("TranslatorConfig: hidden widths must be positive");
  if (!(step_size > 0.0)) throw std::invalid_argument("TranslatorConfig: step_size must be positive");
  if (max_epochs < 1 || eval_interval < 1 || patience < 1)
    throw std::invalid_argument("TranslatorConfig: epochs, eval_interval and patience must be positive");
}

TranslatorData make_translator_data(const TrainedEnsemble& ensemble, std::span<const GaussianPGM> pgms,
                                    const TranslatorSplit& split) {
  if (static_cast<int>(pgms.size()) != ensemble.graphs())
    throw std::invalid_argument("make_translator_data: one PGM per trained graph required");
  split.validate(ensemble.graphs());
  TranslatorData d;
  d.arch = ensemble.arch;
  d.split = split;
  for (int g : split.train) {
    d.train_structure.push_back(ensemble.structural[g]);
    d.train_precision.push_back(pgms[static_cast<std::size_t>(g)].precision);
  }
  for (int g : split.validation) {
    d.validation_structure.push_back(ensemble.structural[g]);
    d.validation_precision.push_back(pgms[static_cast<std::size_t>(g)].precision);
  }
  return d;
}

PairSet translator_pairs(const GNNArchitecture& arch, const StructuralParams& structure,
                         const Eigen::MatrixXd& precision, TranslatorDirection direction) {
  const int n = structure.n;
  if (precision.rows() != n || precision.cols() != n)
    throw std::invalid_argument("translator_pairs: precision matrix does not match the graph");
  Eigen::MatrixXd params, attrs;
  if (is_vertex(direction)) {
    if (arch.vertex_dim == 0) throw std::invalid_argument("translator_pairs: architecture has no vertex parameters");
    params = structure.vertex;
    attrs = precision.diagonal().transpose();
  } else {
    if (arch.edge_dim == 0 || arch.connectivity == Connectivity::Null)
      throw std::invalid_argument("translator_pairs: architecture has no edge parameters");
    const auto edges = edge_list(arch.connectivity, n);
    params = structure.edge;
    attrs.resize(1, static_cast<Eigen::Index>(edges.size()));
    for (std::size_t k = 0; k < edges.size(); ++k)
      attrs(0, static_cast<Eigen::Index>(k)) = precision(edges[k].first, edges[k].second);
  }
  if (is_forward(direction)) return {params, attrs};
  return {attrs, params};
}

namespace {

Eigen::MatrixXd hstack(const std::vector<Eigen::MatrixXd>& parts, Eigen::Index rows) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

PairSet collect(const GNNArchitecture& arch, std::span<const StructuralParams> structures,
                std::span<const Eigen::MatrixXd> precisions, TranslatorDirection direction, double fraction,
                std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> ins, outs;
  Eigen::Index in_rows = 0, out_rows = 0;
  for (std::size_t g = 0; g < structures.size(); ++g) {
    PairSet p = translator_pairs(arch, structures[g], precisions[g], direction);
    in_rows = p.inputs.rows();
    out_rows = p.outputs.rows();
    if (fraction < 1.0) {
      const Eigen::Index total = p.inputs.cols();
      const auto keep = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(total)));
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      Rng rng = make_rng(seed, "translator-pairs", g);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(keep));
      std::sort(idx.begin(), idx.end());
      p.inputs = p.inputs(Eigen::all, idx).eval();
      p.outputs = p.outputs(Eigen::all, idx).eval();
    }
    ins.push_back(std::move(p.inputs));
    outs.push_back(std::move(p.outputs));
  }
  return {hstack(ins, in_rows), hstack(outs, out_rows)};
}

Eigen::VectorXd safe_scale(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  Eigen::VectorXd s(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double var = x.cols() > 1 ? (x.row(r).array() - mean(r)).square().sum() / (x.cols() - 1) : 0.0;
    s(r) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

double mse_of(const Regressor& reg, const PairSet& p) {
  if (p.inputs.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  return (reg.predict(p.inputs) - p.outputs).squaredNorm() / static_cast<double>(p.outputs.size());
}

}  // namespace

Eigen::MatrixXd Regressor::predict(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_mean.size()) throw std::invalid_argument("Regressor::predict: input dimension mismatch");
  const Eigen::MatrixXd z = (inputs.colwise() - input_mean).array().colwise() / input_scale.array();
  const Eigen::MatrixXd y = mmlp_forward(spec, params, z, Eigen::MatrixXd(0, 1));
  return (y.array().colwise() * output_scale.array()).matrix().colwise() + output_mean;
}

void Regressor::check_range(const Eigen::MatrixXd& inputs) const {
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    const double margin = 0.2 * (input_max(r) - input_min(r));
    const double lo = inputs.row(r).minCoeff(), hi = inputs.row(r).maxCoeff();
    if (lo < input_min(r) - margin || hi > input_max(r) + margin) {
      std::ostringstream os;
      os << to_string(direction) << ": input range [" << lo << ", " << hi << "] extrapolates beyond training range ["
         << input_min(r) << ", " << input_max(r) << "] ± 20%";
      throw std::out_of_range(os.str());
    }
  }
}

Regressor fit_translator(const TranslatorData& data, TranslatorDirection direction, const TranslatorConfig& config,
                         std::uint64_t seed) {
  config.validate();
  const PairSet train = collect(data.arch, data.train_structure, data.train_precision, direction,
                                data.split.pair_fraction, seed);
  const PairSet val =
      collect(data.arch, data.validation_structure, data.validation_precision, direction, 1.0, seed);
  if (train.inputs.cols() == 0) throw std::invalid_argument("fit_translator: empty training pairs");

  Regressor reg;
  reg.direction = direction;
  reg.spec = {static_cast<int>(train.inputs.rows()), 0, config.hidden, static_cast<int>(train.outputs.rows())};
  reg.input_mean = train.inputs.rowwise().mean();
  reg.input_scale = safe_scale(train.inputs, reg.input_mean);
  reg.output_mean = train.outputs.rowwise().mean();
  reg.output_scale = safe_scale(train.outputs, reg.output_mean);
  reg.input_min = train.inputs.rowwise().minCoeff();
  reg.input_max = train.inputs.rowwise().maxCoeff();
  Rng rng = make_rng(seed, "translator-init", static_cast<std::uint64_t>(direction));
  reg.params = init_params(reg.spec, InitScheme::FanInUniform, rng);

  const Eigen::MatrixXd zx = (train.inputs.colwise() - reg.input_mean).array().colwise() / reg.input_scale.array();
  const Eigen::MatrixXd zy =
      (train.outputs.colwise() - reg.output_mean).array().colwise() / reg.output_scale.array();
  const double inv_count = 1.0 / static_cast<double>(zy.size());

  std::vector<double*> blocks;
  for (auto& w : reg.params.weights) blocks.push_back(w.data());
  for (auto& b : reg.params.biases) blocks.push_back(b.data());
  Adam adam(config.step_size, 0.9, 0.999, 1e-8);

  const bool has_val = val.inputs.cols() > 0;
  MMLPParams best = reg.params;
  double best_val = has_val ? mse_of(reg, val) : std::numeric_limits<double>::infinity();
  int stale = 0;
  int epoch = 0;
  for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
    ad::Tape tape;
    const MMLPVars vars = record_params(tape, reg.params, true);
    const ad::Var out = mmlp_forward(reg.spec, vars, tape.constant(zx), tape.constant(Eigen::MatrixXd(0, 1)));
    const ad::Var l = ad::affine(ad::squared_norm(out - tape.constant(zy)), inv_count, 0.0);
    tape.backward(l);
    std::vector<Eigen::MatrixXd> grads;
    for (const auto& w : vars.weights) grads.push_back(w.grad());
    for (const auto& b : vars.biases) grads.push_back(b.grad());
    adam.step(blocks, grads);
    if (has_val && epoch % config.eval_interval == 0) {
      const double v = mse_of(reg, val);
      if (v < best_val) {
        best_val = v;
        best = reg.params;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  reg.epochs = std::min(epoch, config.max_epochs);
  if (has_val) {
    reg.params = best;
    reg.validation_mse = best_val;
  } else {
    reg.validation_mse = std::numeric_limits<double>::quiet_NaN();
  }
  return reg;
}

const Regressor& GraphTranslator::get(TranslatorDirection d) const {
  const auto& r = regressors[static_cast<std::size_t>(d)];
  if (!r) throw std::invalid_argument("GraphTranslator: no " + to_string(d) + " regressor");
  return *r;
}

void GraphTranslator::set(Regressor r) {
  const auto k = static_cast<std::size_t>(r.direction);
  regressors[k] = std::move(r);
}

double translator_r2(const Regressor& regressor, const GNNArchitecture& arch,
                     std::span<const StructuralParams> structures, std::span<const Eigen::MatrixXd> precisions) {
  if (structures.size() != precisions.size()) throw std::invalid_argument("translator_r2: size mismatch");
  const PairSet p = collect(arch, structures, precisions, regressor.direction, 1.0, 0);
  const Eigen::MatrixXd pred = regressor.predict(p.inputs);
  return r_squared(pred, p.outputs, Mask::Constant(pred.rows(), pred.cols(), true));
}

RecoveredPrecision recover_precision_matrix(const GNNArchitecture& arch, const StructuralParams& structure,
                                            const AttributeMap& vertex_map, const AttributeMap& edge_map,
                                            double threshold) {
  if (!structure.matches(arch)) throw std::invalid_argument("recover_precision_matrix: parameters do not match");
  if (arch.connectivity != Connectivity::Full)
    throw std::invalid_argument("recover_precision_matrix: full connectivity required");
  const int n = structure.n;
  const Eigen::MatrixXd diag = vertex_map(structure.vertex);
  const auto edges = edge_list(arch.connectivity, n);
  const Eigen::MatrixXd off = edge_map(structure.edge);
  if (diag.rows() != 1 || diag.cols() != n || off.rows() != 1 || off.cols() != static_cast<Eigen::Index>(edges.size()))
    throw std::invalid_argument("recover_precision_matrix: translator output has the wrong dimension");
  RecoveredPrecision r;
  r.estimate = Eigen::MatrixXd::Zero(n, n);
  r.estimate.diagonal() = diag.row(0).transpose();
  for (std::size_t k = 0; k < edges.size(); ++k)
    r.estimate(edges[k].first, edges[k].second) = off(0, static_cast<Eigen::Index>(k));
  r.symmetrized = 0.5 * (r.estimate + r.estimate.transpose());
  r.diagonal = r.estimate.diagonal();
  r.threshold = threshold;
  r.adjacency = r.symmetrized.array().abs() > threshold;
  r.adjacency.matrix().diagonal().setConstant(false);
  return r;
}

RecoveredPrecision recover_precision_matrix(const GNNArchitecture& arch, const StructuralParams& structure,
                                            const GraphTranslator& translator, double threshold) {
  const Regressor& v = translator.get(TranslatorDirection::VertexForward);
  const Regressor& e = translator.get(TranslatorDirection::EdgeForward);
  if (v.spec.input_dim != arch.vertex_dim || e.spec.input_dim != arch.edge_dim)
    throw std::invalid_argument("recover_precision_matrix: translator dimension mismatch");
  return recover_precision_matrix(
      arch, structure, [&](const Eigen::MatrixXd& x) { return v.predict(x); },
      [&](const Eigen::MatrixXd& x) { return e.predict(x); }, threshold);
}

double default_adjacency_threshold(const TranslatorData& data, double epsilon) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& a : data.train_precision)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        if (i != j) {
          lo = std::min(lo, a(i, j));
          hi = std::max(hi, a(i, j));
        }
  if (!(hi >= lo)) throw std::invalid_argument("default_adjacency_threshold: no off-diagonal attributes");
  return epsilon * (hi - lo);
}

double support_f1(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& predicted,
                  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw std::invalid_argument("support_f1: shape mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (i == j) continue;
      if (predicted(i, j) && truth(i, j)) ++tp;
      else if (predicted(i, j)) ++fp;
      else if (truth(i, j)) ++fn;
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

StructuralParams construct_gnn(const GNNArchitecture& arch, const GaussianPGM& pgm, const GraphTranslator* translator,
                               bool allow_extrapolation) {
  arch.validate();
  pgm.validate();
  const int n = pgm.size();
  const auto edges = edge_list(arch.connectivity, n);
  StructuralParams s;
  s.n = n;
  s.vertex = Eigen::MatrixXd::Zero(arch.vertex_dim, n);
  s.edge = Eigen::MatrixXd::Zero(arch.edge_dim, static_cast<Eigen::Index>(edges.size()));
  if (arch.vertex_dim > 0) {
    if (!translator) throw std::invalid_argument("construct_gnn: vertex parameters need a translator");
    const Regressor& r = translator->get(TranslatorDirection::VertexInverse);
    const Eigen::MatrixXd a = pgm.precision.diagonal().transpose();
    if (!allow_extrapolation) r.check_range(a);
    s.vertex = r.predict(a);
  }
  if (arch.edge_dim > 0 && !edges.empty()) {
    if (!translator) throw std::invalid_argument("construct_gnn: edge parameters need a translator");
    const Regressor& r = translator->get(TranslatorDirection::EdgeInverse);
    Eigen::MatrixXd a(1, static_cast<Eigen::Index>(edges.size()));
    for (std::size_t k = 0; k < edges.size(); ++k)
      a(0, static_cast<Eigen::Index>(k)) = pgm.precision(edges[k].first, edges[k].second);
    if (!allow_extrapolation) r.check_range(a);
    s.edge = r.predict(a);
  }
  if (!s.matches(arch)) throw std::invalid_argument("construct_gnn: translator dimension mismatch");
  return s;
}

GeneralizationReport evaluate_generalization(std::span<const TraceDataset> datasets,
                                             std::span<const ModelVariant> variants, int burn_in) {
  GeneralizationReport rep;
  for (const ModelVariant& v : variants) {
    if (v.structure.size() != datasets.size())
      throw std::invalid_argument("evaluate_generalization: variant " + v.name + " needs one structure per graph");
    FitAccumulator pooled;
    bool finite = true;
    for (std::size_t g = 0; g < datasets.size(); ++g) {
      const TraceDataset& d = datasets[g];
      ComparisonRow row{d.pgm_id, v.name, std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN()};
      try {
        const FitAccumulator acc = evaluate_split(v.arch, v.dynamical, v.structure[g], d, Split::Test, burn_in);
        pooled.merge(acc);
        row.mse = acc.mse();
        row.r2 = acc.r2();
        if (!std::isfinite(row.mse)) finite = false;
        const auto test = d.trials_in(Split::Test);
        if (!test.empty()) {
          const RolloutResult r = rollout(v.arch, v.dynamical, v.structure[g], d.inputs[test.front()]);
          const Eigen::MatrixXd& y = d.targets[test.front()];
          for (int t = 0; t < r.steps(); ++t)
            for (int i = 0; i < d.n; ++i) rep.example.push_back({d.pgm_id, v.name, i, t, r.outputs[t](0, i), y(i, t)});
        }
      } catch (const std::runtime_error&) {
        finite = false;
      }
      rep.rows.push_back(row);
    }
    rep.all_finite = rep.all_finite && finite;
    rep.pooled_mse.push_back(finite && pooled.count() > 0 ? pooled.mse() : std::numeric_limits<double>::quiet_NaN());
  }
  return rep;
}

}  // namespace bpgnn
