#include "bpgnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "bpgnn/random.hpp"

namespace bpgnn {

double PCAResult::effective_dimension() const {
  if (variances.size() == 0 || !(variances.squaredNorm() > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return bpgnn::effective_dimension(variances);
}

Eigen::MatrixXd PCAResult::project(const Eigen::MatrixXd& points, int k) const {
  if (points.rows() != mean.size()) throw std::invalid_argument("PCAResult::project: dimension mismatch");
  const int kk = std::min<int>(k, static_cast<int>(components.rows()));
  return components.topRows(kk) * (points.colwise() - mean);
}

Eigen::MatrixXd PCAResult::reconstruct(const Eigen::MatrixXd& coords) const {
  Eigen::MatrixXd out = components.topRows(coords.rows()).transpose() * coords;
  out.colwise() += mean;
  return out;
}

PCAResult pca(const Eigen::MatrixXd& points) {
  if (points.cols() < 2) throw std::invalid_argument("pca: at least two points are required");
  if (points.rows() < 1) throw std::invalid_argument("pca: points must have at least one dimension");
  PCAResult r;
  r.mean = points.rowwise().mean();
  const Eigen::MatrixXd centered = points.colwise() - r.mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(points.cols() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");
  const Eigen::Index d = cov.rows();
  r.components.resize(d, d);
  r.variances.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Eigen::Index src = d - 1 - k;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.components.row(k) = v.transpose();
    r.variances(k) = std::max(0.0, es.eigenvalues()(src));
  }
  return r;
}

namespace {

std::vector<Eigen::Index> choose_columns(Eigen::Index total, Eigen::Index cap, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (cap <= 0 || total <= cap) return idx;
  Rng rng = make_rng(seed, "subsample");
  for (Eigen::Index k = 0; k < cap; ++k) {
    std::uniform_int_distribution<Eigen::Index> u(k, total - 1);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(u(rng))]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
  Eigen::VectorXd ranks(n);
  for (Eigen::Index k = 0; k < n;) {
    Eigen::Index e = k;
    while (e + 1 < n && x(order[e + 1]) == x(order[k])) ++e;
    const double avg = 0.5 * static_cast<double>(k + e);
    for (Eigen::Index m = k; m <= e; ++m) ranks(order[m]) = avg;
    k = e + 1;
  }
  return ranks;
}

}  // namespace

Eigen::MatrixXd subsample_columns(const Eigen::MatrixXd& points, Eigen::Index cap, std::uint64_t seed) {
  const auto idx = choose_columns(points.cols(), cap, seed);
  Eigen::MatrixXd out(points.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = points.col(idx[k]);
  return out;
}

double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  const Eigen::VectorXd rx = average_ranks(x);
  const Eigen::VectorXd ry = average_ranks(y);
  const Eigen::VectorXd cx = rx.array() - rx.mean();
  const Eigen::VectorXd cy = ry.array() - ry.mean();
  const double denom = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  if (!(denom > 0.0)) throw std::domain_error("spearman: constant sample");
  return cx.dot(cy) / denom;
}

ProxyProjection make_proxy(const Eigen::MatrixXd& points) {
  const PCAResult p = pca(points);
  ProxyProjection out;
  out.mean = p.mean;
  out.direction = p.components.row(0).transpose();
  out.proxies = (out.direction.transpose() * (points.colwise() - p.mean)).transpose();
  return out;
}

namespace {

template <typename Pick>
Eigen::MatrixXd gather_over_time(std::span<const RolloutResult> rollouts, int burn_in, Eigen::Index rows, Pick pick) {
  Eigen::Index total = 0;
  for (const auto& r : rollouts) total += std::max<Eigen::Index>(0, r.steps() - burn_in);
  Eigen::MatrixXd out(rows, total);
  Eigen::Index c = 0;
  for (const auto& r : rollouts)
    for (int t = std::max(burn_in, 0); t < r.steps(); ++t) out.col(c++) = pick(r, t);
  return out;
}

}  // namespace

Eigen::MatrixXd vertex_states(std::span<const RolloutResult> rollouts, int vertex, int burn_in) {
  if (rollouts.empty()) throw std::invalid_argument("vertex_states: no rollouts");
  const Eigen::Index rows = rollouts.front().states.front().rows();
  return gather_over_time(rollouts, burn_in, rows,
                          [vertex](const RolloutResult& r, int t) { return r.states[t + 1].col(vertex); });
}

Eigen::MatrixXd vertex_aggregates(std::span<const RolloutResult> rollouts, int vertex, int burn_in) {
  if (rollouts.empty() || rollouts.front().aggregated.empty())
    throw std::invalid_argument("vertex_aggregates: missing intermediates");
  const Eigen::Index rows = rollouts.front().aggregated.front().rows();
  return gather_over_time(rollouts, burn_in, rows,
                          [vertex](const RolloutResult& r, int t) { return r.aggregated[t].col(vertex); });
}

Eigen::MatrixXd edge_messages(std::span<const RolloutResult> rollouts, int edge, int burn_in) {
  if (rollouts.empty() || rollouts.front().messages.empty())
    throw std::invalid_argument("edge_messages: missing intermediates");
  const Eigen::Index rows = rollouts.front().messages.front().rows();
  return gather_over_time(rollouts, burn_in, rows,
                          [edge](const RolloutResult& r, int t) { return r.messages[t].col(edge); });
}

namespace {

struct PointCloud {
  std::vector<Eigen::VectorXd> points;
  std::vector<ProjectionRow> keys;

  void add(const Eigen::VectorXd& p, int graph, int item, double color) {
    points.push_back(p);
    keys.push_back({graph, item, 0.0, 0.0, color});
  }
};

ManifoldSection analyse(const PointCloud& cloud, const ManifoldOptions& opt, std::uint64_t salt) {
  const auto total = static_cast<Eigen::Index>(cloud.points.size());
  if (total < 2) throw std::invalid_argument("manifold_report: fewer than two points in a group");
  const Eigen::Index dim = cloud.points.front().size();
  const auto pick = choose_columns(total, opt.max_points, opt.seed + salt);
  Eigen::MatrixXd pts(dim, static_cast<Eigen::Index>(pick.size()));
  for (std::size_t k = 0; k < pick.size(); ++k) pts.col(static_cast<Eigen::Index>(k)) = cloud.points[pick[k]];
  ManifoldSection s;
  s.pca = pca(pts);
  s.effective_dimension = effective_dimension(s.pca.variances);
  const auto rows = choose_columns(total, opt.max_projection_rows, opt.seed + salt + 1000);
  for (Eigen::Index k : rows) {
    const Eigen::MatrixXd xy = s.pca.project(cloud.points[static_cast<std::size_t>(k)], 2);
    ProjectionRow row = cloud.keys[static_cast<std::size_t>(k)];
    row.x = xy(0, 0);
    row.y = xy.rows() > 1 ? xy(1, 0) : 0.0;
    s.projection.push_back(row);
  }
  return s;
}

}  // namespace

ManifoldReport manifold_report(const TrainedEnsemble& ensemble, const GraphRollouts& rollouts,
                               std::span<const GaussianPGM> pgms, const ManifoldOptions& options) {
  const int graphs = ensemble.graphs();
  if (static_cast<int>(rollouts.size()) != graphs || static_cast<int>(pgms.size()) != graphs)
    throw std::invalid_argument("manifold_report: one rollout set and one PGM per graph required");
  const auto& arch = ensemble.arch;
  PointCloud states, messages, aggregated, vparams, eparams;
  for (int g = 0; g < graphs; ++g) {
    const GaussianPGM& pgm = pgms[static_cast<std::size_t>(g)];
    const int n = ensemble.structural[g].n;
    if (pgm.size() != n) throw std::invalid_argument("manifold_report: PGM size does not match its GNN");
    const auto edges = edge_list(arch.connectivity, n);
    if (rollouts[g].empty()) throw std::invalid_argument("manifold_report: missing intermediates");
    for (const RolloutResult& r : rollouts[g]) {
      if (r.states.size() != r.outputs.size() + 1 || r.aggregated.size() != r.outputs.size())
        throw std::invalid_argument("manifold_report: missing intermediates");
      for (int t = std::max(options.burn_in, 0); t < r.steps(); ++t) {
        for (int i = 0; i < n; ++i) {
          states.add(r.states[t + 1].col(i), g, i, pgm.precision(i, i));
          if (!edges.empty()) aggregated.add(r.aggregated[t].col(i), g, i, pgm.precision(i, i));
        }
        for (std::size_t k = 0; k < edges.size(); ++k)
          messages.add(r.messages[t].col(static_cast<Eigen::Index>(k)), g, static_cast<int>(k),
                       pgm.precision(edges[k].first, edges[k].second));
      }
    }
    if (arch.vertex_dim > 0)
      for (int i = 0; i < n; ++i) vparams.add(ensemble.structural[g].vertex.col(i), g, i, pgm.precision(i, i));
    if (arch.edge_dim > 0)
      for (std::size_t k = 0; k < edges.size(); ++k)
        eparams.add(ensemble.structural[g].edge.col(static_cast<Eigen::Index>(k)), g, static_cast<int>(k),
                    pgm.precision(edges[k].first, edges[k].second));
  }
  ManifoldReport rep;
  rep.states = analyse(states, options, 1);
  if (!messages.points.empty()) rep.messages = analyse(messages, options, 2);
  if (!aggregated.points.empty()) rep.aggregated = analyse(aggregated, options, 3);
  if (!vparams.points.empty()) rep.vertex_params = analyse(vparams, options, 4);
  if (!eparams.points.empty()) rep.edge_params = analyse(eparams, options, 5);
  return rep;
}

namespace {

void guard(const GridAxis& axis, double omin, double omax, const char* name) {
  if (axis.steps < 1) throw std::invalid_argument("grid axis needs at least one step");
  const double margin = 0.2 * (omax - omin);
  if (axis.min < omin - margin || axis.max > omax + margin || axis.min > axis.max) {
    std::ostringstream os;
    os << "canonical_function_grid: " << name << " range [" << axis.min << ", " << axis.max
       << "] extrapolates beyond observed [" << omin << ", " << omax << "] ± 20%";
    throw std::out_of_range(os.str());
  }
}

double axis_value(const GridAxis& a, int k) {
  return a.steps == 1 ? a.min : a.min + (a.max - a.min) * k / (a.steps - 1);
}

}  // namespace

std::vector<GridRow> update_grid(const GNNArchitecture& arch, const DynamicalParams& theta,
                                 const StructuralParams& structure, int vertex, const ProxyProjection& state_proxy,
                                 const ProxyProjection& aggregate_proxy, const ObservedRange& input_range,
                                 const GridAxis& message_axis, const GridAxis& input_axis) {
  if (arch.input_dim != 1) throw std::invalid_argument("update_grid: scalar inputs required");
  guard(message_axis, aggregate_proxy.observed_min(), aggregate_proxy.observed_max(), "aggregated-message proxy");
  guard(input_axis, input_range.min, input_range.max, "input");
  const Eigen::VectorXd s = state_proxy.mean;
  const Eigen::VectorXd v = structure.vertex.col(vertex);
  const double base = state_proxy.project(s);
  std::vector<GridRow> out;
  for (int a = 0; a < message_axis.steps; ++a) {
    const double u = axis_value(message_axis, a);
    const Eigen::VectorXd m = aggregate_proxy.reconstruct(u);
    for (int b = 0; b < input_axis.steps; ++b) {
      const double x = axis_value(input_axis, b);
      const UpdateResult r = update(arch, theta, s, Eigen::VectorXd::Constant(1, x), m, v);
      out.push_back({u, x, state_proxy.project(r.state) - base});
    }
  }
  return out;
}

std::vector<GridRow> message_grid(const GNNArchitecture& arch, const DynamicalParams& theta,
                                  const StructuralParams& structure, int edge, const ProxyProjection& target_state,
                                  const ProxyProjection& source_state, const ProxyProjection& message_proxy,
                                  const GridAxis& target_axis, const GridAxis& source_axis) {
  guard(target_axis, target_state.observed_min(), target_state.observed_max(), "target-state proxy");
  guard(source_axis, source_state.observed_min(), source_state.observed_max(), "source-state proxy");
  const Eigen::VectorXd e = structure.edge.col(edge);
  std::vector<GridRow> out;
  for (int a = 0; a < target_axis.steps; ++a) {
    const double u = axis_value(target_axis, a);
    const Eigen::VectorXd si = target_state.reconstruct(u);
    for (int b = 0; b < source_axis.steps; ++b) {
      const double v = axis_value(source_axis, b);
      const Eigen::VectorXd m = message(arch, theta, si, source_state.reconstruct(v), e);
      out.push_back({u, v, message_proxy.project(m)});
    }
  }
  return out;
}

}  // namespace bpgnn
