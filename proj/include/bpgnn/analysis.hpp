#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/gnn.hpp"
#include "bpgnn/pgm.hpp"
#include "bpgnn/train.hpp"

namespace bpgnn {

/// (Σλ)² / Σλ². Throws std::domain_error on an all-zero spectrum and
/// std::invalid_argument on negative entries.
template <typename Derived>
double effective_dimension(const Eigen::MatrixBase<Derived>& variances) {
  using Scalar = typename Derived::Scalar;
  if (variances.size() == 0) throw std::invalid_argument("effective_dimension: empty spectrum");
  if ((variances.array() < Scalar(0)).any()) throw std::invalid_argument("effective_dimension: negative variance");
  const Scalar sq = variances.squaredNorm();
  if (!(sq > Scalar(0))) throw std::domain_error("effective_dimension: all-zero spectrum");
  const Scalar s = variances.sum();
  return static_cast<double>(s * s / sq);
}

struct PCAResult {
  Eigen::VectorXd mean;
  /// Orthonormal principal directions as rows, by descending variance.
  Eigen::MatrixXd components;
  Eigen::VectorXd variances;

  /// NaN when the spectrum is all zero.
  double effective_dimension() const;
  /// Coordinates of points (D×N) on the first k components (k×N).
  Eigen::MatrixXd project(const Eigen::MatrixXd& points, int k) const;
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& coords) const;
};

/// PCA of the columns of points (D×N, N ≥ 2) from the sample covariance.
/// Each component is signed so that its largest-magnitude entry is positive.
PCAResult pca(const Eigen::MatrixXd& points);

/// Deterministic random subset of at most cap columns, order preserved.
Eigen::MatrixXd subsample_columns(const Eigen::MatrixXd& points, Eigen::Index cap, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Scalar coordinate of a group of points on its own leading PC.
struct ProxyProjection {
  Eigen::VectorXd mean;
  Eigen::VectorXd direction;
  /// Proxies of the points the projection was built from.
  Eigen::VectorXd proxies;

  double project(const Eigen::VectorXd& point) const { return (point - mean).dot(direction); }
  Eigen::VectorXd reconstruct(double proxy) const { return mean + proxy * direction; }
  double observed_min() const { return proxies.minCoeff(); }
  double observed_max() const { return proxies.maxCoeff(); }
};

ProxyProjection make_proxy(const Eigen::MatrixXd& points);

/// Per-graph rollouts recorded with intermediates; rollouts[g] holds the
/// trials analysed for graph g.
using GraphRollouts = std::vector<std::vector<RolloutResult>>;

/// Post-update states s_i^t (t ≥ burn_in) of one vertex, as columns.
Eigen::MatrixXd vertex_states(std::span<const RolloutResult> rollouts, int vertex, int burn_in);
Eigen::MatrixXd vertex_aggregates(std::span<const RolloutResult> rollouts, int vertex, int burn_in);
Eigen::MatrixXd edge_messages(std::span<const RolloutResult> rollouts, int edge, int burn_in);

struct ProjectionRow {
  int graph = 0;
  /// Vertex or edge index within its graph.
  int item = 0;
  double x = 0.0;
  double y = 0.0;
  /// A_ii for vertex-indexed rows, A_ij for edge-indexed rows.
  double color = 0.0;
};

struct ManifoldSection {
  PCAResult pca;
  double effective_dimension = 0.0;
  std::vector<ProjectionRow> projection;
};

struct ManifoldReport {
  ManifoldSection states;
  std::optional<ManifoldSection> messages;
  std::optional<ManifoldSection> aggregated;
  std::optional<ManifoldSection> vertex_params;
  std::optional<ManifoldSection> edge_params;
};

struct ManifoldOptions {
  int burn_in = 10;
  /// Points kept before PCA.
  Eigen::Index max_points = 200000;
  /// Rows kept in each 2-D projection table.
  Eigen::Index max_projection_rows = 20000;
  std::uint64_t seed = 0;
};

/// PCA and effective dimension of pooled states, pairwise messages,
/// aggregated messages, vertex parameters and edge parameters, with 2-D
/// projections colored by the matching PGM attribute.
ManifoldReport manifold_report(const TrainedEnsemble& ensemble, const GraphRollouts& rollouts,
                               std::span<const GaussianPGM> pgms, const ManifoldOptions& options = {});

struct GridAxis {
  double min = 0.0;
  double max = 0.0;
  int steps = 11;
};

struct GridRow {
  double u = 0.0;
  double v = 0.0;
  double value = 0.0;
};

/// Observed range of a scalar axis; grids may extend 20% of its span beyond it.
struct ObservedRange {
  double min = 0.0;
  double max = 0.0;
};

/// Δs̃ of vertex i over (m̃_i, x_i) with the state fixed at the vertex's mean
/// state. Rows are ordered u-major.
std::vector<GridRow> update_grid(const GNNArchitecture& arch, const DynamicalParams& theta,
                                 const StructuralParams& structure, int vertex, const ProxyProjection& state_proxy,
                                 const ProxyProjection& aggregate_proxy, const ObservedRange& input_range,
                                 const GridAxis& message_axis, const GridAxis& input_axis);

/// m̃_ij of one edge over (s̃_i, s̃_j).
std::vector<GridRow> message_grid(const GNNArchitecture& arch, const DynamicalParams& theta,
                                  const StructuralParams& structure, int edge, const ProxyProjection& target_state,
                                  const ProxyProjection& source_state, const ProxyProjection& message_proxy,
                                  const GridAxis& target_axis, const GridAxis& source_axis);

}  // namespace bpgnn
