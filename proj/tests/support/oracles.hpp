#pragma once

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bpgnn/bp.hpp"
#include "bpgnn/pgm.hpp"
#include "bpgnn/random.hpp"

namespace testsupport {

/// Parent of vertex v is uniform in [0, v).
inline std::vector<std::pair<int, int>> random_tree(int n, bpgnn::Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  for (int v = 1; v < n; ++v) edges.emplace_back(std::uniform_int_distribution<int>(0, v - 1)(rng), v);
  return edges;
}

inline int tree_diameter(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  auto farthest = [&](int s) {
    std::vector<int> d(static_cast<std::size_t>(n), -1);
    std::vector<int> q{s};
    d[s] = 0;
    for (std::size_t k = 0; k < q.size(); ++k)
      for (int u : adj[q[k]])
        if (d[u] < 0) {
          d[u] = d[q[k]] + 1;
          q.push_back(u);
        }
    int best = s;
    for (int v = 0; v < n; ++v)
      if (d[v] > d[best]) best = v;
    return std::make_pair(best, d[best]);
  };
  return farthest(farthest(0).first).second;
}

inline bpgnn::DiscretePGM random_discrete_tree(int n, int max_states, bpgnn::Rng& rng) {
  bpgnn::DiscretePGM p;
  std::uniform_real_distribution<double> pos(0.2, 2.0);
  for (int i = 0; i < n; ++i) {
    const int k = std::uniform_int_distribution<int>(2, max_states)(rng);
    p.states.push_back(k);
    Eigen::VectorXd phi(k);
    for (int s = 0; s < k; ++s) phi(s) = pos(rng);
    p.singleton.push_back(phi);
  }
  for (auto [a, b] : random_tree(n, rng)) {
    Eigen::MatrixXd t(p.states[a], p.states[b]);
    for (Eigen::Index e = 0; e < t.size(); ++e) t(e) = pos(rng);
    p.edges.push_back({a, b, t});
  }
  return p;
}

/// Exact marginals by summing the joint over every configuration.
inline std::vector<Eigen::VectorXd> enumerate_marginals(const bpgnn::DiscretePGM& p) {
  const int n = p.size();
  std::vector<Eigen::VectorXd> marg;
  for (int i = 0; i < n; ++i) marg.push_back(Eigen::VectorXd::Zero(p.states[i]));
  std::vector<int> x(static_cast<std::size_t>(n), 0);
  double z = 0.0;
  while (true) {
    double w = 1.0;
    for (int i = 0; i < n; ++i) w *= p.singleton[i](x[i]);
    for (const auto& e : p.edges) w *= e.table(x[e.a], x[e.b]);
    z += w;
    for (int i = 0; i < n; ++i) marg[i](x[i]) += w;
    int k = 0;
    while (k < n && ++x[k] == p.states[k]) x[k++] = 0;
    if (k == n) break;
  }
  for (auto& m : marg) m /= z;
  return marg;
}

/// Diagonally dominant precision matrix on a random tree.
inline bpgnn::GaussianPGM random_gaussian_tree(int n, bpgnn::Rng& rng, std::vector<std::pair<int, int>>* edges_out = nullptr) {
  const auto edges = random_tree(n, rng);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  std::uniform_real_distribution<double> mag(0.1, 0.6);
  for (auto [i, j] : edges) {
    const double j_ij = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    a(i, j) = a(j, i) = j_ij;
  }
  std::uniform_real_distribution<double> extra(0.3, 1.5);
  for (int i = 0; i < n; ++i) a(i, i) = a.row(i).cwiseAbs().sum() + extra(rng);
  if (edges_out) *edges_out = edges;
  return bpgnn::GaussianPGM{a, 0.01};
}

/// diag(A⁻¹) through a full-pivoting LU, independent of the library's solver.
inline Eigen::VectorXd inverse_diagonal(const Eigen::MatrixXd& a) { return a.fullPivLu().inverse().diagonal(); }

inline Eigen::VectorXd lu_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) { return a.fullPivLu().solve(b); }

}  // namespace testsupport
