#include "bpgnn/bp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bpgnn {

void BPConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("BPConfig: gamma must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("BPConfig: noise_sigma must be >= 0");
  if (steps < 0) throw std::invalid_argument("BPConfig: steps must be >= 0");
}

BPDivergence::BPDivergence(int target_vertex, int source_vertex, int step_index)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "Gaussian BP diverged: non-positive cavity precision on edge (" << target_vertex << ", "
           << source_vertex << ") at step " << step_index;
        return os.str();
      }()),
      target(target_vertex),
      source(source_vertex),
      step(step_index) {}

GaussianBP::GaussianBP(GaussianPGM pgm) : pgm_(std::move(pgm)) {
  pgm_.validate();
  const int n = pgm_.size();
  incoming_.assign(n, {});
  std::vector<std::vector<int>> index(n, std::vector<int>(n, -1));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && pgm_.precision(i, j) != 0.0) {
        index[i][j] = static_cast<int>(edges_.size());
        incoming_[i].push_back(index[i][j]);
        edges_.push_back({i, j, -1, pgm_.precision(i, j)});
      }
  for (auto& e : edges_) e.reverse = index[e.source][e.target];
}

GaussianMessageSet GaussianBP::initial_messages() const {
  const auto m = static_cast<Eigen::Index>(edges_.size());
  return {Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m)};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> GaussianBP::marginals(const GaussianMessageSet& messages,
                                                                   const Eigen::VectorXd& bias) const {
  const int n = size();
  Eigen::VectorXd prec = pgm_.precision.diagonal();
  Eigen::VectorXd pot = bias;
  for (int i = 0; i < n; ++i)
    for (int k : incoming_[i]) {
      prec(i) += messages.precision(k);
      pot(i) += messages.potential(k);
    }
  return {pot.cwiseQuotient(prec), prec.cwiseInverse().cwiseSqrt()};
}

GaussianBPStep GaussianBP::step(const GaussianMessageSet& messages, const Eigen::VectorXd& bias,
                                const BPConfig& config, Rng* rng, int step_index) const {
  const int n = size();
  if (bias.size() != n) throw std::invalid_argument("GaussianBP::step: bias length does not match PGM size");
  const auto m = static_cast<Eigen::Index>(edges_.size());
  if (messages.precision.size() != m || messages.potential.size() != m)
    throw std::invalid_argument("GaussianBP::step: message set does not match the graph");

  Eigen::VectorXd total_prec = pgm_.precision.diagonal();
  Eigen::VectorXd total_pot = bias;
  for (int i = 0; i < n; ++i)
    for (int k : incoming_[i]) {
      total_prec(i) += messages.precision(k);
      total_pot(i) += messages.potential(k);
    }

  const double g = config.gamma;
  GaussianBPStep out;
  out.messages.precision.resize(m);
  out.messages.potential.resize(m);
  std::normal_distribution<double> noise(0.0, config.noise_sigma);
  for (Eigen::Index k = 0; k < m; ++k) {
    const DirectedEdge& e = edges_[k];
    // Cavity at the source excludes the message it received from the target.
    const double cavity_prec = total_prec(e.source) - messages.precision(e.reverse);
    const double cavity_pot = total_pot(e.source) - messages.potential(e.reverse);
    if (!(cavity_prec > 0.0)) throw BPDivergence(e.target, e.source, step_index);
    const double cand_prec = -e.coupling * e.coupling / cavity_prec;
    const double cand_pot = -e.coupling * cavity_pot / cavity_prec;
    out.messages.precision(k) = g * messages.precision(k) + (1.0 - g) * cand_prec;
    double h = g * messages.potential(k) + (1.0 - g) * cand_pot;
    if (rng != nullptr && config.noise_sigma > 0.0) h += noise(*rng);
    out.messages.potential(k) = h;
  }
  auto [means, sigmas] = marginals(out.messages, bias);
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(sigmas(i))) {
      const int src = incoming_[i].empty() ? i : edges_[incoming_[i].front()].source;
      throw BPDivergence(i, src, step_index);
    }
  out.means = std::move(means);
  out.sigmas = std::move(sigmas);
  return out;
}

void DiscretePGM::validate() const {
  const int n = size();
  if (static_cast<int>(singleton.size()) != n)
    throw std::invalid_argument("DiscretePGM: one singleton potential per vertex required");
  for (int i = 0; i < n; ++i) {
    if (states[i] < 1) throw std::invalid_argument("DiscretePGM: vertex needs at least one state");
    if (singleton[i].size() != states[i]) throw std::invalid_argument("DiscretePGM: singleton size mismatch");
    if (!(singleton[i].array() > 0.0).all()) throw std::invalid_argument("DiscretePGM: potentials must be positive");
  }
  for (const auto& e : edges) {
    if (e.a < 0 || e.b < 0 || e.a >= n || e.b >= n || e.a == e.b)
      throw std::invalid_argument("DiscretePGM: invalid edge endpoints");
    if (e.table.rows() != states[e.a] || e.table.cols() != states[e.b])
      throw std::invalid_argument("DiscretePGM: pairwise table shape mismatch");
    if (!(e.table.array() > 0.0).all()) throw std::invalid_argument("DiscretePGM: potentials must be positive");
  }
}

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

DiscreteBP::DiscreteBP(DiscretePGM pgm) : pgm_(std::move(pgm)) {
  pgm_.validate();
  incoming_.assign(pgm_.size(), {});
  for (int k = 0; k < static_cast<int>(pgm_.edges.size()); ++k) {
    const auto& e = pgm_.edges[k];
    incoming_[e.a].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({e.a, e.b, k, false});
    incoming_[e.b].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({e.b, e.a, k, true});
  }
}

DiscreteMessageSet DiscreteBP::initial_messages() const {
  DiscreteMessageSet out;
  for (const auto& e : edges_) {
    const int s = pgm_.states[e.target];
    out.log_messages.push_back(Eigen::VectorXd::Constant(s, -std::log(static_cast<double>(s))));
  }
  return out;
}

std::vector<Eigen::VectorXd> DiscreteBP::marginals(const DiscreteMessageSet& messages,
                                                   const std::vector<Eigen::VectorXd>* singleton) const {
  const auto& phi = singleton != nullptr ? *singleton : pgm_.singleton;
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < pgm_.size(); ++i) {
    Eigen::VectorXd logp = phi[i].array().log();
    for (int k : incoming_[i]) logp += messages.log_messages[k];
    if (!logp.allFinite()) throw std::runtime_error("DiscreteBP: non-finite log-potential");
    out.push_back((logp.array() - log_sum_exp(logp)).exp());
  }
  return out;
}

DiscreteBPStep DiscreteBP::step(const DiscreteMessageSet& messages, const BPConfig& config, Rng* rng,
                                const std::vector<Eigen::VectorXd>* singleton) const {
  const auto& phi = singleton != nullptr ? *singleton : pgm_.singleton;
  const int n = pgm_.size();
  // Log-belief at each vertex including all incoming messages.
  std::vector<Eigen::VectorXd> belief(n);
  for (int i = 0; i < n; ++i) {
    belief[i] = phi[i].array().log();
    for (int k : incoming_[i]) belief[i] += messages.log_messages[k];
  }
  Eigen::VectorXd vertex_noise = Eigen::VectorXd::Zero(n);
  if (rng != nullptr && config.noise_sigma > 0.0)
    for (int i = 0; i < n; ++i) vertex_noise(i) = normal(*rng, 0.0, config.noise_sigma);

  const double g = config.gamma;
  DiscreteBPStep out;
  out.messages.log_messages.resize(edges_.size());
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const DirectedEdge& e = edges_[k];
    const auto& table = pgm_.edges[e.pgm_edge].table;
    // Source belief without the message it received from the target.
    const int back = static_cast<int>(k ^ 1U);
    const Eigen::VectorXd cavity = belief[e.source] - messages.log_messages[back];
    const int si = pgm_.states[e.target];
    Eigen::VectorXd candidate(si);
    for (int xi = 0; xi < si; ++xi) {
      Eigen::VectorXd terms = cavity;
      for (int xj = 0; xj < cavity.size(); ++xj)
        terms(xj) += std::log(e.transposed ? table(xj, xi) : table(xi, xj));
      candidate(xi) = log_sum_exp(terms);
    }
    Eigen::VectorXd updated = g * messages.log_messages[k] + (1.0 - g) * candidate;
    updated.array() += vertex_noise(e.target);
    if (!updated.allFinite()) throw std::runtime_error("DiscreteBP: non-finite log-potential");
    updated.array() -= log_sum_exp(updated);
    out.messages.log_messages[k] = std::move(updated);
  }
  out.marginals = marginals(out.messages, &phi);
  return out;
}

std::vector<int> TraceDataset::trials_in(Split s) const {
  std::vector<int> out;
  for (int r = 0; r < trials(); ++r)
    if (split[r] == s) out.push_back(r);
  return out;
}

void TraceDataset::validate() const {
  const auto r = inputs.size();
  if (r == 0) throw std::invalid_argument("TraceDataset: no trials");
  if (targets.size() != r || reference.size() != r || split.size() != r)
    throw std::invalid_argument("TraceDataset: inconsistent trial counts");
  for (std::size_t k = 0; k < r; ++k) {
    for (const auto* m : {&inputs[k], &targets[k], &reference[k]}) {
      if (m->rows() != n || m->cols() != duration)
        throw std::invalid_argument("TraceDataset: trial shape mismatch");
      if (!m->allFinite()) throw std::invalid_argument("TraceDataset: non-finite value");
    }
  }
}

std::vector<Split> assign_splits(int trials, const SplitFractions& f, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("assign_splits: trials must be >= 1");
  const double total = f.train + f.validation + f.test;
  if (std::abs(total - 1.0) > 1e-9 || f.train < 0 || f.validation < 0 || f.test < 0)
    throw std::invalid_argument("assign_splits: fractions must be non-negative and sum to 1");
  std::vector<int> order(trials);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(std::lround(f.train * trials));
  const int n_val = std::min(trials - n_train, static_cast<int>(std::lround(f.validation * trials)));
  std::vector<Split> out(trials, Split::Test);
  for (int k = 0; k < trials; ++k) {
    if (k < n_train)
      out[order[k]] = Split::Train;
    else if (k < n_train + n_val)
      out[order[k]] = Split::Validation;
  }
  return out;
}

TraceDataset generate_traces(const GaussianPGM& pgm, const BiasSchedule& schedule, const BPConfig& config,
                             int trials, const SplitFractions& split, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("generate_traces: trials must be >= 1");
  schedule.validate();
  config.validate();
  const GaussianBP bp(pgm);
  const int n = pgm.size();
  const int t_len = schedule.duration;
  BPConfig clean = config;
  clean.noise_sigma = 0.0;

  TraceDataset ds;
  ds.n = n;
  ds.duration = t_len;
  ds.split = assign_splits(trials, split, seed);
  for (int r = 0; r < trials; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    Eigen::MatrixXd bias = generate_bias_series(n, schedule, substream_seed(seed, "trial-bias", ur));
    Rng noise = make_rng(seed, "trial-noise", ur);
    Eigen::MatrixXd noisy(n, t_len);
    Eigen::MatrixXd ref(n, t_len);
    GaussianMessageSet m_noisy = bp.initial_messages();
    GaussianMessageSet m_clean = bp.initial_messages();
    for (int t = 0; t < t_len; ++t) {
      const Eigen::VectorXd b = bias.col(t);
      GaussianBPStep a = bp.step(m_noisy, b, config, &noise, t);
      GaussianBPStep c = bp.step(m_clean, b, clean, nullptr, t);
      noisy.col(t) = a.means;
      ref.col(t) = c.means;
      m_noisy = std::move(a.messages);
      m_clean = std::move(c.messages);
    }
    ds.inputs.push_back(std::move(bias));
    ds.targets.push_back(std::move(noisy));
    ds.reference.push_back(std::move(ref));
  }
  return ds;
}

}  // namespace bpgnn
