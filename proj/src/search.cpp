#include "bpgnn/search.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "bpgnn/random.hpp"

namespace bpgnn {

void SearchSpace::validate() const {
  if (connectivity.empty() || vertex_dims.empty() || edge_dims.empty() || state_dims.empty() ||
      message_dims.empty() || message_hidden.empty())
    throw std::invalid_argument("SearchSpace: every candidate set must be nonempty");
  if (budget < 0) throw std::invalid_argument("SearchSpace: budget must be nonnegative");
  auto nonneg = [](const std::vector<int>& v, const char* name) {
    for (int x : v)
      if (x < 0) throw std::invalid_argument(std::string("SearchSpace: negative value in ") + name);
  };
  nonneg(vertex_dims, "D_v");
  nonneg(edge_dims, "D_e");
  for (int x : state_dims)
    if (x < 1) throw std::invalid_argument("SearchSpace: D_s must be positive");
  for (int x : message_dims)
    if (x < 1) throw std::invalid_argument("SearchSpace: D_m must be positive");
}

std::string to_string(SearchAxis axis) {
  switch (axis) {
    case SearchAxis::Connectivity: return "connectivity";
    case SearchAxis::VertexDim: return "D_v";
    case SearchAxis::EdgeDim: return "D_e";
    case SearchAxis::StateDim: return "D_s";
    case SearchAxis::MessageDim: return "D_m";
    case SearchAxis::MessageHidden: return "msg_hidden";
  }
  return "unknown";
}

std::vector<SearchAxis> all_search_axes() {
  return {SearchAxis::Connectivity, SearchAxis::VertexDim,  SearchAxis::EdgeDim,
          SearchAxis::StateDim,     SearchAxis::MessageDim, SearchAxis::MessageHidden};
}

std::string hidden_to_string(const std::vector<int>& hidden) {
  if (hidden.empty()) return "linear";
  std::string out;
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    if (k) out += ';';
    out += std::to_string(hidden[k]);
  }
  return out;
}

std::vector<int> hidden_from_string(const std::string& s) {
  if (s == "linear" || s.empty()) return {};
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    std::size_t used = 0;
    const int w = std::stoi(tok, &used);
    if (used != tok.size() || w < 1) throw std::invalid_argument("bad hidden-layer list: " + s);
    out.push_back(w);
  }
  return out;
}

std::vector<GNNArchitecture> sample_architectures(const SearchSpace& space, int count, std::uint64_t seed) {
  space.validate();
  Rng rng = make_rng(seed, "search-arch");
  auto pick = [&rng](const auto& v) {
    std::uniform_int_distribution<std::size_t> u(0, v.size() - 1);
    return v[u(rng)];
  };
  std::vector<GNNArchitecture> out;
  for (int k = 0; k < count; ++k) {
    GNNArchitecture a = space.base;
    a.connectivity = pick(space.connectivity);
    a.vertex_dim = pick(space.vertex_dims);
    a.edge_dim = pick(space.edge_dims);
    a.state_dim = pick(space.state_dims);
    a.message_dim = pick(space.message_dims);
    a.message_hidden = pick(space.message_hidden);
    if (a.connectivity == Connectivity::Null) a.edge_dim = 0;
    out.push_back(a);
  }
  return out;
}

double SearchRecord::log10_mse() const {
  return diverged ? std::numeric_limits<double>::quiet_NaN() : std::log10(test_mse);
}

std::string axis_value(const SearchRecord& r, SearchAxis axis) {
  switch (axis) {
    case SearchAxis::Connectivity: return to_string(r.arch.connectivity);
    case SearchAxis::VertexDim: return std::to_string(r.arch.vertex_dim);
    case SearchAxis::EdgeDim: return std::to_string(r.arch.edge_dim);
    case SearchAxis::StateDim: return std::to_string(r.arch.state_dim);
    case SearchAxis::MessageDim: return std::to_string(r.arch.message_dim);
    case SearchAxis::MessageHidden: return hidden_to_string(r.arch.message_hidden);
  }
  return {};
}

namespace {

double rank_mse(const SearchRecord& r) {
  return r.diverged || !std::isfinite(r.test_mse) ? std::numeric_limits<double>::infinity() : r.test_mse;
}

}  // namespace

const SearchRecord& conditional_best(std::span<const SearchRecord> records, SearchAxis axis,
                                     const std::string& value) {
  const SearchRecord* best = nullptr;
  for (const auto& r : records) {
    if (axis_value(r, axis) != value) continue;
    if (!best || rank_mse(r) < rank_mse(*best) || (rank_mse(r) == rank_mse(*best) && r.trial < best->trial))
      best = &r;
  }
  if (!best) throw std::invalid_argument("conditional_best: no record with " + to_string(axis) + " = " + value);
  return *best;
}

std::vector<ConditionalBestRow> conditional_best_table(std::span<const SearchRecord> records) {
  std::vector<ConditionalBestRow> out;
  for (SearchAxis axis : all_search_axes()) {
    std::vector<std::string> seen;
    for (const auto& r : records) {
      const std::string v = axis_value(r, axis);
      if (std::find(seen.begin(), seen.end(), v) != seen.end()) continue;
      seen.push_back(v);
      const SearchRecord& b = conditional_best(records, axis, v);
      out.push_back({axis, v, b.trial, b.test_mse, b.log10_mse()});
    }
  }
  return out;
}

SearchResult run_search(const SearchSpace& space, std::span<const TraceDataset> datasets,
                        const TrainConfig& train_config, int workers) {
  space.validate();
  train_config.validate();
  if (space.budget < 1) throw std::invalid_argument("run_search: budget must be at least 1");
  const auto archs = sample_architectures(space, space.budget, train_config.seed);
  SearchResult result;
  result.records.resize(archs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < archs.size(); k = next++) {
      SearchRecord& rec = result.records[k];
      rec.trial = static_cast<int>(k);
      rec.arch = archs[k];
      rec.seed = substream_seed(train_config.seed, "search-trial", k);
      TrainConfig cfg = train_config;
      cfg.seed = rec.seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const TrainedEnsemble ens = train_multi(datasets, rec.arch, cfg);
        rec.test_mse = ens.pooled.test.mse;
        rec.test_r2 = ens.pooled.test.r2;
        if (!std::isfinite(rec.test_mse)) throw std::runtime_error("non-finite test MSE");
      } catch (const std::exception& e) {
        rec.diverged = true;
        rec.error = e.what();
        rec.test_mse = std::numeric_limits<double>::quiet_NaN();
        rec.test_r2 = std::numeric_limits<double>::quiet_NaN();
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const int nthreads = std::max(1, std::min<int>(workers, static_cast<int>(archs.size())));
  if (nthreads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
  }
  result.best = conditional_best_table(result.records);
  result.baseline_mse = baseline_mse(datasets, train_config.burn_in);
  return result;
}

}  // namespace bpgnn
