#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpgnn/bp.hpp"
#include "bpgnn/gnn.hpp"
#include "bpgnn/train.hpp"

namespace bpgnn {

struct SearchSpace {
  std::vector<Connectivity> connectivity{Connectivity::Null, Connectivity::Full};
  std::vector<int> vertex_dims{0, 2, 4};
  std::vector<int> edge_dims{0, 2, 4, 8};
  std::vector<int> state_dims{4, 8};
  std::vector<int> message_dims{4, 8};
  /// Hidden widths of the message mMLP; an empty entry is a linear message.
  std::vector<std::vector<int>> message_hidden{{}, {16}};
  int budget = 12;
  /// Dimensions shared by every sampled architecture.
  GNNArchitecture base;

  void validate() const;
};

enum class SearchAxis { Connectivity, VertexDim, EdgeDim, StateDim, MessageDim, MessageHidden };

std::string to_string(SearchAxis axis);
std::vector<SearchAxis> all_search_axes();

/// "linear" for no hidden layer, otherwise widths joined by ';'.
std::string hidden_to_string(const std::vector<int>& hidden);
std::vector<int> hidden_from_string(const std::string& s);

/// Independent uniform draws per axis. Null connectivity records D_e = 0.
std::vector<GNNArchitecture> sample_architectures(const SearchSpace& space, int count, std::uint64_t seed);

struct SearchRecord {
  int trial = 0;
  GNNArchitecture arch;
  std::uint64_t seed = 0;
  double test_mse = 0.0;
  double test_r2 = 0.0;
  double seconds = 0.0;
  bool diverged = false;
  std::string error;

  double log10_mse() const;
};

/// Value of a record on an axis, formatted as in the results file.
std::string axis_value(const SearchRecord& record, SearchAxis axis);

/// Minimum-test-MSE record among those with axis == value; ties go to the
/// earliest trial and diverged trials rank last. Throws std::invalid_argument
/// when nothing matches.
const SearchRecord& conditional_best(std::span<const SearchRecord> records, SearchAxis axis, const std::string& value);

struct ConditionalBestRow {
  SearchAxis axis = SearchAxis::Connectivity;
  std::string value;
  int trial = 0;
  double test_mse = 0.0;
  double log10_mse = 0.0;
};

/// One row per axis value present among the records, in order of first appearance.
std::vector<ConditionalBestRow> conditional_best_table(std::span<const SearchRecord> records);

struct SearchResult {
  std::vector<SearchRecord> records;
  std::vector<ConditionalBestRow> best;
  double baseline_mse = 0.0;
};

/// Trains every sampled architecture with train_multi and records its pooled
/// test metrics. Trials run on up to workers threads; results do not depend
/// on the worker count.
SearchResult run_search(const SearchSpace& space, std::span<const TraceDataset> datasets,
                        const TrainConfig& train_config, int workers = 1);

}  // namespace bpgnn
