#include <doctest.h>

#include <map>

#include "bpgnn/search.hpp"
#include "support/gradcheck.hpp"

using namespace bpgnn;

namespace {

SearchRecord record(int trial, GNNArchitecture a, double mse, bool diverged = false) {
  SearchRecord r;
  r.trial = trial;
  r.arch = std::move(a);
  r.test_mse = mse;
  r.diverged = diverged;
  return r;
}

}  // namespace

TEST_CASE("hidden width strings") {
  CHECK(hidden_to_string({}) == "linear");
  CHECK(hidden_to_string({32, 16}) == "32;16");
  CHECK(hidden_from_string("linear").empty());
  CHECK(hidden_from_string("32;16") == std::vector<int>{32, 16});
}

TEST_CASE("architecture sampling") {
  CHECK(sample_architectures({}, 0, 1).empty());

  SearchSpace single;
  single.connectivity = {Connectivity::Full};
  single.vertex_dims = {2};
  single.edge_dims = {4};
  single.state_dims = {8};
  single.message_dims = {8};
  single.message_hidden = {{16}};
  const auto same = sample_architectures(single, 20, 3);
  for (const auto& a : same) CHECK(a == same[0]);

  const auto mixed = sample_architectures({}, 200, 3);
  for (const auto& a : mixed)
    if (a.connectivity == Connectivity::Null) CHECK(a.edge_dim == 0);
  CHECK(sample_architectures({}, 50, 9) == sample_architectures({}, 50, 9));
}

TEST_CASE("sampling frequencies are uniform per axis") {
  SearchSpace s;
  s.connectivity = {Connectivity::Full};
  s.vertex_dims = {2};
  s.state_dims = {8};
  s.message_hidden = {{16}};
  s.edge_dims = {0, 2, 4, 8};
  s.message_dims = {2, 4, 8, 12};
  std::map<int, int> de, dm;
  for (const auto& a : sample_architectures(s, 1000, 17)) {
    ++de[a.edge_dim];
    ++dm[a.message_dim];
  }
  for (const auto& counts : {de, dm}) {
    CHECK(counts.size() == 4);
    for (const auto& [_, c] : counts) CHECK(std::abs(c / 1000.0 - 0.25) <= 0.05);
  }
}

TEST_CASE("conditional best examples") {
  GNNArchitecture a;
  const std::vector<SearchRecord> one{record(0, a, 0.3)};
  CHECK(conditional_best(one, SearchAxis::StateDim, "8").trial == 0);
  const std::vector<SearchRecord> two{record(0, a, 0.5), record(1, a, 0.2)};
  CHECK(conditional_best(two, SearchAxis::StateDim, "8").test_mse == 0.2);
  CHECK_THROWS_AS(conditional_best(two, SearchAxis::StateDim, "3"), std::invalid_argument);
  const std::vector<SearchRecord> tied{record(0, a, 0.1, true), record(1, a, 0.4), record(2, a, 0.4)};
  CHECK(conditional_best(tied, SearchAxis::StateDim, "8").trial == 1);
}

TEST_CASE("conditional best matches an exhaustive scan") {
  Rng rng(5);
  const auto archs = sample_architectures({}, 60, 21);
  std::vector<SearchRecord> recs;
  for (int k = 0; k < 60; ++k) recs.push_back(record(k, archs[k], uniform01(rng), uniform01(rng) < 0.1));
  for (const auto& row : conditional_best_table(recs)) {
    double best = std::numeric_limits<double>::infinity();
    int at = -1;
    for (const auto& r : recs)
      if (axis_value(r, row.axis) == row.value && !r.diverged && r.test_mse < best) {
        best = r.test_mse;
        at = r.trial;
      }
    CHECK(row.trial == at);
    CHECK(row.test_mse == best);
    CHECK(row.log10_mse == doctest::Approx(std::log10(best)));
  }
}

TEST_CASE("search runs are reproducible and independent of the worker count") {
  std::vector<TraceDataset> data;
  PrecisionSpec spec;
  spec.n = 3;
  data.push_back(generate_traces(random_precision_matrix(spec, 1), {15, 0.1, 1.5, 3}, {}, 8, {0.5, 0.25, 0.25}, 2));
  SearchSpace s;
  s.base = testsupport::small_arch();
  s.vertex_dims = {0, 1};
  s.edge_dims = {0, 1};
  s.state_dims = {2};
  s.message_dims = {2};
  s.budget = 3;
  TrainConfig c;
  c.max_steps = 5;
  c.eval_interval = 5;
  c.burn_in = 2;
  c.batch_trials = 2;
  c.seed = 4;

  const SearchResult a = run_search(s, data, c, 1);
  const SearchResult b = run_search(s, data, c, 3);
  REQUIRE(a.records.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(a.records[k].arch == b.records[k].arch);
    CHECK(a.records[k].test_mse == b.records[k].test_mse);
  }
  s.budget = 1;
  const SearchResult one = run_search(s, data, c, 1);
  REQUIRE(one.records.size() == 1);
  for (const auto& row : one.best) CHECK(row.trial == 0);
}
