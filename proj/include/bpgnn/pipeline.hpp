#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bpgnn/analysis.hpp"
#include "bpgnn/bp.hpp"
#include "bpgnn/gnn.hpp"
#include "bpgnn/io.hpp"
#include "bpgnn/pgm.hpp"
#include "bpgnn/search.hpp"
#include "bpgnn/train.hpp"
#include "bpgnn/translator.hpp"

namespace bpgnn {

/// Raised for schema violations; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PGMSection {
  int count = 6;
  /// Graph g has sizes[g % sizes.size()] vertices.
  std::vector<int> sizes{8, 10};
  double density = 0.6;
  double rcond = 0.2;
  double epsilon = 0.01;
  int max_attempts = 100;
};

struct TraceSection {
  int trials = 100;
  SplitFractions split;
};

struct SearchSection {
  SearchSpace space;
  /// Training length of every trial.
  int max_steps = 1500;
  int workers = 1;
};

struct AnalysisSection {
  ManifoldOptions manifold;
  /// Test trials rolled out per graph.
  int trials_per_graph = 5;
  int grid_steps = 11;
  /// Graph and vertex whose canonical functions are tabulated.
  int grid_graph = 0;
  int grid_vertex = 0;
};

struct TranslatorSection {
  int train_graphs = 4;
  int validation_graphs = 1;
  int test_graphs = 1;
  double pair_fraction = 0.8;
  TranslatorConfig fit;
  double adjacency_epsilon = 0.01;
  /// Overrides the threshold derived from adjacency_epsilon.
  std::optional<double> adjacency_threshold;
  bool allow_extrapolation = false;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 1;
  PGMSection pgm;
  BiasSchedule schedule{60, 0.05, 1.5, 5};
  BPConfig bp;
  TraceSection traces;
  GNNArchitecture architecture;
  TrainConfig train;
  SearchSection search;
  AnalysisSection analysis;
  TranslatorSection translator;

  void validate() const;
  /// Architecture of the colorless model: the main one with D_v = D_e = 0.
  GNNArchitecture colorless() const;
  /// Training settings with the seed taken from the root seed.
  TrainConfig train_config() const;
};

Json to_json(const ExperimentConfig& c);
/// Missing fields keep their defaults; unknown fields and type errors raise
/// ConfigError naming the field.
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

enum class Stage { Pgm, Traces, Ensemble, Colorless, Search, Analysis, Translator, Constructed, Report };

/// Hash of the config sections an artifact of this stage depends on.
std::uint64_t stage_hash(const ExperimentConfig& c, Stage s);

/// Fixed file names inside the experiment directory.
struct ExperimentPaths {
  std::filesystem::path root;

  std::filesystem::path pgm(int g) const;
  std::filesystem::path traces(int g) const;
  std::filesystem::path traces_data(int g) const;
  std::filesystem::path ensemble() const { return root / "ensemble.ckpt"; }
  std::filesystem::path colorless() const { return root / "colorless.ckpt"; }
  std::filesystem::path constructed() const { return root / "constructed.ckpt"; }
  std::filesystem::path training_log(const std::string& model) const;
  std::filesystem::path search() const { return root / "search.csv"; }
  std::filesystem::path search_best() const { return root / "search_best.csv"; }
  std::filesystem::path analysis() const { return root / "analysis"; }
  std::filesystem::path translator() const { return root / "translator.ckpt"; }
  std::filesystem::path translator_metrics() const { return root / "translator_metrics.csv"; }
  std::filesystem::path recovered() const { return root / "recovered.csv"; }
  std::filesystem::path recover_summary() const { return root / "recover_summary.csv"; }
  std::filesystem::path report() const { return root / "report.csv"; }
  std::filesystem::path report_traces() const { return root / "report_traces.csv"; }
  std::filesystem::path plots() const { return root / "plots"; }
};

struct CommandOptions {
  bool force = false;
  /// Model trained by the train command: "main" or "colorless".
  std::string model = "main";
  std::ostream* log = nullptr;
};

void cmd_gen_pgm(const ExperimentConfig& c, const CommandOptions& o);
void cmd_gen_traces(const ExperimentConfig& c, const CommandOptions& o);
void cmd_train(const ExperimentConfig& c, const CommandOptions& o);
void cmd_search(const ExperimentConfig& c, const CommandOptions& o);
void cmd_analyze(const ExperimentConfig& c, const CommandOptions& o);
void cmd_fit_translator(const ExperimentConfig& c, const CommandOptions& o);
void cmd_recover(const ExperimentConfig& c, const CommandOptions& o);
void cmd_construct(const ExperimentConfig& c, const CommandOptions& o);
void cmd_evaluate(const ExperimentConfig& c, const CommandOptions& o);
void cmd_export_plots(const ExperimentConfig& c, const CommandOptions& o);

const std::vector<std::string>& command_names();
void run_command(const std::string& name, const ExperimentConfig& c, const CommandOptions& o);

/// gen-pgm, gen-traces, train (main and colorless), analyze, fit-translator,
/// recover, construct and evaluate in order.
void run_pipeline(const ExperimentConfig& c, const CommandOptions& o);

/// Resamples until BP on the precision matrix stays stable for the trace
/// duration.
GaussianPGM generate_stable_pgm(const ExperimentConfig& c, int graph);

}  // namespace bpgnn
