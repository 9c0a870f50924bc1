#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "bpgnn/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace bpgnn;
  CLI::App app{"Train graph neural networks on belief-propagation traces and analyse them"};
  app.require_subcommand(0, 1);
  bool print_default = false;
  app.add_flag("--print-default-config", print_default, "Print the default experiment config as JSON and exit");

  std::string config_path;
  std::string output_dir;
  CommandOptions opts;
  bool quiet = false;
  const std::map<std::string, std::string> about{
      {"gen-pgm", "Sample random Gaussian PGMs"},
      {"gen-traces", "Run noisy damped BP on every PGM and store the traces"},
      {"train", "Train the GNN ensemble (or the colorless baseline)"},
      {"search", "Random architecture search with conditional-best tables"},
      {"analyze", "PCA of states, messages and structural parameters; function grids"},
      {"fit-translator", "Fit the vertex and edge graph translators"},
      {"recover", "Recover precision matrices of the test graphs from trained parameters"},
      {"construct", "Build GNN parameters for the test graphs from their PGMs"},
      {"evaluate", "Compare trained, constructed and colorless models on test graphs"},
      {"export-plots", "Write plot-ready CSV tables"}};
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("-c,--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", output_dir, "Override the config's output directory");
    sub->add_flag("-f,--force", opts.force, "Accept artifacts whose config hash differs");
    sub->add_flag("-q,--quiet", quiet, "Suppress progress messages");
    if (name == "train")
      sub->add_option("-m,--model", opts.model, "Model to train")
          ->check(CLI::IsMember({"main", "colorless"}))
          ->capture_default_str();
  }
  CLI11_PARSE(app, argc, argv);

  if (print_default) {
    std::cout << to_json(ExperimentConfig{}).dump(2) << '\n';
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    ExperimentConfig cfg = load_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!quiet) opts.log = &std::cerr;
    run_command(command, cfg, opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
