#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bpgnn/io.hpp"
#include "bpgnn/pipeline.hpp"
#include "support/gradcheck.hpp"

using namespace bpgnn;
using testsupport::random_matrix;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("bpgnn_unit_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_config(const fs::path& dir) {
  ExperimentConfig c;
  c.output_dir = dir;
  c.seed = 3;
  c.pgm.count = 3;
  c.pgm.sizes = {3, 4};
  c.schedule.duration = 15;
  c.traces.trials = 8;
  c.traces.split = {0.5, 0.25, 0.25};
  c.architecture.state_dim = 3;
  c.architecture.message_dim = 3;
  c.architecture.message_hidden = {4};
  c.train.max_steps = 6;
  c.train.eval_interval = 3;
  c.train.burn_in = 2;
  c.train.batch_trials = 2;
  c.translator = {1, 1, 1, 0.8, {}, 0.01, {}, true};
  c.translator.fit.max_epochs = 20;
  c.analysis.trials_per_graph = 2;
  c.analysis.manifold.burn_in = 2;
  c.analysis.grid_steps = 3;
  return c;
}

}  // namespace

TEST_CASE("shortest round-trip doubles") {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const double x = random_matrix(1, 1, rng)(0, 0) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("csv tables") {
  CsvTable t({"a", "b"});
  t.add({cell(1), cell(0.5)}).add({cell("x"), cell(-2.0)});
  CHECK(t.str() == "a,b\n1,0.5\nx,-2\n");
  TempDir d;
  t.save(d.path / "t.csv");
  const CsvData back = read_csv(d.path / "t.csv");
  CHECK(back.header == std::vector<std::string>{"a", "b"});
  CHECK(back.rows.size() == 2);
  CHECK(back.column("b") == 1);
}

TEST_CASE("matrix json round trip") {
  Rng rng(2);
  Eigen::MatrixXd m = random_matrix(3, 4, rng);
  m(1, 2) = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd back = matrix_from_json(Json::parse(matrix_to_json(m).dump()));
  CHECK(std::isnan(back(1, 2)));
  back(1, 2) = m(1, 2) = 0.0;
  CHECK(back == m);
}

TEST_CASE("pgm and trace artifacts") {
  TempDir d;
  PrecisionSpec spec;
  spec.n = 5;
  const GaussianPGM p = random_precision_matrix(spec, 9);
  save_pgm(d.path / "p.json", p, 2, 77);
  CHECK(load_pgm(d.path / "p.json", {77, false}).precision == p.precision);
  CHECK_THROWS_AS(load_pgm(d.path / "p.json", {78, false}), ArtifactError);
  CHECK_NOTHROW(load_pgm(d.path / "p.json", {78, true}));
  try {
    load_pgm(d.path / "missing.json", {77, false});
    FAIL("expected a missing-artifact error");
  } catch (const ArtifactError& e) {
    CHECK(std::string(e.what()).find("missing.json") != std::string::npos);
  }

  const TraceDataset t = generate_traces(p, {12, 0.1, 1.5, 3}, {}, 4, {0.5, 0.25, 0.25}, 3);
  save_traces(d.path / "t.json", d.path / "t.bin", t, 5);
  const TraceDataset back = load_traces(d.path / "t.json", {5, false});
  CHECK(back.split == t.split);
  for (int r = 0; r < 4; ++r) {
    CHECK(back.targets[r] == t.targets[r].cast<float>().cast<double>());
    CHECK(back.inputs[r] == t.inputs[r].cast<float>().cast<double>());
    CHECK(back.reference[r] == t.reference[r].cast<float>().cast<double>());
  }
  CHECK(fs::file_size(d.path / "t.bin") >= 3u * 4 * 5 * 12 * 4);
}

TEST_CASE("checkpoint round trip reproduces rollouts bit-exactly") {
  TempDir d;
  const GNNArchitecture a = testsupport::small_arch();
  Rng rng(3);
  Checkpoint ck;
  ck.ensemble.arch = a;
  ck.ensemble.dynamical = testsupport::random_dynamical(a, rng);
  ck.ensemble.structural = {init_structural(a, 3, rng), init_structural(a, 4, rng)};
  ck.ensemble.per_graph.resize(2);
  ck.graph_ids = {4, 7};
  save_checkpoint(d.path / "e.ckpt", ck, 1);
  const Checkpoint back = load_checkpoint(d.path / "e.ckpt", {1, false});
  CHECK(back.graph_ids == ck.graph_ids);
  CHECK(back.ensemble.arch == a);
  const Eigen::MatrixXd x = random_matrix(4, 10, rng);
  CHECK(rollout(a, back.ensemble.dynamical, back.ensemble.structural[1], x).output_matrix() ==
        rollout(a, ck.ensemble.dynamical, ck.ensemble.structural[1], x).output_matrix());
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = tiny_config("out");
  const ExperimentConfig back = config_from_json(Json::parse(to_json(c).dump()));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_from_json(Json::object()).seed == ExperimentConfig{}.seed);

  const auto message_of = [](const Json& j) {
    try {
      config_from_json(j);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of({{"train", {{"step_sise", 1.0}}}}).find("train.step_sise") != std::string::npos);
  CHECK(message_of({{"pgm", {{"count", "six"}}}}).find("pgm.count") != std::string::npos);
  CHECK(message_of({{"traces", {{"trials", 0}}}}).find("traces.trials") != std::string::npos);
  CHECK(message_of({{"seed", -1}}).find("seed") != std::string::npos);
}

TEST_CASE("stage hashes are cumulative") {
  ExperimentConfig a = tiny_config("out");
  ExperimentConfig b = a;
  b.train.max_steps += 1;
  CHECK(stage_hash(a, Stage::Pgm) == stage_hash(b, Stage::Pgm));
  CHECK(stage_hash(a, Stage::Traces) == stage_hash(b, Stage::Traces));
  CHECK(stage_hash(a, Stage::Ensemble) != stage_hash(b, Stage::Ensemble));
  b = a;
  b.pgm.density = 0.5;
  CHECK(stage_hash(a, Stage::Report) != stage_hash(b, Stage::Report));
}

TEST_CASE("gen-pgm is byte-identical across runs") {
  TempDir d1, d2;
  cmd_gen_pgm(tiny_config(d1.path), {});
  cmd_gen_pgm(tiny_config(d2.path), {});
  for (int g = 0; g < 3; ++g) {
    const auto name = ExperimentPaths{d1.path}.pgm(g).filename();
    CHECK(read_file(d1.path / name) == read_file(d2.path / name));
  }
}

TEST_CASE("training without validation trials is a schema error and writes nothing") {
  TempDir d;
  ExperimentConfig c = tiny_config(d.path);
  c.traces.trials = 2;
  c.traces.split = {1.0, 0.0, 0.0};
  cmd_gen_pgm(c, {});
  cmd_gen_traces(c, {});
  CHECK_THROWS_AS(cmd_train(c, {}), ConfigError);
  CHECK(!fs::exists(ExperimentPaths{d.path}.ensemble()));
}

TEST_CASE("stale artifacts are rejected unless forced") {
  TempDir d;
  ExperimentConfig c = tiny_config(d.path);
  cmd_gen_pgm(c, {});
  c.pgm.density = 0.5;
  CHECK_THROWS_AS(cmd_gen_traces(c, {}), ArtifactError);
  CommandOptions force;
  force.force = true;
  CHECK_NOTHROW(cmd_gen_traces(c, force));
}

TEST_CASE("translator artifact round trip") {
  TempDir d;
  ExperimentConfig c = tiny_config(d.path);
  for (const auto& step : {"gen-pgm", "gen-traces", "train", "fit-translator"}) run_command(step, c, {});
  TranslatorSplit split;
  const GraphTranslator t = load_translator(ExperimentPaths{d.path}.translator(), {stage_hash(c, Stage::Translator), false}, &split);
  CHECK(split.train.size() == 1);
  const Regressor& r = t.get(TranslatorDirection::EdgeForward);
  Rng rng(1);
  const Eigen::MatrixXd x = random_matrix(r.spec.input_dim, 5, rng);
  save_translator(d.path / "copy.ckpt", t, split, 9);
  CHECK(load_translator(d.path / "copy.ckpt", {9, false}).get(TranslatorDirection::EdgeForward).predict(x) == r.predict(x));
}

TEST_CASE("the full pipeline emits every report file") {
  TempDir d;
  const ExperimentConfig c = tiny_config(d.path);
  run_pipeline(c, {});
  cmd_export_plots(c, {});
  const ExperimentPaths p{d.path};
  for (const auto& f : {p.ensemble(), p.colorless(), p.constructed(), p.translator(), p.translator_metrics(),
                        p.recovered(), p.recover_summary(), p.report(), p.report_traces(), p.training_log("main"),
                        p.analysis() / "effective_dimension.csv", p.plots() / "generalization_report.csv"})
    CHECK_MESSAGE(fs::exists(f), f.string());
  CHECK(read_csv(p.report()).rows.size() == 3);
  const CsvData rec = read_csv(p.recovered());
  REQUIRE(!rec.rows.empty());
  for (const auto& row : rec.rows) {
    const GaussianPGM pgm = load_pgm(p.pgm(std::stoi(row[0])), {stage_hash(c, Stage::Pgm), false});
    CHECK(row[7] == (pgm.support()(std::stoi(row[1]), std::stoi(row[2])) ? "1" : "0"));
  }
}
