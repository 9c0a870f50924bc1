#include "bpgnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "bpgnn/random.hpp"

namespace bpgnn {

namespace {

template <typename T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "boolean";
  else if constexpr (std::is_integral_v<T>) return "integer";
  else if constexpr (std::is_floating_point_v<T>) return "number";
  else if constexpr (std::is_same_v<T, std::string>) return "string";
  else return "array";
}

/// Reads the fields of one JSON object, remembering which keys were used.
class Section {
 public:
  Section(const Json& parent, std::string name) : name_(std::move(name)) {
    if (!parent.contains(leaf())) {
      obj_ = nullptr;
      return;
    }
    obj_ = &parent.at(leaf());
    if (!obj_->is_object()) throw ConfigError(name_ + ": expected an object");
  }

  explicit Section(const Json& root) : obj_(&root) {
    if (!root.is_object()) throw ConfigError("config: expected a JSON object");
  }

  template <typename T>
  Section& get(const char* key, T& out) {
    used_.insert(key);
    if (!obj_ || !obj_->contains(key)) return *this;
    const Json& v = obj_->at(key);
    const std::string field = path(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field + ": expected boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field + ": expected integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(field + ": expected unsigned integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field + ": expected number");
    }
    try {
      out = v.get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(field + ": expected " + type_name<T>());
    }
    return *this;
  }

  Section child(const char* key) {
    used_.insert(key);
    return Section(obj_ ? *obj_ : empty(), path(key));
  }

  bool has(const char* key) const { return obj_ && obj_->contains(key); }
  const Json* raw(const char* key) {
    used_.insert(key);
    return obj_ && obj_->contains(key) ? &obj_->at(key) : nullptr;
  }
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    if (!obj_) return;
    for (const auto& [k, _] : obj_->items())
      if (!used_.count(k)) throw ConfigError(path(k) + ": unknown field");
  }

 private:
  static const Json& empty() {
    static const Json e = Json::object();
    return e;
  }
  std::string leaf() const {
    const auto dot = name_.rfind('.');
    return dot == std::string::npos ? name_ : name_.substr(dot + 1);
  }

  const Json* obj_ = nullptr;
  std::string name_;
  std::set<std::string> used_;
};

void wrap(const std::string& field, const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (pgm.count < 1) throw ConfigError("pgm.count: must be at least 1");
  if (pgm.sizes.empty()) throw ConfigError("pgm.sizes: must not be empty");
  for (int n : pgm.sizes)
    if (n < 2) throw ConfigError("pgm.sizes: every size must be at least 2");
  if (pgm.max_attempts < 1) throw ConfigError("pgm.max_attempts: must be at least 1");
  if (!(pgm.density >= 0.0 && pgm.density <= 1.0)) throw ConfigError("pgm.density: must lie in [0, 1]");
  if (!(pgm.rcond > 0.0 && pgm.rcond <= 1.0)) throw ConfigError("pgm.rcond: must lie in (0, 1]");
  if (!(pgm.epsilon >= 0.0)) throw ConfigError("pgm.epsilon: must be nonnegative");
  wrap("schedule", [&] { schedule.validate(); });
  wrap("bp", [&] { bp.validate(); });
  if (traces.trials < 1) throw ConfigError("traces.trials: must be at least 1");
  wrap("architecture", [&] { architecture.validate(); });
  wrap("train", [&] { train.validate(); });
  if (train.burn_in >= schedule.duration) throw ConfigError("train.burn_in: must be shorter than schedule.duration");
  wrap("search.space", [&] { search.space.validate(); });
  if (search.max_steps < 1) throw ConfigError("search.max_steps: must be at least 1");
  if (search.workers < 1) throw ConfigError("search.workers: must be at least 1");
  if (analysis.trials_per_graph < 1) throw ConfigError("analysis.trials_per_graph: must be at least 1");
  if (analysis.grid_steps < 1) throw ConfigError("analysis.grid_steps: must be at least 1");
  if (analysis.grid_graph < 0 || analysis.grid_graph >= pgm.count)
    throw ConfigError("analysis.grid_graph: must name a generated graph");
  const auto& t = translator;
  if (t.train_graphs < 1 || t.validation_graphs < 0 || t.test_graphs < 1 ||
      t.train_graphs + t.validation_graphs + t.test_graphs != pgm.count)
    throw ConfigError("translator: train_graphs + validation_graphs + test_graphs must equal pgm.count");
  if (!(t.pair_fraction > 0.0 && t.pair_fraction <= 1.0))
    throw ConfigError("translator.pair_fraction: must lie in (0, 1]");
  wrap("translator.fit", [&] { t.fit.validate(); });
}

GNNArchitecture ExperimentConfig::colorless() const {
  GNNArchitecture a = architecture;
  a.vertex_dim = 0;
  a.edge_dim = 0;
  return a;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = substream_seed(seed, "train");
  return t;
}

Json to_json(const ExperimentConfig& c) {
  Json conn = Json::array();
  for (auto k : c.search.space.connectivity) conn.push_back(to_string(k));
  Json j;
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["pgm"] = {{"count", c.pgm.count},       {"sizes", c.pgm.sizes},     {"density", c.pgm.density},
              {"rcond", c.pgm.rcond},       {"epsilon", c.pgm.epsilon}, {"max_attempts", c.pgm.max_attempts}};
  j["schedule"] = {{"duration", c.schedule.duration},
                   {"switch_rate", c.schedule.switch_rate},
                   {"amplitude_sigma", c.schedule.amplitude_sigma},
                   {"window_len", c.schedule.window_len}};
  j["bp"] = {{"gamma", c.bp.gamma}, {"noise_sigma", c.bp.noise_sigma}};
  j["traces"] = {{"trials", c.traces.trials},
                 {"split",
                  {{"train", c.traces.split.train},
                   {"validation", c.traces.split.validation},
                   {"test", c.traces.split.test}}}};
  j["architecture"] = to_json(c.architecture);
  const TrainConfig& t = c.train;
  j["train"] = {{"step_size", t.step_size},
                {"batch_trials", t.batch_trials},
                {"max_steps", t.max_steps},
                {"patience", t.patience},
                {"eval_interval", t.eval_interval},
                {"l2_structural", t.l2_structural},
                {"burn_in", t.burn_in},
                {"size_weighted_sampling", t.size_weighted_sampling},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_epsilon", t.adam_epsilon}};
  const SearchSpace& s = c.search.space;
  j["search"] = {{"max_steps", c.search.max_steps},
                 {"workers", c.search.workers},
                 {"space",
                  {{"connectivity", conn},
                   {"vertex_dims", s.vertex_dims},
                   {"edge_dims", s.edge_dims},
                   {"state_dims", s.state_dims},
                   {"message_dims", s.message_dims},
                   {"message_hidden", s.message_hidden},
                   {"budget", s.budget}}}};
  const AnalysisSection& a = c.analysis;
  j["analysis"] = {{"burn_in", a.manifold.burn_in},
                   {"max_points", a.manifold.max_points},
                   {"max_projection_rows", a.manifold.max_projection_rows},
                   {"trials_per_graph", a.trials_per_graph},
                   {"grid_steps", a.grid_steps},
                   {"grid_graph", a.grid_graph},
                   {"grid_vertex", a.grid_vertex}};
  const TranslatorSection& tr = c.translator;
  j["translator"] = {{"train_graphs", tr.train_graphs},
                     {"validation_graphs", tr.validation_graphs},
                     {"test_graphs", tr.test_graphs},
                     {"pair_fraction", tr.pair_fraction},
                     {"hidden", tr.fit.hidden},
                     {"step_size", tr.fit.step_size},
                     {"max_epochs", tr.fit.max_epochs},
                     {"eval_interval", tr.fit.eval_interval},
                     {"patience", tr.fit.patience},
                     {"adjacency_epsilon", tr.adjacency_epsilon},
                     {"allow_extrapolation", tr.allow_extrapolation}};
  if (tr.adjacency_threshold) j["translator"]["adjacency_threshold"] = *tr.adjacency_threshold;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  Section root(j);
  std::string out = c.output_dir.string();
  root.get("output_dir", out).get("seed", c.seed);
  c.output_dir = out;

  Section pgm = root.child("pgm");
  pgm.get("count", c.pgm.count)
      .get("sizes", c.pgm.sizes)
      .get("density", c.pgm.density)
      .get("rcond", c.pgm.rcond)
      .get("epsilon", c.pgm.epsilon)
      .get("max_attempts", c.pgm.max_attempts)
      .finish();

  Section sch = root.child("schedule");
  sch.get("duration", c.schedule.duration)
      .get("switch_rate", c.schedule.switch_rate)
      .get("amplitude_sigma", c.schedule.amplitude_sigma)
      .get("window_len", c.schedule.window_len)
      .finish();

  Section bp = root.child("bp");
  bp.get("gamma", c.bp.gamma).get("noise_sigma", c.bp.noise_sigma).finish();

  Section tr = root.child("traces");
  tr.get("trials", c.traces.trials);
  Section sp = tr.child("split");
  sp.get("train", c.traces.split.train)
      .get("validation", c.traces.split.validation)
      .get("test", c.traces.split.test)
      .finish();
  tr.finish();

  Section arch = root.child("architecture");
  GNNArchitecture& a = c.architecture;
  std::string conn = to_string(a.connectivity);
  arch.get("connectivity", conn)
      .get("vertex_dim", a.vertex_dim)
      .get("edge_dim", a.edge_dim)
      .get("state_dim", a.state_dim)
      .get("message_dim", a.message_dim)
      .get("input_dim", a.input_dim)
      .get("output_dim", a.output_dim)
      .get("message_hidden", a.message_hidden)
      .get("gate_hidden", a.gate_hidden)
      .finish();
  wrap("architecture.connectivity", [&] { a.connectivity = connectivity_from_string(conn); });

  Section train = root.child("train");
  TrainConfig& t = c.train;
  train.get("step_size", t.step_size)
      .get("batch_trials", t.batch_trials)
      .get("max_steps", t.max_steps)
      .get("patience", t.patience)
      .get("eval_interval", t.eval_interval)
      .get("l2_structural", t.l2_structural)
      .get("burn_in", t.burn_in)
      .get("size_weighted_sampling", t.size_weighted_sampling)
      .get("beta1", t.beta1)
      .get("beta2", t.beta2)
      .get("adam_epsilon", t.adam_epsilon)
      .finish();

  Section search = root.child("search");
  search.get("max_steps", c.search.max_steps).get("workers", c.search.workers);
  Section space = search.child("space");
  SearchSpace& s = c.search.space;
  std::vector<std::string> conns;
  for (auto k : s.connectivity) conns.push_back(to_string(k));
  space.get("connectivity", conns)
      .get("vertex_dims", s.vertex_dims)
      .get("edge_dims", s.edge_dims)
      .get("state_dims", s.state_dims)
      .get("message_dims", s.message_dims)
      .get("message_hidden", s.message_hidden)
      .get("budget", s.budget)
      .finish();
  search.finish();
  wrap("search.space.connectivity", [&] {
    s.connectivity.clear();
    for (const auto& k : conns) s.connectivity.push_back(connectivity_from_string(k));
  });

  Section an = root.child("analysis");
  AnalysisSection& al = c.analysis;
  an.get("burn_in", al.manifold.burn_in)
      .get("max_points", al.manifold.max_points)
      .get("max_projection_rows", al.manifold.max_projection_rows)
      .get("trials_per_graph", al.trials_per_graph)
      .get("grid_steps", al.grid_steps)
      .get("grid_graph", al.grid_graph)
      .get("grid_vertex", al.grid_vertex)
      .finish();

  Section tl = root.child("translator");
  TranslatorSection& x = c.translator;
  tl.get("train_graphs", x.train_graphs)
      .get("validation_graphs", x.validation_graphs)
      .get("test_graphs", x.test_graphs)
      .get("pair_fraction", x.pair_fraction)
      .get("hidden", x.fit.hidden)
      .get("step_size", x.fit.step_size)
      .get("max_epochs", x.fit.max_epochs)
      .get("eval_interval", x.fit.eval_interval)
      .get("patience", x.fit.patience)
      .get("adjacency_epsilon", x.adjacency_epsilon)
      .get("allow_extrapolation", x.allow_extrapolation);
  if (tl.has("adjacency_threshold")) {
    double th = 0.0;
    tl.get("adjacency_threshold", th);
    x.adjacency_threshold = th;
  }
  tl.finish();
  root.finish();

  c.analysis.manifold.seed = substream_seed(c.seed, "analysis");
  c.search.space.base = c.architecture;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t stage_hash(const ExperimentConfig& c, Stage s) {
  const Json j = to_json(c);
  Json key{{"seed", c.seed}, {"pgm", j["pgm"]}, {"schedule", j["schedule"]}, {"bp", j["bp"]}};
  if (s == Stage::Pgm) return config_hash(key);
  key["traces"] = j["traces"];
  if (s == Stage::Traces) return config_hash(key);
  key["train"] = j["train"];
  if (s == Stage::Search) {
    key["search"] = j["search"];
    key["architecture"] = j["architecture"];
    return config_hash(key);
  }
  key["architecture"] = j["architecture"];
  if (s == Stage::Colorless) {
    key["model"] = "colorless";
    return config_hash(key);
  }
  if (s == Stage::Ensemble) return config_hash(key);
  if (s == Stage::Analysis) {
    key["analysis"] = j["analysis"];
    return config_hash(key);
  }
  key["translator"] = j["translator"];
  if (s == Stage::Translator) return config_hash(key);
  key["stage"] = s == Stage::Constructed ? "constructed" : "report";
  return config_hash(key);
}

namespace {

std::string numbered(const char* stem, int g, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.%s", stem, g, ext);
  return buf;
}

}  // namespace

std::filesystem::path ExperimentPaths::pgm(int g) const { return root / numbered("pgm", g, "json"); }
std::filesystem::path ExperimentPaths::traces(int g) const { return root / numbered("traces", g, "json"); }
std::filesystem::path ExperimentPaths::traces_data(int g) const { return root / numbered("traces", g, "bin"); }
std::filesystem::path ExperimentPaths::training_log(const std::string& model) const {
  return root / (model == "main" ? std::string("training_log.ndjson") : "training_log_" + model + ".ndjson");
}

namespace {

void say(const CommandOptions& o, const std::string& msg) {
  if (o.log) *o.log << msg << '\n';
}

LoadCheck check(const ExperimentConfig& c, Stage s, const CommandOptions& o) { return {stage_hash(c, s), o.force}; }

std::vector<GaussianPGM> load_pgms(const ExperimentConfig& c, const ExperimentPaths& p, const CommandOptions& o) {
  std::vector<GaussianPGM> out;
  for (int g = 0; g < c.pgm.count; ++g) out.push_back(load_pgm(p.pgm(g), check(c, Stage::Pgm, o)));
  return out;
}

std::vector<TraceDataset> load_all_traces(const ExperimentConfig& c, const ExperimentPaths& p,
                                          const CommandOptions& o) {
  std::vector<TraceDataset> out;
  for (int g = 0; g < c.pgm.count; ++g) out.push_back(load_traces(p.traces(g), check(c, Stage::Traces, o)));
  return out;
}

Checkpoint load_main(const ExperimentConfig& c, const ExperimentPaths& p, const CommandOptions& o) {
  Checkpoint ck = load_checkpoint(p.ensemble(), check(c, Stage::Ensemble, o));
  if (ck.ensemble.graphs() != c.pgm.count)
    throw ArtifactError(p.ensemble().string() + ": expected one Θ^S per generated graph");
  return ck;
}

TranslatorSplit translator_split(const ExperimentConfig& c) {
  const auto& t = c.translator;
  return make_translator_split(c.pgm.count, t.train_graphs, t.validation_graphs, t.test_graphs, t.pair_fraction,
                               substream_seed(c.seed, "translator"));
}

double adjacency_threshold(const ExperimentConfig& c, const TranslatorData& data) {
  return c.translator.adjacency_threshold ? *c.translator.adjacency_threshold
                                          : default_adjacency_threshold(data, c.translator.adjacency_epsilon);
}

void write_spectrum(const std::filesystem::path& path, const PCAResult& pca) {
  CsvTable t({"component", "variance"});
  for (Eigen::Index k = 0; k < pca.variances.size(); ++k) t.add({cell(static_cast<long>(k)), cell(pca.variances(k))});
  t.save(path);
}

void write_projection(const std::filesystem::path& path, const std::vector<ProjectionRow>& rows) {
  CsvTable t({"graph", "item", "x", "y", "color_key"});
  for (const auto& r : rows) t.add({cell(r.graph), cell(r.item), cell(r.x), cell(r.y), cell(r.color)});
  t.save(path);
}

void write_grid(const std::filesystem::path& path, const std::vector<GridRow>& rows) {
  CsvTable t({"u", "v", "value"});
  for (const auto& r : rows) t.add({cell(r.u), cell(r.v), cell(r.value)});
  t.save(path);
}

void copy_artifact(const std::filesystem::path& from, const std::filesystem::path& to) {
  write_file_atomic(to, read_file(from));
}

}  // namespace

GaussianPGM generate_stable_pgm(const ExperimentConfig& c, int graph) {
  PrecisionSpec spec;
  spec.n = c.pgm.sizes[static_cast<std::size_t>(graph) % c.pgm.sizes.size()];
  spec.density = c.pgm.density;
  spec.rcond = c.pgm.rcond;
  spec.epsilon = c.pgm.epsilon;
  const std::uint64_t base = substream_seed(c.seed, "pgm", static_cast<std::uint64_t>(graph));
  BPConfig clean = c.bp;
  clean.noise_sigma = 0.0;
  std::string last = "no attempt";
  for (int a = 0; a < c.pgm.max_attempts; ++a) {
    try {
      GaussianPGM pgm = random_precision_matrix(spec, substream_seed(base, "attempt", static_cast<std::uint64_t>(a)));
      pgm.edge_threshold = c.pgm.epsilon;
      const GaussianBP bp(pgm);
      GaussianMessageSet m = bp.initial_messages();
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(spec.n);
      for (int t = 0; t < c.schedule.duration; ++t) m = bp.step(m, zero, clean, nullptr, t).messages;
      return pgm;
    } catch (const std::exception& e) {
      last = e.what();
    }
  }
  throw std::runtime_error("gen-pgm: no stable PGM for graph " + std::to_string(graph) + " after " +
                           std::to_string(c.pgm.max_attempts) + " attempts (last: " + last + ")");
}

void cmd_gen_pgm(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  for (int g = 0; g < c.pgm.count; ++g) {
    const GaussianPGM pgm = generate_stable_pgm(c, g);
    save_pgm(p.pgm(g), pgm, g, stage_hash(c, Stage::Pgm));
    say(o, "wrote " + p.pgm(g).string());
  }
}

void cmd_gen_traces(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  for (int g = 0; g < c.pgm.count; ++g) {
    TraceDataset ds = generate_traces(pgms[g], c.schedule, c.bp, c.traces.trials, c.traces.split,
                                      substream_seed(c.seed, "traces", static_cast<std::uint64_t>(g)));
    ds.pgm_id = g;
    save_traces(p.traces(g), p.traces_data(g), ds, stage_hash(c, Stage::Traces));
    say(o, "wrote " + p.traces(g).string());
  }
}

void cmd_train(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  if (o.model != "main" && o.model != "colorless")
    throw ConfigError("--model: expected main or colorless, got " + o.model);
  const bool colorless = o.model == "colorless";
  const auto data = load_all_traces(c, p, o);
  for (const auto& d : data)
    if (d.trials_in(Split::Train).empty() || d.trials_in(Split::Validation).empty())
      throw ConfigError("traces: dataset " + std::to_string(d.pgm_id) + " has no training or validation trials");
  std::string log;
  const TrainingObserver observer = [&log](const TrainingRecord& r) {
    Json line{{"step", r.step}, {"graph_id", r.graph_id}, {"objective", r.objective}};
    line["val_mse"] = std::isnan(r.val_mse) ? Json(nullptr) : Json(r.val_mse);
    log += line.dump() + "\n";
  };
  Checkpoint ck;
  ck.ensemble = train_multi(data, colorless ? c.colorless() : c.architecture, c.train_config(), observer);
  for (const auto& d : data) ck.graph_ids.push_back(d.pgm_id);
  write_file_atomic(p.training_log(o.model), log);
  const auto path = colorless ? p.colorless() : p.ensemble();
  save_checkpoint(path, ck, stage_hash(c, colorless ? Stage::Colorless : Stage::Ensemble));
  say(o, "wrote " + path.string() + " (test R² " + format_double(ck.ensemble.pooled.test.r2) + ")");
}

void cmd_search(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto data = load_all_traces(c, p, o);
  TrainConfig t = c.train_config();
  t.max_steps = c.search.max_steps;
  const SearchResult r = run_search(c.search.space, data, t, c.search.workers);
  CsvTable csv({"trial", "connectivity", "D_v", "D_e", "D_s", "D_m", "msg_hidden", "seed", "test_mse", "test_r2",
                "seconds"});
  for (const auto& rec : r.records)
    csv.add({cell(rec.trial), to_string(rec.arch.connectivity), cell(rec.arch.vertex_dim), cell(rec.arch.edge_dim),
             cell(rec.arch.state_dim), cell(rec.arch.message_dim), hidden_to_string(rec.arch.message_hidden),
             cell(rec.seed), cell(rec.test_mse), cell(rec.test_r2), cell(rec.seconds)});
  csv.save(p.search());
  CsvTable best({"axis", "value", "trial", "test_mse", "log10_mse", "baseline_mse"});
  for (const auto& b : r.best)
    best.add({to_string(b.axis), b.value, cell(b.trial), cell(b.test_mse), cell(b.log10_mse), cell(r.baseline_mse)});
  best.save(p.search_best());
  say(o, "wrote " + p.search().string());
}

void cmd_analyze(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  const auto data = load_all_traces(c, p, o);
  const Checkpoint ck = load_main(c, p, o);
  const TrainedEnsemble& ens = ck.ensemble;
  GraphRollouts rollouts(static_cast<std::size_t>(ens.graphs()));
  std::vector<std::vector<int>> used(rollouts.size());
  for (int g = 0; g < ens.graphs(); ++g) {
    auto trials = data[g].trials_in(Split::Test);
    if (trials.empty()) trials = data[g].trials_in(Split::Validation);
    trials.resize(std::min<std::size_t>(trials.size(), static_cast<std::size_t>(c.analysis.trials_per_graph)));
    for (int r : trials) rollouts[g].push_back(rollout(ens.arch, ens.dynamical, ens.structural[g], data[g].inputs[r]));
    used[g] = trials;
  }
  const ManifoldReport rep = manifold_report(ens, rollouts, pgms, c.analysis.manifold);
  const auto dir = p.analysis();
  CsvTable dims({"group", "dimension", "effective_dimension"});
  auto emit = [&](const std::string& name, const std::optional<ManifoldSection>& s) {
    if (!s) return;
    write_spectrum(dir / ("spectrum_" + name + ".csv"), s->pca);
    write_projection(dir / ("projection_" + name + ".csv"), s->projection);
    dims.add({name, cell(static_cast<long>(s->pca.variances.size())), cell(s->effective_dimension)});
  };
  emit("states", rep.states);
  emit("messages", rep.messages);
  emit("aggregated", rep.aggregated);
  emit("vertex_params", rep.vertex_params);
  emit("edge_params", rep.edge_params);
  dims.save(dir / "effective_dimension.csv");

  const int g = c.analysis.grid_graph;
  const int v = c.analysis.grid_vertex;
  if (v < 0 || v >= ens.structural[g].n) throw ConfigError("analysis.grid_vertex: no such vertex");
  const int burn = c.analysis.manifold.burn_in;
  const auto& rs = rollouts[g];
  const ProxyProjection state = make_proxy(vertex_states(rs, v, burn));
  const auto edges = edge_list(ens.arch.connectivity, ens.structural[g].n);
  if (!edges.empty()) {
    const ProxyProjection agg = make_proxy(vertex_aggregates(rs, v, burn));
    ObservedRange xr{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (int r : used[g]) {
      const auto x = data[g].inputs[r].row(v).tail(data[g].duration - burn);
      xr.min = std::min(xr.min, x.minCoeff());
      xr.max = std::max(xr.max, x.maxCoeff());
    }
    const int steps = c.analysis.grid_steps;
    write_grid(dir / "grid_update.csv",
               update_grid(ens.arch, ens.dynamical, ens.structural[g], v, state, agg, xr,
                           {agg.observed_min(), agg.observed_max(), steps}, {xr.min, xr.max, steps}));
    std::size_t k = 0;
    while (edges[k].first != v) ++k;
    const int src = edges[k].second;
    const ProxyProjection source = make_proxy(vertex_states(rs, src, burn));
    const ProxyProjection msg = make_proxy(edge_messages(rs, static_cast<int>(k), burn));
    write_grid(dir / "grid_message.csv",
               message_grid(ens.arch, ens.dynamical, ens.structural[g], static_cast<int>(k), state, source, msg,
                            {state.observed_min(), state.observed_max(), steps},
                            {source.observed_min(), source.observed_max(), steps}));
  }
  say(o, "wrote " + dir.string());
}

void cmd_fit_translator(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  const Checkpoint ck = load_main(c, p, o);
  const TranslatorSplit split = translator_split(c);
  const TranslatorData data = make_translator_data(ck.ensemble, pgms, split);
  GraphTranslator tr;
  for (auto d : all_translator_directions)
    tr.set(fit_translator(data, d, c.translator.fit,
                          substream_seed(c.seed, "translator", 1 + static_cast<std::uint64_t>(d))));
  save_translator(p.translator(), tr, split, stage_hash(c, Stage::Translator));

  CsvTable m({"direction", "split", "r2"});
  auto eval = [&](const std::vector<int>& ids) {
    std::vector<StructuralParams> s;
    std::vector<Eigen::MatrixXd> a;
    for (int g : ids) {
      s.push_back(ck.ensemble.structural[g]);
      a.push_back(pgms[g].precision);
    }
    return std::make_pair(s, a);
  };
  const std::pair<const char*, const std::vector<int>*> sets[] = {
      {"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}};
  for (auto d : all_translator_directions)
    for (const auto& [name, ids] : sets) {
      if (ids->empty()) continue;
      const auto [s, a] = eval(*ids);
      m.add({to_string(d), name, cell(translator_r2(tr.get(d), ck.ensemble.arch, s, a))});
    }
  m.save(p.translator_metrics());
  say(o, "wrote " + p.translator().string());
}

namespace {

GraphTranslator load_tr(const ExperimentConfig& c, const ExperimentPaths& p, const CommandOptions& o,
                        TranslatorSplit& split) {
  return load_translator(p.translator(), check(c, Stage::Translator, o), &split);
}

}  // namespace

void cmd_recover(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  const Checkpoint ck = load_main(c, p, o);
  TranslatorSplit split;
  const GraphTranslator tr = load_tr(c, p, o, split);
  const double threshold = adjacency_threshold(c, make_translator_data(ck.ensemble, pgms, split));
  CsvTable rows({"graph_id", "i", "j", "estimate", "symmetrized", "truth", "predicted_edge", "true_edge"});
  CsvTable summary({"graph_id", "threshold", "f1"});
  for (int g : split.test) {
    const RecoveredPrecision r = recover_precision_matrix(ck.ensemble.arch, ck.ensemble.structural[g], tr, threshold);
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> truth = pgms[g].support().array();
    for (int i = 0; i < pgms[g].size(); ++i)
      for (int j = 0; j < pgms[g].size(); ++j)
        rows.add({cell(g), cell(i), cell(j), cell(r.estimate(i, j)), cell(r.symmetrized(i, j)),
                  cell(pgms[g].precision(i, j)), cell(static_cast<int>(r.adjacency(i, j))),
                  cell(static_cast<int>(i != j && truth(i, j)))});
    summary.add({cell(g), cell(threshold), cell(support_f1(r.adjacency, truth))});
  }
  rows.save(p.recovered());
  summary.save(p.recover_summary());
  say(o, "wrote " + p.recovered().string());
}

void cmd_construct(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  const Checkpoint ck = load_main(c, p, o);
  TranslatorSplit split;
  const GraphTranslator tr = load_tr(c, p, o, split);
  Checkpoint out;
  out.ensemble.arch = ck.ensemble.arch;
  out.ensemble.dynamical = ck.ensemble.dynamical;
  for (int g : split.test) {
    out.ensemble.structural.push_back(
        construct_gnn(ck.ensemble.arch, pgms[g], &tr, c.translator.allow_extrapolation || o.force));
    out.graph_ids.push_back(g);
  }
  save_checkpoint(p.constructed(), out, stage_hash(c, Stage::Constructed));
  say(o, "wrote " + p.constructed().string());
}

void cmd_evaluate(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto pgms = load_pgms(c, p, o);
  const Checkpoint main = load_main(c, p, o);
  const Checkpoint colorless = load_checkpoint(p.colorless(), check(c, Stage::Colorless, o));
  const Checkpoint built = load_checkpoint(p.constructed(), check(c, Stage::Constructed, o));
  std::vector<TraceDataset> data;
  ModelVariant trained{"trained", main.ensemble.arch, main.ensemble.dynamical, {}};
  ModelVariant constructed{"constructed", built.ensemble.arch, built.ensemble.dynamical, {}};
  ModelVariant plain{"colorless", colorless.ensemble.arch, colorless.ensemble.dynamical, {}};
  for (std::size_t k = 0; k < built.graph_ids.size(); ++k) {
    const int g = built.graph_ids[k];
    data.push_back(load_traces(p.traces(g), check(c, Stage::Traces, o)));
    trained.structure.push_back(main.ensemble.structural[g]);
    constructed.structure.push_back(built.ensemble.structural[k]);
    plain.structure.push_back(construct_gnn(plain.arch, pgms[g], nullptr));
  }
  const std::vector<ModelVariant> variants{trained, constructed, plain};
  const GeneralizationReport rep = evaluate_generalization(data, variants, c.train.burn_in);
  CsvTable csv({"graph_id", "variant", "mse", "r2"});
  for (const auto& r : rep.rows) csv.add({cell(r.graph_id), r.variant, cell(r.mse), cell(r.r2)});
  csv.save(p.report());
  CsvTable tr({"graph_id", "variant", "vertex", "t", "output", "target"});
  for (const auto& r : rep.example)
    tr.add({cell(r.graph_id), r.variant, cell(r.vertex), cell(r.t), cell(r.output), cell(r.target)});
  tr.save(p.report_traces());
  say(o, "wrote " + p.report().string());
}

void cmd_export_plots(const ExperimentConfig& c, const CommandOptions& o) {
  const ExperimentPaths p{c.output_dir};
  const auto dir = p.plots();
  const auto pgms = load_pgms(c, p, o);
  const auto data = load_all_traces(c, p, o);
  const Checkpoint ck = load_main(c, p, o);
  const TrainedEnsemble& ens = ck.ensemble;

  CsvTable bp_traces({"t", "vertex", "x", "y", "y0"});
  const TraceDataset& d0 = data.front();
  for (int t = 0; t < d0.duration; ++t)
    for (int i = 0; i < d0.n; ++i)
      bp_traces.add({cell(t), cell(i), cell(d0.inputs[0](i, t)), cell(d0.targets[0](i, t)), cell(d0.reference[0](i, t))});
  bp_traces.save(dir / "bp_traces.csv");

  if (std::filesystem::exists(p.search())) {
    const CsvData s = read_csv(p.search());
    CsvTable trials({"trial", "connectivity", "D_v", "D_e", "D_s", "D_m", "msg_hidden", "log10_mse"});
    const int mse = s.column("test_mse");
    for (const auto& r : s.rows) {
      const double v = std::stod(r[mse]);
      trials.add({r[0], r[1], r[2], r[3], r[4], r[5], r[6], cell(std::log10(v))});
    }
    trials.save(dir / "search_trials.csv");
    copy_artifact(p.search_best(), dir / "search_conditional_best.csv");
  } else {
    say(o, "skipping the search tables: " + p.search().string() + " not found");
  }

  CsvTable fit_traces({"graph_id", "t", "vertex", "output", "target", "reference"});
  CsvTable fit_scatter({"graph_id", "output", "target"});
  CsvTable per_graph({"graph_id", "test_mse", "test_r2"});
  for (int g = 0; g < ens.graphs(); ++g) {
    const auto test = data[g].trials_in(Split::Test);
    const auto outs = rollout_outputs(ens.arch, ens.dynamical, ens.structural[g],
                                      std::vector<Eigen::MatrixXd>{data[g].inputs[test.front()]});
    for (int t = c.train.burn_in; t < data[g].duration; ++t)
      for (int i = 0; i < data[g].n; ++i) {
        if (g == 0)
          fit_traces.add({cell(g), cell(t), cell(i), cell(outs[0](i, t)), cell(data[g].targets[test.front()](i, t)),
                   cell(data[g].reference[test.front()](i, t))});
        fit_scatter.add({cell(g), cell(outs[0](i, t)), cell(data[g].targets[test.front()](i, t))});
      }
    if (static_cast<std::size_t>(g) < ens.per_graph.size())
      per_graph.add({cell(g), cell(ens.per_graph[g].test.mse), cell(ens.per_graph[g].test.r2)});
  }
  fit_traces.save(dir / "fit_traces.csv");
  fit_scatter.save(dir / "fit_scatter.csv");
  per_graph.save(dir / "fit_per_graph.csv");

  const auto a = p.analysis();
  struct Copy {
    const char* from;
    const char* to;
    bool required;
  };
  const Copy copies[] = {{"projection_states.csv", "states_projection.csv", true},
                         {"spectrum_states.csv", "states_spectrum.csv", true},
                         {"effective_dimension.csv", "effective_dimension.csv", true},
                         {"grid_update.csv", "update_grid.csv", false},
                         {"grid_message.csv", "message_grid.csv", false},
                         {"projection_messages.csv", "messages_projection.csv", false},
                         {"spectrum_messages.csv", "messages_spectrum.csv", false},
                         {"projection_vertex_params.csv", "vertex_params_projection.csv", false},
                         {"projection_edge_params.csv", "edge_params_projection.csv", false}};
  for (const auto& cp : copies)
    if (cp.required || std::filesystem::exists(a / cp.from)) copy_artifact(a / cp.from, dir / cp.to);

  TranslatorSplit split;
  const GraphTranslator tr = load_tr(c, p, o, split);
  CsvTable scatter({"graph_id", "direction", "item", "predicted", "truth"});
  for (int g : split.test)
    for (auto d : {TranslatorDirection::VertexForward, TranslatorDirection::EdgeForward}) {
      const PairSet ps = translator_pairs(ens.arch, ens.structural[g], pgms[g].precision, d);
      const Eigen::MatrixXd pred = tr.get(d).predict(ps.inputs);
      for (Eigen::Index k = 0; k < pred.cols(); ++k)
        scatter.add({cell(g), to_string(d), cell(static_cast<long>(k)), cell(pred(0, k)), cell(ps.outputs(0, k))});
    }
  scatter.save(dir / "translator_scatter.csv");
  copy_artifact(p.recovered(), dir / "recovered_precision.csv");

  const Checkpoint built = load_checkpoint(p.constructed(), check(c, Stage::Constructed, o));
  CsvTable params({"graph_id", "kind", "item", "component", "trained", "constructed"});
  for (std::size_t k = 0; k < built.graph_ids.size(); ++k) {
    const int g = built.graph_ids[k];
    const StructuralParams& t = ens.structural[g];
    const StructuralParams& b = built.ensemble.structural[k];
    for (Eigen::Index i = 0; i < t.vertex.cols(); ++i)
      for (Eigen::Index r = 0; r < t.vertex.rows(); ++r)
        params.add({cell(g), "vertex", cell(static_cast<long>(i)), cell(static_cast<long>(r)), cell(t.vertex(r, i)),
                 cell(b.vertex(r, i))});
    for (Eigen::Index i = 0; i < t.edge.cols(); ++i)
      for (Eigen::Index r = 0; r < t.edge.rows(); ++r)
        params.add({cell(g), "edge", cell(static_cast<long>(i)), cell(static_cast<long>(r)), cell(t.edge(r, i)),
                 cell(b.edge(r, i))});
  }
  params.save(dir / "constructed_params.csv");
  copy_artifact(p.report(), dir / "generalization_report.csv");
  copy_artifact(p.report_traces(), dir / "generalization_traces.csv");
  say(o, "wrote " + dir.string());
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-pgm",        "gen-traces", "train",     "search",
                                              "analyze",        "fit-translator", "recover", "construct",
                                              "evaluate",       "export-plots"};
  return names;
}

void run_command(const std::string& name, const ExperimentConfig& c, const CommandOptions& o) {
  static const std::map<std::string, void (*)(const ExperimentConfig&, const CommandOptions&)> table{
      {"gen-pgm", cmd_gen_pgm},
      {"gen-traces", cmd_gen_traces},
      {"train", cmd_train},
      {"search", cmd_search},
      {"analyze", cmd_analyze},
      {"fit-translator", cmd_fit_translator},
      {"recover", cmd_recover},
      {"construct", cmd_construct},
      {"evaluate", cmd_evaluate},
      {"export-plots", cmd_export_plots}};
  const auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown command: " + name);
  it->second(c, o);
}

void run_pipeline(const ExperimentConfig& c, const CommandOptions& o) {
  cmd_gen_pgm(c, o);
  cmd_gen_traces(c, o);
  CommandOptions main = o;
  main.model = "main";
  cmd_train(c, main);
  CommandOptions colorless = o;
  colorless.model = "colorless";
  cmd_train(c, colorless);
  cmd_analyze(c, o);
  cmd_fit_translator(c, o);
  cmd_recover(c, o);
  cmd_construct(c, o);
  cmd_evaluate(c, o);
}

}  // namespace bpgnn
