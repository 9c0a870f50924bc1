#include "bpgnn/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bpgnn/random.hpp"

namespace bpgnn {

std::uint64_t config_hash(const Json& j) { return fnv1a64(j.dump()); }

std::string hash_string(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArtifactError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ArtifactError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(1) + "\n"); }

namespace {

double json_double(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

void check_header(const Json& j, const fs::path& path, const std::string& format, const LoadCheck& check) {
  if (!j.is_object() || j.value("format", "") != format)
    throw ArtifactError(path.string() + ": not a " + format + " file");
  if (j.value("version", 0) != kFormatVersion)
    throw ArtifactError(path.string() + ": unsupported format version " + std::to_string(j.value("version", 0)));
  if (!check.force && j.value("config_hash", "") != hash_string(check.expected_hash))
    throw ArtifactError(path.string() + ": config hash " + j.value("config_hash", std::string("?")) +
                        " does not match " + hash_string(check.expected_hash) + " (use --force to override)");
}

Json header(const std::string& format, std::uint64_t hash) {
  return Json{{"format", format}, {"version", kFormatVersion}, {"config_hash", hash_string(hash)}};
}

}  // namespace

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const Json& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::invalid_argument("matrix array length does not match its shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = json_double(data[static_cast<std::size_t>(r * cols + c)]);
  return m;
}

Json to_json(const GNNArchitecture& a) {
  return Json{{"connectivity", to_string(a.connectivity)},
              {"vertex_dim", a.vertex_dim},
              {"edge_dim", a.edge_dim},
              {"state_dim", a.state_dim},
              {"message_dim", a.message_dim},
              {"input_dim", a.input_dim},
              {"output_dim", a.output_dim},
              {"message_hidden", a.message_hidden},
              {"gate_hidden", a.gate_hidden}};
}

GNNArchitecture architecture_from_json(const Json& j) {
  GNNArchitecture a;
  a.connectivity = connectivity_from_string(j.at("connectivity").get<std::string>());
  a.vertex_dim = j.at("vertex_dim").get<int>();
  a.edge_dim = j.at("edge_dim").get<int>();
  a.state_dim = j.at("state_dim").get<int>();
  a.message_dim = j.at("message_dim").get<int>();
  a.input_dim = j.at("input_dim").get<int>();
  a.output_dim = j.at("output_dim").get<int>();
  a.message_hidden = j.at("message_hidden").get<std::vector<int>>();
  a.gate_hidden = j.at("gate_hidden").get<std::vector<int>>();
  a.validate();
  return a;
}

Json to_json(const MMLPParams& p) {
  Json w = Json::array(), b = Json::array();
  for (const auto& m : p.weights) w.push_back(matrix_to_json(m));
  for (const auto& v : p.biases) b.push_back(matrix_to_json(v));
  return Json{{"weights", std::move(w)}, {"biases", std::move(b)}};
}

MMLPParams mmlp_params_from_json(const Json& j) {
  MMLPParams p;
  for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) {
    const Eigen::MatrixXd m = matrix_from_json(b);
    if (m.cols() != 1) throw std::invalid_argument("bias must be a column");
    p.biases.push_back(m.col(0));
  }
  return p;
}

Json to_json(const DynamicalParams& p) {
  return Json{{"message", to_json(p.message)},
              {"gate_z", to_json(p.gate_z)},
              {"gate_r", to_json(p.gate_r)},
              {"gate_s", to_json(p.gate_s)},
              {"readout_weight", matrix_to_json(p.readout_weight)},
              {"readout_bias", matrix_to_json(p.readout_bias)}};
}

DynamicalParams dynamical_from_json(const Json& j) {
  DynamicalParams p;
  p.message = mmlp_params_from_json(j.at("message"));
  p.gate_z = mmlp_params_from_json(j.at("gate_z"));
  p.gate_r = mmlp_params_from_json(j.at("gate_r"));
  p.gate_s = mmlp_params_from_json(j.at("gate_s"));
  p.readout_weight = matrix_from_json(j.at("readout_weight"));
  p.readout_bias = matrix_from_json(j.at("readout_bias")).col(0);
  return p;
}

Json to_json(const StructuralParams& p) {
  return Json{{"n", p.n}, {"vertex", matrix_to_json(p.vertex)}, {"edge", matrix_to_json(p.edge)}};
}

StructuralParams structural_from_json(const Json& j) {
  StructuralParams p;
  p.n = j.at("n").get<int>();
  p.vertex = matrix_from_json(j.at("vertex"));
  p.edge = matrix_from_json(j.at("edge"));
  return p;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + s);
}

void save_pgm(const fs::path& path, const GaussianPGM& pgm, int id, std::uint64_t hash) {
  pgm.validate();
  Json j = header("bpgnn-pgm", hash);
  j["id"] = id;
  j["n"] = pgm.size();
  j["edge_threshold"] = pgm.edge_threshold;
  j["precision"] = matrix_to_json(pgm.precision);
  write_json(path, j);
}

GaussianPGM load_pgm(const fs::path& path, const LoadCheck& check) {
  const Json j = read_json(path);
  check_header(j, path, "bpgnn-pgm", check);
  try {
    GaussianPGM pgm;
    pgm.precision = matrix_from_json(j.at("precision"));
    pgm.edge_threshold = j.at("edge_threshold").get<double>();
    if (pgm.size() != j.at("n").get<int>()) throw std::invalid_argument("n does not match the matrix");
    pgm.validate();
    return pgm;
  } catch (const std::exception& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
}

namespace {

constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t x) { return (x + kAlign - 1) / kAlign * kAlign; }

void put_f32(std::string& out, std::size_t offset, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out[offset + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
}

float get_f32(const std::string& in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_traces(const fs::path& manifest, const fs::path& data, const TraceDataset& ds, std::uint64_t hash) {
  ds.validate();
  const std::size_t count = static_cast<std::size_t>(ds.trials()) * ds.n * ds.duration;
  const std::size_t block = align_up(count * 4);
  const std::vector<const std::vector<Eigen::MatrixXd>*> sources{&ds.inputs, &ds.targets, &ds.reference};
  const char* names[] = {"x", "y", "y0"};
  std::string bytes(3 * block, '\0');
  Json blocks = Json::array();
  for (std::size_t b = 0; b < sources.size(); ++b) {
    std::size_t off = b * block;
    blocks.push_back(Json{{"name", names[b]},
                          {"offset", off},
                          {"shape", {ds.trials(), ds.n, ds.duration}},
                          {"order", "trial,vertex,time"}});
    for (const auto& m : *sources[b])
      for (int i = 0; i < ds.n; ++i)
        for (int t = 0; t < ds.duration; ++t, off += 4) put_f32(bytes, off, static_cast<float>(m(i, t)));
  }
  Json j = header("bpgnn-traces", hash);
  j["pgm_id"] = ds.pgm_id;
  j["n"] = ds.n;
  j["duration"] = ds.duration;
  j["trials"] = ds.trials();
  j["data_file"] = data.filename().string();
  j["dtype"] = "float32-le";
  j["alignment"] = kAlign;
  j["blocks"] = std::move(blocks);
  Json split = Json::array();
  for (Split s : ds.split) split.push_back(to_string(s));
  j["split"] = std::move(split);
  write_file_atomic(data, bytes);
  write_json(manifest, j);
}

TraceDataset load_traces(const fs::path& manifest, const LoadCheck& check) {
  const Json j = read_json(manifest);
  check_header(j, manifest, "bpgnn-traces", check);
  const fs::path data = manifest.parent_path() / j.at("data_file").get<std::string>();
  const std::string bytes = read_file(data);
  try {
    TraceDataset ds;
    ds.pgm_id = j.at("pgm_id").get<int>();
    ds.n = j.at("n").get<int>();
    ds.duration = j.at("duration").get<int>();
    const int trials = j.at("trials").get<int>();
    if (trials < 1) throw std::invalid_argument("dataset has no trials");
    for (const auto& s : j.at("split")) ds.split.push_back(split_from_string(s.get<std::string>()));
    std::vector<Eigen::MatrixXd>* targets[] = {&ds.inputs, &ds.targets, &ds.reference};
    const char* names[] = {"x", "y", "y0"};
    const std::size_t count = static_cast<std::size_t>(trials) * ds.n * ds.duration;
    for (std::size_t b = 0; b < 3; ++b) {
      const Json* blk = nullptr;
      for (const auto& e : j.at("blocks"))
        if (e.at("name") == names[b]) blk = &e;
      if (!blk) throw std::invalid_argument(std::string("missing block ") + names[b]);
      std::size_t off = blk->at("offset").get<std::size_t>();
      if (off % kAlign != 0 || off + count * 4 > bytes.size())
        throw std::invalid_argument(std::string("block ") + names[b] + " lies outside the data file");
      for (int r = 0; r < trials; ++r) {
        Eigen::MatrixXd m(ds.n, ds.duration);
        for (int i = 0; i < ds.n; ++i)
          for (int t = 0; t < ds.duration; ++t, off += 4) m(i, t) = get_f32(bytes, off);
        targets[b]->push_back(std::move(m));
      }
    }
    ds.validate();
    return ds;
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError(manifest.string() + ": " + e.what());
  }
}

namespace {

Json split_metrics_json(const SplitMetrics& m) { return Json{{"mse", m.mse}, {"r2", m.r2}, {"points", m.points}}; }

SplitMetrics split_metrics_from(const Json& j) {
  return {json_double(j.at("mse")), json_double(j.at("r2")), j.at("points").get<long>()};
}

Json graph_metrics_json(const GraphMetrics& g) {
  return Json{{"train", split_metrics_json(g.train)},
              {"validation", split_metrics_json(g.validation)},
              {"test", split_metrics_json(g.test)}};
}

GraphMetrics graph_metrics_from(const Json& j) {
  return {split_metrics_from(j.at("train")), split_metrics_from(j.at("validation")), split_metrics_from(j.at("test"))};
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt, std::uint64_t hash) {
  const TrainedEnsemble& e = ckpt.ensemble;
  if (!e.dynamical.matches(e.arch)) throw std::invalid_argument("save_checkpoint: Θ^D does not match the architecture");
  if (ckpt.graph_ids.size() != e.structural.size())
    throw std::invalid_argument("save_checkpoint: one graph id per Θ^S required");
  Json j = header("bpgnn-ensemble", hash);
  j["architecture"] = to_json(e.arch);
  j["dynamical"] = to_json(e.dynamical);
  Json graphs = Json::array();
  for (std::size_t g = 0; g < e.structural.size(); ++g) {
    if (!e.structural[g].matches(e.arch)) throw std::invalid_argument("save_checkpoint: Θ^S does not match");
    Json entry{{"graph_id", ckpt.graph_ids[g]}, {"structural", to_json(e.structural[g])}};
    if (g < e.per_graph.size()) entry["metrics"] = graph_metrics_json(e.per_graph[g]);
    graphs.push_back(std::move(entry));
  }
  j["graphs"] = std::move(graphs);
  j["training"] = Json{{"best_step", e.best_step}, {"steps_run", e.steps_run}, {"pooled", graph_metrics_json(e.pooled)}};
  write_json(path, j);
}

Checkpoint load_checkpoint(const fs::path& path, const LoadCheck& check) {
  const Json j = read_json(path);
  check_header(j, path, "bpgnn-ensemble", check);
  try {
    Checkpoint c;
    TrainedEnsemble& e = c.ensemble;
    e.arch = architecture_from_json(j.at("architecture"));
    e.dynamical = dynamical_from_json(j.at("dynamical"));
    if (!e.dynamical.matches(e.arch)) throw std::invalid_argument("Θ^D arrays do not match the architecture");
    for (const auto& g : j.at("graphs")) {
      c.graph_ids.push_back(g.at("graph_id").get<int>());
      e.structural.push_back(structural_from_json(g.at("structural")));
      if (!e.structural.back().matches(e.arch)) throw std::invalid_argument("Θ^S arrays do not match the architecture");
      if (g.contains("metrics")) e.per_graph.push_back(graph_metrics_from(g.at("metrics")));
    }
    const Json& t = j.at("training");
    e.best_step = t.at("best_step").get<int>();
    e.steps_run = t.at("steps_run").get<int>();
    e.pooled = graph_metrics_from(t.at("pooled"));
    return c;
  } catch (const std::exception& ex) {
    throw ArtifactError(path.string() + ": " + ex.what());
  }
}

namespace {

Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_translator(const fs::path& path, const GraphTranslator& t, const TranslatorSplit& split,
                     std::uint64_t hash) {
  Json j = header("bpgnn-translator", hash);
  j["split"] = Json{{"train", split.train},
                    {"validation", split.validation},
                    {"test", split.test},
                    {"pair_fraction", split.pair_fraction}};
  Json regs = Json::array();
  for (auto d : all_translator_directions) {
    if (!t.has(d)) continue;
    const Regressor& r = t.get(d);
    regs.push_back(Json{{"direction", to_string(d)},
                        {"input_dim", r.spec.input_dim},
                        {"hidden", r.spec.hidden},
                        {"output_dim", r.spec.output_dim},
                        {"params", to_json(r.params)},
                        {"input_mean", vector_json(r.input_mean)},
                        {"input_scale", vector_json(r.input_scale)},
                        {"output_mean", vector_json(r.output_mean)},
                        {"output_scale", vector_json(r.output_scale)},
                        {"input_min", vector_json(r.input_min)},
                        {"input_max", vector_json(r.input_max)},
                        {"epochs", r.epochs},
                        {"validation_mse", r.validation_mse}});
  }
  j["regressors"] = std::move(regs);
  write_json(path, j);
}

GraphTranslator load_translator(const fs::path& path, const LoadCheck& check, TranslatorSplit* split) {
  const Json j = read_json(path);
  check_header(j, path, "bpgnn-translator", check);
  try {
    GraphTranslator t;
    for (const auto& e : j.at("regressors")) {
      Regressor r;
      r.direction = translator_direction_from_string(e.at("direction").get<std::string>());
      r.spec = {e.at("input_dim").get<int>(), 0, e.at("hidden").get<std::vector<int>>(), e.at("output_dim").get<int>()};
      r.params = mmlp_params_from_json(e.at("params"));
      if (!r.params.matches(r.spec)) throw std::invalid_argument("regressor arrays do not match its shape");
      r.input_mean = vector_from(e.at("input_mean"));
      r.input_scale = vector_from(e.at("input_scale"));
      r.output_mean = vector_from(e.at("output_mean"));
      r.output_scale = vector_from(e.at("output_scale"));
      r.input_min = vector_from(e.at("input_min"));
      r.input_max = vector_from(e.at("input_max"));
      r.epochs = e.at("epochs").get<int>();
      r.validation_mse = json_double(e.at("validation_mse"));
      t.set(std::move(r));
    }
    if (split) {
      const Json& s = j.at("split");
      split->train = s.at("train").get<std::vector<int>>();
      split->validation = s.at("validation").get<std::vector<int>>();
      split->test = s.at("test").get<std::vector<int>>();
      split->pair_fraction = s.at("pair_fraction").get<double>();
    }
    return t;
  } catch (const std::exception& ex) {
    throw ArtifactError(path.string() + ": " + ex.what());
  }
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw std::invalid_argument("CsvTable: row width does not match the header");
  rows_.push_back(std::move(row));
  return *this;
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) out += ',';
      out += fields[k];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::save(const fs::path& path) const { write_file_atomic(path, str()); }

int CsvData::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return static_cast<int>(k);
  throw std::invalid_argument("CSV has no column " + name);
}

CsvData read_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  CsvData d;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw ArtifactError(path.string() + ": empty CSV");
  d.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) d.rows.push_back(split(line));
  return d;
}

}  // namespace bpgnn
