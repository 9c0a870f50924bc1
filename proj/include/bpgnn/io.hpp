#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpgnn/bp.hpp"
#include "bpgnn/gnn.hpp"
#include "bpgnn/pgm.hpp"
#include "bpgnn/train.hpp"
#include "bpgnn/translator.hpp"

namespace bpgnn {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

/// Raised for absent or malformed artifacts; the message names the path.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// FNV-1a over the compact serialization of a JSON value.
std::uint64_t config_hash(const Json& j);
std::string hash_string(std::uint64_t h);

/// Hash check applied by every loader.
struct LoadCheck {
  std::uint64_t expected_hash = 0;
  /// Skip the comparison.
  bool force = false;
};

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);
Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);

Json to_json(const GNNArchitecture& arch);
GNNArchitecture architecture_from_json(const Json& j);

Json to_json(const MMLPParams& p);
MMLPParams mmlp_params_from_json(const Json& j);
Json to_json(const DynamicalParams& p);
DynamicalParams dynamical_from_json(const Json& j);
Json to_json(const StructuralParams& p);
StructuralParams structural_from_json(const Json& j);

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// PGM manifest: the precision matrix is stored inline as exact doubles.
void save_pgm(const fs::path& path, const GaussianPGM& pgm, int id, std::uint64_t hash);
GaussianPGM load_pgm(const fs::path& path, const LoadCheck& check);

/// Traces: a JSON manifest at path and a float32 little-endian sidecar
/// holding blocks x, y and y0, each laid out (trial, vertex, time) at a
/// 64-byte aligned offset.
void save_traces(const fs::path& manifest, const fs::path& data, const TraceDataset& ds, std::uint64_t hash);
TraceDataset load_traces(const fs::path& manifest, const LoadCheck& check);

/// Ensemble checkpoint. graph_ids names the PGM behind each Θ^S.
struct Checkpoint {
  TrainedEnsemble ensemble;
  std::vector<int> graph_ids;
};

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt, std::uint64_t hash);
Checkpoint load_checkpoint(const fs::path& path, const LoadCheck& check);

void save_translator(const fs::path& path, const GraphTranslator& t, const TranslatorSplit& split,
                     std::uint64_t hash);
GraphTranslator load_translator(const fs::path& path, const LoadCheck& check, TranslatorSplit* split = nullptr);

/// Shortest text that round-trips the double exactly.
std::string format_double(double x);

/// CSV with a header row, '.' decimals and LF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& add(std::vector<std::string> row);
  std::string str() const;
  void save(const fs::path& path) const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string cell(double x) { return format_double(x); }
inline std::string cell(int x) { return std::to_string(x); }
inline std::string cell(long x) { return std::to_string(x); }
inline std::string cell(std::uint64_t x) { return std::to_string(x); }
inline std::string cell(const std::string& s) { return s; }
inline std::string cell(const char* s) { return s; }

/// Parsed CSV: header plus rows of raw fields.
struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;
};

CsvData read_csv(const fs::path& path);

}  // namespace bpgnn
