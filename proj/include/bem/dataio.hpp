#pragma once

// Embedding tables, label tables and model files.
//
// Embedding file: UTF-8 text, optional first line "#dim=<d>", then one row
// per entity: id, TAB, d decimal values separated by single TABs.
// Label file: id, TAB, comma-separated class ids.
// Model file: see save_model.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bem/common.hpp"
#include "bem/config.hpp"
#include "bem/diffcore.hpp"

namespace bem {

/// Entity ids aligned with the rows of a dense matrix. Ids are unique and
/// every value is finite; the constructor enforces both.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, RowMatrix values);

  Index size() const { return values_.rows(); }
  Index dim() const { return values_.cols(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const RowMatrix& values() const { return values_; }
  auto row(Index i) const { return values_.row(i); }

  /// Row of `id`, if present.
  std::optional<Index> find(const std::string& id) const;

  /// Same ids, new values (shape of rows must match the id count).
  EmbeddingTable with_values(RowMatrix values) const;

  /// Rows selected by index, in the given order.
  EmbeddingTable subset(const std::vector<Index>& rows) const;

  bool operator==(const EmbeddingTable& other) const {
    return ids_ == other.ids_ && values_.rows() == other.values_.rows() &&
           values_.cols() == other.values_.cols() && values_ == other.values_;
  }

 private:
  std::vector<std::string> ids_;
  RowMatrix values_;
  std::unordered_map<std::string, Index> index_;
};

/// Multi-label class assignments. Label order within an entity is the file
/// order; the first label is the entity's primary class.
struct LabelTable {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> labels;

  std::unordered_map<std::string, Index> index() const;
};

EmbeddingTable load_table(const std::filesystem::path& path,
                          std::optional<Index> expected_dim = std::nullopt);
void write_table(const std::filesystem::path& path, const EmbeddingTable& table);

/// Text forms used by the loaders and writers above.
EmbeddingTable parse_table(std::string_view text, std::optional<Index> expected_dim = std::nullopt,
                           std::string_view source = "<memory>");
std::string format_table(const EmbeddingTable& table);

LabelTable load_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelTable& labels);
LabelTable parse_labels(std::string_view text, std::string_view source = "<memory>");

enum class AlignPolicy { Strict, Intersect };

struct AlignedTables {
  EmbeddingTable kg;
  EmbeddingTable bg;
  Index dropped_kg = 0;  // kg ids absent from bg
  Index dropped_bg = 0;  // bg ids absent from kg
};

/// Puts both tables on a common id list in kg order. Strict requires equal
/// id sets; Intersect keeps the common ids.
AlignedTables align(const EmbeddingTable& kg, const EmbeddingTable& bg, AlignPolicy policy);

/// Rescales every non-zero row to unit L2 norm.
RowMatrix normalize_rows(const RowMatrix& m);

// ---------------------------------------------------------------------------
// Model files
//
//   "BEM1"                      4-byte magic
//   u32  format version (1)
//   u64  header length, header  "key = value" text: d_w, d_z, d_s, then the
//                               training configuration
//   per net (f, then h):
//     u64 in, u64 hidden, u64 out
//     f64 W1 (row-major), b1, W2 (row-major), b2
//   u32  CRC-32 of every preceding byte
//
// All integers and floats little-endian.

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelBundle {
  DiffNet f;
  DiffNet h;
  TrainConfig config;
};

void save_model(const std::filesystem::path& path, const DiffNet& f, const DiffNet& h,
                const TrainConfig& cfg);
ModelBundle load_model(const std::filesystem::path& path);

std::string serialize_model(const DiffNet& f, const DiffNet& h, const TrainConfig& cfg);
ModelBundle deserialize_model(std::string_view bytes);

/// Writes via a temporary file in the same directory and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace bem
