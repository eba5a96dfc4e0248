#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dualnet/rng.hpp"
#include "dualnet/tensor.hpp"

namespace dualnet {

enum class ColumnKind { numeric, nominal, label, ignore };

const char* column_kind_name(ColumnKind k);
ColumnKind column_kind_from_name(const std::string& s);

enum class TaskKind { binary, multiclass };

const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& s);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
};

// Column layout of a CSV source plus an optional label-to-category map
// (e.g. collapsing individual attack names onto their families) applied
// before multiclass label fitting.
struct Schema {
  std::vector<ColumnSpec> columns;
  std::vector<std::pair<std::string, std::string>> category_map;

  std::size_t label_column() const;  // exactly one label column required
  std::string map_category(const std::string& raw) const;

  static Schema from_json_text(const std::string& text);
  static Schema load(const std::string& path);
  std::string to_json_text(int indent = 2) const;
};

struct RawDataset {
  Schema schema;
  std::vector<std::vector<std::string>> rows;  // cells in schema column order

  std::size_t size() const { return rows.size(); }
};

// Splits on commas with double-quote support; a leading row that repeats the
// schema's column names is treated as a header and skipped. Numeric cells
// must parse; errors carry 1-based row numbers.
RawDataset load_csv(const std::string& path, const Schema& schema);
RawDataset parse_csv(std::istream& in, const Schema& schema,
                     const std::string& origin);

// Fitted encoding state: per-numeric min/max, per-nominal vocabulary in
// first-appearance order, and the label map. Self-contained, so a stored
// model can re-encode raw records without the original schema file.
struct Preprocessor {
  struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    double lo = 0.0, hi = 0.0;        // numeric
    std::vector<std::string> vocab;   // nominal
  };
  struct Group {
    std::string column;
    std::size_t begin = 0, end = 0;  // encoded column span [begin, end)
  };

  TaskKind task = TaskKind::binary;
  std::vector<Column> columns;
  std::vector<std::string> class_names;
  std::vector<std::pair<std::string, std::string>> category_map;

  std::size_t feature_count() const;
  std::vector<std::string> feature_names() const;
  std::vector<Group> groups() const;
  std::size_t map_label(const std::string& raw) const;

  std::string to_json_text(int indent = 2) const;
  static Preprocessor from_json_text(const std::string& text);
};

Preprocessor fit_preprocessor(const RawDataset& raw, TaskKind task);

struct EncodedDataset {
  std::size_t n = 0, features = 0;
  std::vector<double> x;  // row-major [n, features], all values in [0, 1]
  std::vector<std::size_t> labels;
  std::vector<std::string> feature_names;
  std::vector<Preprocessor::Group> groups;
  std::vector<std::string> class_names;

  double at(std::size_t i, std::size_t j) const { return x[i * features + j]; }
  Tensor rows_tensor(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> labels_for(const std::vector<std::size_t>& idx) const;
};

EncodedDataset transform(const Preprocessor& pre, const RawDataset& raw);

// One-step fit+transform over a raw dataset's own labels.
std::vector<std::size_t> map_labels(const RawDataset& raw, TaskKind task);

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);
EncodedDataset shuffled(const EncodedDataset& ds, std::uint64_t seed);
EncodedDataset select_rows(const EncodedDataset& ds,
                           const std::vector<std::size_t>& idx);

struct FoldSplit {
  std::vector<std::size_t> train, test;
};

// Within each class: seeded shuffle, then round-robin over folds, so every
// fold's class count is within one of the exact proportion. With `strict`
// a class smaller than k is an error; otherwise it just leaves some folds
// without that class.
std::vector<FoldSplit> stratified_kfold(
    const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed,
    bool strict = true, const std::vector<std::string>* class_names = nullptr);
std::vector<FoldSplit> stratified_kfold(const EncodedDataset& ds,
                                        std::size_t k, std::uint64_t seed,
                                        bool strict = true);

enum class EncodedFormat { csv, binary };

// Data file plus "<path>.meta.json" sidecar holding the preprocessor state.
void save_encoded(const EncodedDataset& ds, const Preprocessor& pre,
                  const std::string& path, EncodedFormat format);
EncodedDataset load_encoded(const std::string& path);

}  // namespace dualnet
