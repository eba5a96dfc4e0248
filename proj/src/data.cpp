#include "dualnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dualnet {

using nlohmann::json;

const char* column_kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::nominal: return "nominal";
    case ColumnKind::label: return "label";
    case ColumnKind::ignore: return "ignore";
  }
  return "?";
}

ColumnKind column_kind_from_name(const std::string& s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "nominal") return ColumnKind::nominal;
  if (s == "label") return ColumnKind::label;
  if (s == "ignore") return ColumnKind::ignore;
  throw ConfigError("unknown column kind '" + s + "'");
}

const char* task_name(TaskKind t) {
  return t == TaskKind::binary ? "binary" : "multiclass";
}

TaskKind task_from_name(const std::string& s) {
  if (s == "binary") return TaskKind::binary;
  if (s == "multiclass") return TaskKind::multiclass;
  throw ConfigError("unknown task '" + s + "'");
}

static std::string lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
  return s;
}

static bool parse_number(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

// ---- schema ----------------------------------------------------------------

std::size_t Schema::label_column() const {
  std::size_t found = columns.size();
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].kind != ColumnKind::label) continue;
    if (found != columns.size())
      throw ConfigError("schema declares more than one label column");
    found = i;
  }
  if (found == columns.size())
    throw ConfigError("schema declares no label column");
  return found;
}

std::string Schema::map_category(const std::string& raw) const {
  for (const auto& [from, to] : category_map)
    if (from == raw) return to;
  return raw;
}

static void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

Schema Schema::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("schema is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("schema must be a JSON object");
  check_keys(j, {"columns", "category_map"}, "schema");
  if (!j.contains("columns") || !j.at("columns").is_array())
    throw ConfigError("schema needs a 'columns' array");

  Schema s;
  std::set<std::string> seen;
  for (const json& c : j.at("columns")) {
    check_keys(c, {"name", "kind"}, "schema column");
    if (!c.contains("name") || !c.contains("kind"))
      throw ConfigError("every schema column needs 'name' and 'kind'");
    ColumnSpec spec;
    spec.name = c.at("name").get<std::string>();
    spec.kind = column_kind_from_name(c.at("kind").get<std::string>());
    if (!seen.insert(spec.name).second)
      throw ConfigError("duplicate column name '" + spec.name + "'");
    s.columns.push_back(std::move(spec));
  }
  if (j.contains("category_map")) {
    for (auto it = j.at("category_map").begin(); it != j.at("category_map").end();
         ++it)
      s.category_map.emplace_back(it.key(), it.value().get<std::string>());
  }
  s.label_column();  // validates exactly one
  return s;
}

Schema Schema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string Schema::to_json_text(int indent) const {
  json cols = json::array();
  for (const ColumnSpec& c : columns)
    cols.push_back({{"name", c.name}, {"kind", column_kind_name(c.kind)}});
  json j;
  j["columns"] = cols;
  json cm = json::object();
  for (const auto& [from, to] : category_map) cm[from] = to;
  j["category_map"] = cm;
  return j.dump(indent) + "\n";
}

// ---- csv -------------------------------------------------------------------

static std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (true) {
    cur.clear();
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i < line.size() && line[i] == '"') {
      ++i;
      while (i < line.size()) {
        if (line[i] == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            i += 2;
          } else {
            ++i;
            break;
          }
        } else {
          cur += line[i++];
        }
      }
      while (i < line.size() && line[i] != ',') ++i;
    } else {
      while (i < line.size() && line[i] != ',') cur += line[i++];
      while (!cur.empty() &&
             (cur.back() == ' ' || cur.back() == '\t' || cur.back() == '\r'))
        cur.pop_back();
    }
    out.push_back(cur);
    if (i >= line.size()) break;
    ++i;
  }
  return out;
}

static bool is_header_row(const std::vector<std::string>& cells,
                          const Schema& schema) {
  if (cells.size() != schema.columns.size()) return false;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (lower(cells[i]) != lower(schema.columns[i].name)) return false;
  return true;
}

RawDataset parse_csv(std::istream& in, const Schema& schema,
                     const std::string& origin) {
  RawDataset ds;
  ds.schema = schema;
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    bool blank = true;
    for (char c : line)
      if (c != ' ' && c != '\t' && c != '\r') blank = false;
    if (blank) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (first_content) {
      first_content = false;
      if (is_header_row(cells, schema)) continue;
    }
    if (cells.size() != schema.columns.size())
      throw DataError(origin + ": row " + std::to_string(line_no) +
                      ": expected " + std::to_string(schema.columns.size()) +
                      " fields, got " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (schema.columns[c].kind != ColumnKind::numeric) continue;
      double v;
      if (!parse_number(cells[c], v))
        throw DataError(origin + ": row " + std::to_string(line_no) +
                        ": column '" + schema.columns[c].name +
                        "' is not numeric: '" + cells[c] + "'");
    }
    ds.rows.push_back(std::move(cells));
  }
  return ds;
}

RawDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file '" + path + "'");
  return parse_csv(in, schema, path);
}

// ---- preprocessor ----------------------------------------------------------

std::size_t Preprocessor::feature_count() const {
  std::size_t f = 0;
  for (const Column& c : columns)
    f += (c.kind == ColumnKind::numeric) ? 1 : c.vocab.size();
  return f;
}

std::vector<std::string> Preprocessor::feature_names() const {
  std::vector<std::string> names;
  for (const Column& c : columns) {
    if (c.kind == ColumnKind::numeric) {
      names.push_back(c.name);
    } else {
      for (const std::string& v : c.vocab) names.push_back(c.name + "=" + v);
    }
  }
  return names;
}

std::vector<Preprocessor::Group> Preprocessor::groups() const {
  std::vector<Group> gs;
  std::size_t at = 0;
  for (const Column& c : columns) {
    std::size_t w = (c.kind == ColumnKind::numeric) ? 1 : c.vocab.size();
    gs.push_back({c.name, at, at + w});
    at += w;
  }
  return gs;
}

static std::string apply_category(
    const std::vector<std::pair<std::string, std::string>>& map,
    const std::string& raw) {
  for (const auto& [from, to] : map)
    if (from == raw) return to;
  return raw;
}

std::size_t Preprocessor::map_label(const std::string& raw) const {
  std::string mapped = apply_category(category_map, raw);
  bool is_normal = lower(mapped) == "normal";
  if (task == TaskKind::binary) return is_normal ? 0 : 1;
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (is_normal ? lower(class_names[i]) == "normal" : class_names[i] == mapped)
      return i;
  }
  throw DataError("unknown label '" + raw + "'");
}

Preprocessor fit_preprocessor(const RawDataset& raw, TaskKind task) {
  if (raw.rows.empty()) throw DataError("cannot fit on an empty dataset");
  const Schema& schema = raw.schema;
  std::size_t label_col = schema.label_column();

  Preprocessor pre;
  pre.task = task;
  pre.category_map = schema.category_map;

  for (const ColumnSpec& spec : schema.columns) {
    if (spec.kind != ColumnKind::numeric && spec.kind != ColumnKind::nominal)
      continue;
    Preprocessor::Column col;
    col.name = spec.name;
    col.kind = spec.kind;
    pre.columns.push_back(std::move(col));
  }

  std::size_t ci = 0;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const ColumnSpec& spec = schema.columns[c];
    if (spec.kind != ColumnKind::numeric && spec.kind != ColumnKind::nominal)
      continue;
    Preprocessor::Column& col = pre.columns[ci++];
    if (spec.kind == ColumnKind::numeric) {
      double lo = 0, hi = 0;
      for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        double v;
        parse_number(raw.rows[r][c], v);
        if (r == 0) {
          lo = hi = v;
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      col.lo = lo;
      col.hi = hi;
    } else {
      for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const std::string& v = raw.rows[r][c];
        if (v.empty())
          throw DataError("nominal column '" + spec.name +
                          "' has an empty value at row " + std::to_string(r + 1));
        if (std::find(col.vocab.begin(), col.vocab.end(), v) == col.vocab.end())
          col.vocab.push_back(v);
      }
    }
  }

  if (task == TaskKind::binary) {
    pre.class_names = {"normal", "attack"};
  } else {
    std::string normal_spelling;
    std::vector<std::string> others;
    for (const auto& row : raw.rows) {
      std::string mapped = schema.map_category(row[label_col]);
      if (lower(mapped) == "normal") {
        if (normal_spelling.empty()) normal_spelling = mapped;
      } else if (std::find(others.begin(), others.end(), mapped) ==
                 others.end()) {
        others.push_back(mapped);
      }
    }
    if (!normal_spelling.empty()) pre.class_names.push_back(normal_spelling);
    for (std::string& o : others) pre.class_names.push_back(std::move(o));
  }
  return pre;
}

// ---- transform -------------------------------------------------------------

EncodedDataset transform(const Preprocessor& pre, const RawDataset& raw) {
  const Schema& schema = raw.schema;
  std::size_t label_col = schema.label_column();

  std::vector<std::size_t> source_cols;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const ColumnSpec& spec = schema.columns[c];
    if (spec.kind != ColumnKind::numeric && spec.kind != ColumnKind::nominal)
      continue;
    source_cols.push_back(c);
  }
  if (source_cols.size() != pre.columns.size())
    throw DataError("schema mismatch: preprocessor was fit on " +
                    std::to_string(pre.columns.size()) +
                    " feature columns, data has " +
                    std::to_string(source_cols.size()));
  for (std::size_t i = 0; i < source_cols.size(); ++i) {
    const ColumnSpec& spec = schema.columns[source_cols[i]];
    if (spec.name != pre.columns[i].name || spec.kind != pre.columns[i].kind)
      throw DataError("schema mismatch at column '" + spec.name +
                      "': preprocessor expects '" + pre.columns[i].name + "' (" +
                      column_kind_name(pre.columns[i].kind) + ")");
  }

  EncodedDataset ds;
  ds.n = raw.rows.size();
  ds.features = pre.feature_count();
  ds.feature_names = pre.feature_names();
  ds.groups = pre.groups();
  ds.class_names = pre.class_names;
  ds.x.assign(ds.n * ds.features, 0.0);
  ds.labels.resize(ds.n);

  for (std::size_t r = 0; r < ds.n; ++r) {
    double* out = ds.x.data() + r * ds.features;
    std::size_t at = 0;
    for (std::size_t i = 0; i < source_cols.size(); ++i) {
      const std::string& cell = raw.rows[r][source_cols[i]];
      const Preprocessor::Column& col = pre.columns[i];
      if (col.kind == ColumnKind::numeric) {
        double v;
        if (!parse_number(cell, v))
          throw DataError("row " + std::to_string(r + 1) + ": column '" +
                          col.name + "' is not numeric: '" + cell + "'");
        double scaled = 0.0;
        if (col.hi > col.lo)
          scaled = std::clamp((v - col.lo) / (col.hi - col.lo), 0.0, 1.0);
        out[at++] = scaled;
      } else {
        auto it = std::find(col.vocab.begin(), col.vocab.end(), cell);
        if (it != col.vocab.end()) out[at + (it - col.vocab.begin())] = 1.0;
        at += col.vocab.size();
      }
    }
    ds.labels[r] = pre.map_label(raw.rows[r][label_col]);
  }
  return ds;
}

std::vector<std::size_t> map_labels(const RawDataset& raw, TaskKind task) {
  Preprocessor pre = fit_preprocessor(raw, task);
  std::size_t label_col = raw.schema.label_column();
  std::vector<std::size_t> out;
  out.reserve(raw.rows.size());
  for (const auto& row : raw.rows) out.push_back(pre.map_label(row[label_col]));
  return out;
}

// ---- shuffle & folds -------------------------------------------------------

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

EncodedDataset shuffled(const EncodedDataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  return select_rows(ds, shuffled_indices(ds.n, rng));
}

EncodedDataset select_rows(const EncodedDataset& ds,
                           const std::vector<std::size_t>& idx) {
  EncodedDataset out = ds;
  out.n = idx.size();
  out.x.resize(idx.size() * ds.features);
  out.labels.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= ds.n) {
      throw DataError("row index " + std::to_string(idx[r]) +
                      " out of range for " + std::to_string(ds.n) + " rows");
    }
    std::copy(ds.x.begin() + idx[r] * ds.features,
              ds.x.begin() + (idx[r] + 1) * ds.features,
              out.x.begin() + r * ds.features);
    out.labels[r] = ds.labels[idx[r]];
  }
  return out;
}

static std::string class_label(std::size_t c,
                               const std::vector<std::string>* names) {
  if (names && c < names->size()) return "class '" + (*names)[c] + "'";
  return "class " + std::to_string(c);
}

std::vector<FoldSplit> stratified_kfold(
    const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed,
    bool strict, const std::vector<std::string>* class_names) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  std::size_t n = labels.size();
  if (n < k)
    throw DataError("cannot split " + std::to_string(n) + " samples into " +
                    std::to_string(k) + " folds");

  std::size_t nclasses = 0;
  for (std::size_t l : labels) nclasses = std::max(nclasses, l + 1);
  std::vector<std::vector<std::size_t>> buckets(nclasses);
  for (std::size_t i = 0; i < n; ++i) buckets[labels[i]].push_back(i);

  std::vector<FoldSplit> folds(k);
  for (std::size_t c = 0; c < nclasses; ++c) {
    std::vector<std::size_t>& bucket = buckets[c];
    if (bucket.empty()) continue;
    if (strict && bucket.size() < k)
      throw DataError(class_label(c, class_names) + " has " +
                      std::to_string(bucket.size()) +
                      " samples, fewer than the " + std::to_string(k) +
                      " folds");
    Rng rng(mix_seed(seed, c));
    std::vector<std::size_t> order = shuffled_indices(bucket.size(), rng);
    std::size_t offset = c % k;
    for (std::size_t m = 0; m < order.size(); ++m)
      folds[(offset + m) % k].test.push_back(bucket[order[m]]);
  }

  std::vector<char> in_test(n, 0);
  for (FoldSplit& f : folds) {
    std::sort(f.test.begin(), f.test.end());
    for (std::size_t i : f.test) in_test[i] = 1;
    f.train.reserve(n - f.test.size());
    for (std::size_t i = 0; i < n; ++i)
      if (!in_test[i]) f.train.push_back(i);
    for (std::size_t i : f.test) in_test[i] = 0;
  }
  return folds;
}

std::vector<FoldSplit> stratified_kfold(const EncodedDataset& ds, std::size_t k,
                                        std::uint64_t seed, bool strict) {
  return stratified_kfold(ds.labels, k, seed, strict, &ds.class_names);
}

// ---- encoded dataset -------------------------------------------------------

Tensor EncodedDataset::rows_tensor(const std::vector<std::size_t>& idx) const {
  std::vector<double> buf;
  buf.reserve(idx.size() * features);
  for (std::size_t i : idx)
    buf.insert(buf.end(), x.begin() + i * features,
               x.begin() + (i + 1) * features);
  return Tensor::from({idx.size(), features}, buf);
}

std::vector<std::size_t> EncodedDataset::labels_for(
    const std::vector<std::size_t>& idx) const {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

// ---- preprocessor json -----------------------------------------------------

std::string Preprocessor::to_json_text(int indent) const {
  json cols = json::array();
  for (const Column& c : columns) {
    json jc;
    jc["name"] = c.name;
    jc["kind"] = column_kind_name(c.kind);
    if (c.kind == ColumnKind::numeric) {
      jc["lo"] = c.lo;
      jc["hi"] = c.hi;
    } else {
      jc["vocab"] = c.vocab;
    }
    cols.push_back(jc);
  }
  json j;
  j["task"] = task_name(task);
  j["columns"] = cols;
  j["class_names"] = class_names;
  json cm = json::object();
  for (const auto& [from, to] : category_map) cm[from] = to;
  j["category_map"] = cm;
  return j.dump(indent) + "\n";
}

Preprocessor Preprocessor::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("preprocessor state is not valid JSON: ") +
                      e.what());
  }
  check_keys(j, {"task", "columns", "class_names", "category_map"},
             "preprocessor state");
  Preprocessor pre;
  pre.task = task_from_name(j.at("task").get<std::string>());
  for (const json& jc : j.at("columns")) {
    check_keys(jc, {"name", "kind", "lo", "hi", "vocab"}, "preprocessor column");
    Column c;
    c.name = jc.at("name").get<std::string>();
    c.kind = column_kind_from_name(jc.at("kind").get<std::string>());
    if (c.kind == ColumnKind::numeric) {
      c.lo = jc.at("lo").get<double>();
      c.hi = jc.at("hi").get<double>();
    } else {
      c.vocab = jc.at("vocab").get<std::vector<std::string>>();
    }
    pre.columns.push_back(std::move(c));
  }
  pre.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (j.contains("category_map")) {
    for (auto it = j.at("category_map").begin();
         it != j.at("category_map").end(); ++it)
      pre.category_map.emplace_back(it.key(), it.value().get<std::string>());
  }
  return pre;
}

// ---- persistence -----------------------------------------------------------

static constexpr char kDataMagic[8] = {'D', 'N', 'E', 'T', 'D', 'A', 'T', 'A'};
static constexpr std::uint32_t kDataVersion = 1;

static void save_encoded_binary(const EncodedDataset& ds,
                                const std::string& path) {
  json header;
  header["n"] = ds.n;
  header["features"] = ds.features;
  header["feature_names"] = ds.feature_names;
  json groups = json::array();
  for (const Preprocessor::Group& g : ds.groups)
    groups.push_back({{"column", g.column}, {"begin", g.begin}, {"end", g.end}});
  header["groups"] = groups;
  header["class_names"] = ds.class_names;
  std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(kDataMagic, 8);
  std::uint32_t v = kDataVersion, hlen = std::uint32_t(htext.size());
  out.write(reinterpret_cast<const char*>(&v), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), htext.size());
  for (std::size_t l : ds.labels) {
    std::uint32_t u = std::uint32_t(l);
    out.write(reinterpret_cast<const char*>(&u), 4);
  }
  out.write(reinterpret_cast<const char*>(ds.x.data()),
            std::streamsize(ds.x.size() * sizeof(double)));
  if (!out) throw IoError("short write to '" + path + "'");
}

static void save_encoded_csv(const EncodedDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < ds.feature_names.size(); ++j)
    out << ds.feature_names[j] << ",";
  out << "label\n";
  char buf[40];
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.features; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.at(i, j));
      out << buf << ",";
    }
    out << ds.labels[i] << "\n";
  }
  if (!out) throw IoError("short write to '" + path + "'");
}

void save_encoded(const EncodedDataset& ds, const Preprocessor& pre,
                  const std::string& path, EncodedFormat format) {
  if (format == EncodedFormat::binary)
    save_encoded_binary(ds, path);
  else
    save_encoded_csv(ds, path);
  std::ofstream meta(path + ".meta.json");
  if (!meta) throw IoError("cannot write '" + path + ".meta.json'");
  meta << pre.to_json_text();
}

static EncodedDataset load_encoded_binary(std::ifstream& in,
                                          const std::string& path) {
  auto read_or_throw = [&](char* dst, std::size_t count) {
    in.read(dst, std::streamsize(count));
    if (std::size_t(in.gcount()) != count)
      throw DataError("'" + path + "' is truncated");
  };
  char magic[8];
  read_or_throw(magic, 8);
  if (std::memcmp(magic, kDataMagic, 8) != 0)
    throw DataError("'" + path + "' is not an encoded dataset file");
  std::uint32_t version, hlen;
  read_or_throw(reinterpret_cast<char*>(&version), 4);
  if (version != kDataVersion)
    throw DataError("'" + path + "': unsupported data file version " +
                    std::to_string(version));
  read_or_throw(reinterpret_cast<char*>(&hlen), 4);
  std::string htext(hlen, '\0');
  read_or_throw(htext.data(), hlen);
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::parse_error&) {
    throw DataError("'" + path + "' has a corrupt header");
  }

  EncodedDataset ds;
  ds.n = header.at("n").get<std::size_t>();
  ds.features = header.at("features").get<std::size_t>();
  ds.feature_names = header.at("feature_names").get<std::vector<std::string>>();
  for (const json& g : header.at("groups"))
    ds.groups.push_back({g.at("column").get<std::string>(),
                         g.at("begin").get<std::size_t>(),
                         g.at("end").get<std::size_t>()});
  ds.class_names = header.at("class_names").get<std::vector<std::string>>();

  ds.labels.resize(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) {
    std::uint32_t u;
    read_or_throw(reinterpret_cast<char*>(&u), 4);
    ds.labels[i] = u;
  }
  ds.x.resize(ds.n * ds.features);
  read_or_throw(reinterpret_cast<char*>(ds.x.data()),
                ds.x.size() * sizeof(double));
  return ds;
}

static EncodedDataset load_encoded_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw DataError("'" + path + "' is empty");
  std::vector<std::string> header = split_csv_line(line);
  if (header.empty() || header.back() != "label")
    throw DataError("'" + path + "': last column of an encoded CSV must be "
                    "'label'");
  EncodedDataset ds;
  ds.features = header.size() - 1;
  ds.feature_names.assign(header.begin(), header.end() - 1);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    bool blank = true;
    for (char c : line)
      if (c != ' ' && c != '\t' && c != '\r') blank = false;
    if (blank) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("'" + path + "': row " + std::to_string(line_no) +
                      ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    for (std::size_t j = 0; j < ds.features; ++j) {
      double v;
      if (!parse_number(cells[j], v))
        throw DataError("'" + path + "': row " + std::to_string(line_no) +
                        ": bad value '" + cells[j] + "'");
      ds.x.push_back(v);
    }
    double lv;
    if (!parse_number(cells.back(), lv) || lv < 0 || lv != double(std::size_t(lv)))
      throw DataError("'" + path + "': row " + std::to_string(line_no) +
                      ": bad label '" + cells.back() + "'");
    ds.labels.push_back(std::size_t(lv));
  }
  ds.n = ds.labels.size();

  std::string meta_path = path + ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta(meta_path);
    std::stringstream ss;
    ss << meta.rdbuf();
    Preprocessor pre = Preprocessor::from_json_text(ss.str());
    if (pre.feature_names() != ds.feature_names)
      throw DataError("'" + meta_path + "' does not describe '" + path + "'");
    ds.groups = pre.groups();
    ds.class_names = pre.class_names;
  } else {
    for (std::size_t j = 0; j < ds.features; ++j)
      ds.groups.push_back({ds.feature_names[j], j, j + 1});
    std::size_t nclasses = 0;
    for (std::size_t l : ds.labels) nclasses = std::max(nclasses, l + 1);
    for (std::size_t c = 0; c < nclasses; ++c)
      ds.class_names.push_back("class" + std::to_string(c));
  }
  return ds;
}

EncodedDataset load_encoded(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path + "'");
  char magic[8] = {};
  probe.read(magic, 8);
  if (probe.gcount() == 8 && std::memcmp(magic, kDataMagic, 8) == 0) {
    probe.seekg(0);
    return load_encoded_binary(probe, path);
  }
  probe.close();
  return load_encoded_csv(path);
}

}  // namespace dualnet
