#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dualnet/data.hpp"

using namespace dualnet;

namespace {

Schema small_schema() {
  return Schema::from_json_text(R"({
    "columns": [
      {"name": "dur",   "kind": "numeric"},
      {"name": "bytes", "kind": "numeric"},
      {"name": "proto", "kind": "nominal"},
      {"name": "cls",   "kind": "label"}
    ]
  })");
}

RawDataset parse(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  return parse_csv(in, schema, "test");
}

const char* kSmallCsv =
    "dur,bytes,proto,cls\n"
    "2,100,http,normal\n"
    "4,250,smtp,neptune\n"
    "6,50,http,satan\n";

std::filesystem::path tmp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dualnet_test_" + name);
}

}  // namespace

TEST_CASE("schema json parses kinds and category map") {
  Schema s = Schema::from_json_text(R"({
    "columns": [
      {"name": "a", "kind": "numeric"},
      {"name": "b", "kind": "nominal"},
      {"name": "c", "kind": "ignore"},
      {"name": "y", "kind": "label"}
    ],
    "category_map": {"neptune": "DoS", "satan": "Probe"}
  })");
  CHECK(s.columns.size() == 4);
  CHECK(s.columns[2].kind == ColumnKind::ignore);
  CHECK(s.label_column() == 3);
  CHECK(s.map_category("neptune") == "DoS");
  CHECK(s.map_category("other") == "other");

  Schema back = Schema::from_json_text(s.to_json_text());
  CHECK(back.columns.size() == 4);
  CHECK(back.category_map.size() == 2);
}

TEST_CASE("schema json rejects bad shapes") {
  CHECK_THROWS_AS(Schema::from_json_text("[]"), ConfigError);
  CHECK_THROWS_WITH_AS(Schema::from_json_text(R"({
    "columns": [{"name": "a", "kind": "float"}]
  })"),
                       doctest::Contains("float"), ConfigError);
  CHECK_THROWS_WITH_AS(Schema::from_json_text(R"({
    "columns": [{"name": "a", "kind": "numeric"},
                {"name": "a", "kind": "label"}]
  })"),
                       doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_WITH_AS(Schema::from_json_text(R"({
    "columns": [{"name": "a", "kind": "numeric"}]
  })"),
                       doctest::Contains("label"), ConfigError);
  CHECK_THROWS_AS(Schema::from_json_text(R"({
    "columns": [{"name": "a", "kind": "label"},
                {"name": "b", "kind": "label"}]
  })"),
                  ConfigError);
}

TEST_CASE("csv loads typed rows and skips the header") {
  RawDataset ds = parse(kSmallCsv, small_schema());
  REQUIRE(ds.size() == 3);
  CHECK(ds.rows[0][0] == "2");
  CHECK(ds.rows[1][2] == "smtp");
  CHECK(ds.rows[2][3] == "satan");

  RawDataset no_header = parse("1,2,http,normal\n", small_schema());
  CHECK(no_header.size() == 1);
}

TEST_CASE("csv errors carry row numbers") {
  CHECK_THROWS_WITH_AS(parse("dur,bytes,proto,cls\n1,2,http\n", small_schema()),
                       doctest::Contains("row 2"), DataError);
  CHECK_THROWS_WITH_AS(parse("1,abc,http,normal\n", small_schema()),
                       doctest::Contains("bytes"), DataError);
  CHECK_THROWS_WITH_AS(parse("1,,http,normal\n", small_schema()),
                       doctest::Contains("row 1"), DataError);
}

TEST_CASE("csv handles quoted cells and blank lines") {
  RawDataset ds = parse("1,2,\"ht,tp\",\"nor\"\"mal\"\n\n  \n3,4,udp,x\n",
                        small_schema());
  REQUIRE(ds.size() == 2);
  CHECK(ds.rows[0][2] == "ht,tp");
  CHECK(ds.rows[0][3] == "nor\"mal");
  CHECK(ds.rows[1][0] == "3");
}

TEST_CASE("fit records min max and first-appearance vocabularies") {
  RawDataset ds = parse(kSmallCsv, small_schema());
  Preprocessor pre = fit_preprocessor(ds, TaskKind::binary);
  REQUIRE(pre.columns.size() == 3);
  CHECK(pre.columns[0].lo == 2.0);
  CHECK(pre.columns[0].hi == 6.0);
  CHECK(pre.columns[2].vocab == std::vector<std::string>{"http", "smtp"});
  CHECK(pre.feature_count() == 4);
  CHECK(pre.feature_names() ==
        std::vector<std::string>{"dur", "bytes", "proto=http", "proto=smtp"});

  auto gs = pre.groups();
  REQUIRE(gs.size() == 3);
  CHECK(gs[2].column == "proto");
  CHECK(gs[2].begin == 2);
  CHECK(gs[2].end == 4);
}

TEST_CASE("fit rejects empty inputs") {
  Schema s = small_schema();
  RawDataset empty;
  empty.schema = s;
  CHECK_THROWS_AS(fit_preprocessor(empty, TaskKind::binary), DataError);
  CHECK_THROWS_WITH_AS(
      fit_preprocessor(parse("1,2,,normal\n", s), TaskKind::binary),
      doctest::Contains("proto"), DataError);
}

TEST_CASE("width formula counts numeric plus vocabulary sizes") {
  Schema s = Schema::from_json_text(R"({
    "columns": [
      {"name": "n1", "kind": "numeric"},
      {"name": "n2", "kind": "numeric"},
      {"name": "c1", "kind": "nominal"},
      {"name": "c2", "kind": "nominal"},
      {"name": "y",  "kind": "label"}
    ]
  })");
  RawDataset ds = parse(
      "1,2,a,x,normal\n"
      "3,4,b,y,attack\n"
      "5,6,c,x,attack\n",
      s);
  Preprocessor pre = fit_preprocessor(ds, TaskKind::binary);
  CHECK(pre.feature_count() == 2 + 3 + 2);
}

TEST_CASE("transform scales clips and one-hot encodes") {
  Schema s = small_schema();
  RawDataset train = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(train, TaskKind::binary);
  EncodedDataset enc = transform(pre, train);

  REQUIRE(enc.n == 3);
  REQUIRE(enc.features == 4);
  CHECK(enc.at(0, 0) == doctest::Approx(0.0));
  CHECK(enc.at(1, 0) == doctest::Approx(0.5));
  CHECK(enc.at(2, 0) == doctest::Approx(1.0));
  CHECK(enc.at(1, 2) == 0.0);
  CHECK(enc.at(1, 3) == 1.0);
  CHECK(enc.labels == std::vector<std::size_t>{0, 1, 1});

  SUBCASE("out-of-range test values clip; unseen categories are all zero") {
    RawDataset test = parse("9,-5,ftp,normal\n", s);
    EncodedDataset e2 = transform(pre, test);
    CHECK(e2.at(0, 0) == 1.0);
    CHECK(e2.at(0, 1) == 0.0);
    CHECK(e2.at(0, 2) == 0.0);
    CHECK(e2.at(0, 3) == 0.0);
  }
  SUBCASE("every value within the unit interval, one-hot sums in {0,1}") {
    for (double v : enc.x) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (std::size_t i = 0; i < enc.n; ++i) {
      double sum = enc.at(i, 2) + enc.at(i, 3);
      CHECK((sum == 0.0 || sum == 1.0));
    }
  }
}

TEST_CASE("constant numeric columns encode to zero") {
  Schema s = small_schema();
  RawDataset ds = parse("5,1,http,normal\n5,2,http,attack\n5,3,http,attack\n", s);
  Preprocessor pre = fit_preprocessor(ds, TaskKind::binary);
  EncodedDataset enc = transform(pre, ds);
  for (std::size_t i = 0; i < 3; ++i) CHECK(enc.at(i, 0) == 0.0);
}

TEST_CASE("transform rejects a mismatched schema") {
  Schema s = small_schema();
  Preprocessor pre = fit_preprocessor(parse(kSmallCsv, s), TaskKind::binary);

  Schema other = Schema::from_json_text(R"({
    "columns": [
      {"name": "dur",   "kind": "numeric"},
      {"name": "size",  "kind": "numeric"},
      {"name": "proto", "kind": "nominal"},
      {"name": "cls",   "kind": "label"}
    ]
  })");
  RawDataset bad = parse("1,2,http,normal\n", other);
  CHECK_THROWS_WITH_AS(transform(pre, bad), doctest::Contains("mismatch"),
                       DataError);
}

TEST_CASE("binary labels collapse everything but normal onto attack") {
  Schema s = small_schema();
  RawDataset ds = parse("1,1,http,normal\n2,2,http,DoS\n3,3,http,Normal\n", s);
  std::vector<std::size_t> labels = map_labels(ds, TaskKind::binary);
  CHECK(labels == std::vector<std::size_t>{0, 1, 0});
}

TEST_CASE("multiclass labels pin normal to class 0 and apply the category map") {
  Schema s = Schema::from_json_text(R"({
    "columns": [
      {"name": "dur", "kind": "numeric"},
      {"name": "cls", "kind": "label"}
    ],
    "category_map": {"neptune": "DoS", "smurf": "DoS", "satan": "Probe"}
  })");
  RawDataset ds = parse(
      "1,neptune\n2,normal\n3,satan\n4,smurf\n5,normal\n", s);
  Preprocessor pre = fit_preprocessor(ds, TaskKind::multiclass);
  CHECK(pre.class_names == std::vector<std::string>{"normal", "DoS", "Probe"});
  EncodedDataset enc = transform(pre, ds);
  CHECK(enc.labels == std::vector<std::size_t>{1, 0, 2, 1, 0});

  RawDataset unseen = parse("6,teardrop\n", s);
  CHECK_THROWS_WITH_AS(transform(pre, unseen), doctest::Contains("teardrop"),
                       DataError);
}

TEST_CASE("shuffle is a seeded permutation") {
  Schema s = small_schema();
  std::ostringstream rowstream;
  for (int i = 0; i < 30; ++i)
    rowstream << i << "," << 100 - i << ",http," << (i % 3 ? "a" : "normal")
              << "\n";
  RawDataset raw = parse(rowstream.str(), s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);

  EncodedDataset s1 = shuffled(enc, 7);
  EncodedDataset s2 = shuffled(enc, 7);
  CHECK(s1.x == s2.x);
  CHECK(s1.labels == s2.labels);
  CHECK(s1.x != enc.x);

  auto rows_of = [](const EncodedDataset& d) {
    std::vector<std::pair<std::vector<double>, std::size_t>> rows;
    for (std::size_t i = 0; i < d.n; ++i)
      rows.emplace_back(
          std::vector<double>(d.x.begin() + i * d.features,
                              d.x.begin() + (i + 1) * d.features),
          d.labels[i]);
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  CHECK(rows_of(s1) == rows_of(enc));

  EncodedDataset one = enc;
  one.n = 1;
  one.x.resize(enc.features);
  one.labels.resize(1);
  EncodedDataset so = shuffled(one, 3);
  CHECK(so.x == one.x);
}

TEST_CASE("stratified folds keep class proportions within one sample") {
  SUBCASE("evenly divisible case") {
    std::vector<std::size_t> labels(100, 0);
    for (int i = 0; i < 10; ++i) labels[i * 10] = 1;
    auto folds = stratified_kfold(labels, 10, 42);
    REQUIRE(folds.size() == 10);
    for (const FoldSplit& f : folds) {
      REQUIRE(f.test.size() == 10);
      std::size_t ones = 0;
      for (std::size_t i : f.test) ones += labels[i];
      CHECK(ones == 1);
      CHECK(f.train.size() == 90);
    }
  }

  SUBCASE("uneven case, brute-force recount") {
    std::vector<std::size_t> labels(95, 0);
    for (int i = 0; i < 9; ++i) labels[i * 10 + 5] = 1;
    auto folds = stratified_kfold(labels, 10, 42, /*strict=*/false);
    std::size_t total0 = 0, total1 = 0;
    for (const FoldSplit& f : folds) {
      std::size_t c0 = 0, c1 = 0;
      for (std::size_t i : f.test) (labels[i] ? c1 : c0)++;
      CHECK((c0 == 8 || c0 == 9));
      CHECK((c1 == 0 || c1 == 1));
      total0 += c0;
      total1 += c1;
    }
    CHECK(total0 == 86);
    CHECK(total1 == 9);
  }

  SUBCASE("test folds partition the indices") {
    std::vector<std::size_t> labels(95, 0);
    for (int i = 0; i < 9; ++i) labels[i * 10 + 5] = 1;
    auto folds = stratified_kfold(labels, 10, 1, false);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const FoldSplit& f : folds) {
      total += f.test.size();
      for (std::size_t i : f.test) CHECK(seen.insert(i).second);
      std::set<std::size_t> train(f.train.begin(), f.train.end());
      CHECK(train.size() == 95 - f.test.size());
      for (std::size_t i : f.test) CHECK(train.count(i) == 0);
    }
    CHECK(total == 95);
    CHECK(seen.size() == 95);
  }

  SUBCASE("deterministic in the seed") {
    std::vector<std::size_t> labels(50, 0);
    for (int i = 0; i < 20; ++i) labels[i] = 1;
    auto a = stratified_kfold(labels, 5, 9);
    auto b = stratified_kfold(labels, 5, 9);
    for (std::size_t f = 0; f < 5; ++f) {
      CHECK(a[f].test == b[f].test);
      CHECK(a[f].train == b[f].train);
    }
  }

  SUBCASE("a class smaller than k is an error by default") {
    std::vector<std::size_t> labels(50, 0);
    labels[3] = labels[17] = labels[31] = 1;
    CHECK_THROWS_WITH_AS(stratified_kfold(labels, 10, 0),
                         doctest::Contains("class 1"), DataError);
    std::vector<std::string> names{"normal", "attack"};
    CHECK_THROWS_WITH_AS(stratified_kfold(labels, 10, 0, true, &names),
                         doctest::Contains("attack"), DataError);
    CHECK_NOTHROW(stratified_kfold(labels, 10, 0, false));
  }
}

TEST_CASE("encoded datasets survive a binary round trip") {
  Schema s = small_schema();
  RawDataset raw = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);

  std::string path = tmp_path("roundtrip.bin").string();
  save_encoded(enc, pre, path, EncodedFormat::binary);
  EncodedDataset back = load_encoded(path);
  CHECK(back.n == enc.n);
  CHECK(back.features == enc.features);
  CHECK(back.x == enc.x);
  CHECK(back.labels == enc.labels);
  CHECK(back.feature_names == enc.feature_names);
  CHECK(back.class_names == enc.class_names);
  REQUIRE(back.groups.size() == enc.groups.size());
  for (std::size_t i = 0; i < back.groups.size(); ++i) {
    CHECK(back.groups[i].column == enc.groups[i].column);
    CHECK(back.groups[i].begin == enc.groups[i].begin);
    CHECK(back.groups[i].end == enc.groups[i].end);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta.json");
}

TEST_CASE("encoded datasets survive a csv round trip with sidecar") {
  Schema s = small_schema();
  RawDataset raw = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);

  std::string path = tmp_path("roundtrip.csv").string();
  save_encoded(enc, pre, path, EncodedFormat::csv);
  EncodedDataset back = load_encoded(path);
  CHECK(back.x == enc.x);
  CHECK(back.labels == enc.labels);
  CHECK(back.feature_names == enc.feature_names);
  CHECK(back.class_names == enc.class_names);
  CHECK(back.groups.size() == enc.groups.size());

  SUBCASE("a stale sidecar is rejected") {
    Preprocessor other = pre;
    other.columns[0].name = "different";
    std::ofstream meta(path + ".meta.json");
    meta << other.to_json_text();
    meta.close();
    CHECK_THROWS_AS(load_encoded(path), DataError);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta.json");
}

TEST_CASE("corrupt encoded files are rejected") {
  Schema s = small_schema();
  RawDataset raw = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);
  std::string path = tmp_path("corrupt.bin").string();
  save_encoded(enc, pre, path, EncodedFormat::binary);

  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string bytes = ss.str();
  in.close();

  SUBCASE("truncation") {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size() - 10));
    out.close();
    CHECK_THROWS_WITH_AS(load_encoded(path), doctest::Contains("truncated"),
                         DataError);
  }
  SUBCASE("wrong magic falls through to csv parsing and fails") {
    bytes[0] = 'X';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.close();
    CHECK_THROWS(load_encoded(path));
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta.json");
}

TEST_CASE("preprocessor state survives its json round trip") {
  Schema s = Schema::from_json_text(R"({
    "columns": [
      {"name": "dur", "kind": "numeric"},
      {"name": "proto", "kind": "nominal"},
      {"name": "cls", "kind": "label"}
    ],
    "category_map": {"neptune": "DoS"}
  })");
  RawDataset raw = parse("1.5,http,normal\n2.25,udp,neptune\n", s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::multiclass);
  Preprocessor back = Preprocessor::from_json_text(pre.to_json_text());
  CHECK(back.task == TaskKind::multiclass);
  REQUIRE(back.columns.size() == 2);
  CHECK(back.columns[0].lo == 1.5);
  CHECK(back.columns[0].hi == 2.25);
  CHECK(back.columns[1].vocab == pre.columns[1].vocab);
  CHECK(back.class_names == pre.class_names);
  CHECK(back.map_label("neptune") == pre.map_label("neptune"));
}

TEST_CASE("re-fitting an encoded csv reproduces the width") {
  Schema s = small_schema();
  RawDataset raw = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);
  std::string path = tmp_path("refit.csv").string();
  save_encoded(enc, pre, path, EncodedFormat::csv);

  Schema flat;
  for (const std::string& name : enc.feature_names)
    flat.columns.push_back({name, ColumnKind::numeric});
  flat.columns.push_back({"label", ColumnKind::label});
  RawDataset again = load_csv(path, flat);
  CHECK(again.size() == enc.n);
  Preprocessor refit = fit_preprocessor(again, TaskKind::binary);
  CHECK(refit.feature_count() == enc.features);

  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta.json");
}

TEST_CASE("rows_tensor gathers selected rows") {
  Schema s = small_schema();
  RawDataset raw = parse(kSmallCsv, s);
  Preprocessor pre = fit_preprocessor(raw, TaskKind::binary);
  EncodedDataset enc = transform(pre, raw);
  Tensor t = enc.rows_tensor({2, 0});
  REQUIRE(t.shape() == std::vector<std::size_t>{2, 4});
  CHECK(t(0, 0) == enc.at(2, 0));
  CHECK(t(1, 3) == enc.at(0, 3));
  CHECK(enc.labels_for({2, 0}) == std::vector<std::size_t>{1, 0});
}
