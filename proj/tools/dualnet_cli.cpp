#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dualnet/eval.hpp"
#include "dualnet/sweep.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualnet;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string fingerprint_hex(const std::string& path) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(read_text(path))));
  return buf;
}

std::string time_stamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Run directory plus the manifest that records what produced its contents.
class RunContext {
 public:
  RunContext(std::string command, std::vector<std::string> argv,
             const std::string& out_root, std::uint64_t seed)
      : t0_(std::chrono::steady_clock::now()) {
    fs::path base = fs::path(out_root) / (command + "-" + time_stamp());
    dir_ = base;
    for (int n = 2; fs::exists(dir_); ++n) {
      dir_ = base.string() + "-" + std::to_string(n);
    }
    fs::create_directories(dir_);
    manifest_["command"] = std::move(command);
    manifest_["argv"] = std::move(argv);
    manifest_["tool_version"] = kToolVersion;
    manifest_["seed"] = seed;
    manifest_["inputs"] = json::array();
    manifest_["out_dir"] = dir_.string();
  }

  const fs::path& dir() const { return dir_; }

  void add_input(const std::string& path) {
    manifest_["inputs"].push_back(
        json{{"path", path}, {"fnv1a64", fingerprint_hex(path)}});
  }

  void finish() {
    const auto t1 = std::chrono::steady_clock::now();
    manifest_["wall_time_s"] = std::chrono::duration<double>(t1 - t0_).count();
    write_text(dir_ / "manifest.json", manifest_.dump(2) + "\n");
    std::cout << "run dir: " << dir_.string() << "\n";
  }

 private:
  json manifest_;
  fs::path dir_;
  std::chrono::steady_clock::time_point t0_;
};

std::string fmt4(const std::optional<double>& v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

// loads the "<path>.meta.json" sidecar when the encoded file has one
std::optional<Preprocessor> load_sidecar(const std::string& data_path) {
  const std::string meta = data_path + ".meta.json";
  if (!fs::exists(meta)) return std::nullopt;
  return Preprocessor::from_json_text(read_text(meta));
}

struct CommonArgs {
  std::string out_root = "runs";
  std::uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* cmd) {
    if (const char* env = std::getenv("DUALNET_OUT")) out_root = env;
    cmd->add_option("--out", out_root, "output root for run directories");
    auto* s = cmd->add_option("--seed", seed, "seed override");
    s->each([this](const std::string&) { seed_set = true; });
  }
};

TrainConfig load_train_config(const std::string& path, const CommonArgs& common,
                              const std::string& precision) {
  TrainConfig cfg;
  if (!path.empty()) cfg = TrainConfig::load(path);
  if (common.seed_set) cfg.seed = common.seed;
  if (!precision.empty()) cfg.precision = dtype_from_name(precision);
  cfg.validate();
  return cfg;
}

json metrics_json_row(const Metrics& m) {
  auto val = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return json{{"acc", val(m.acc)},
              {"dr", val(m.dr)},
              {"far", val(m.far)},
              {"counts",
               {{"tp", m.counts.tp},
                {"fn", m.counts.fn},
                {"tn", m.counts.tn},
                {"fp", m.counts.fp}}}};
}

// ---- preprocess -------------------------------------------------------------

struct PreprocessArgs {
  CommonArgs common;
  std::string data, schema, task = "binary", format = "binary";
};

void cmd_preprocess(const PreprocessArgs& a,
                    const std::vector<std::string>& argv) {
  RunContext run("preprocess", argv, a.common.out_root, a.common.seed);
  run.add_input(a.data);
  run.add_input(a.schema);

  Schema schema = Schema::load(a.schema);
  RawDataset raw = load_csv(a.data, schema);
  Preprocessor pre = fit_preprocessor(raw, task_from_name(a.task));
  EncodedDataset ds = transform(pre, raw);

  const bool binary = a.format == "binary";
  const fs::path out =
      run.dir() / (binary ? "encoded.bin" : "encoded.csv");
  save_encoded(ds, pre, out.string(),
               binary ? EncodedFormat::binary : EncodedFormat::csv);

  std::vector<std::size_t> per_class(ds.class_names.size(), 0);
  for (std::size_t l : ds.labels) per_class[l] += 1;
  json summary{{"rows", ds.n},
               {"features", ds.features},
               {"classes", ds.class_names},
               {"class_counts", per_class},
               {"encoded", out.string()}};
  write_text(run.dir() / "summary.json", summary.dump(2) + "\n");

  std::cout << ds.n << " rows, " << ds.features << " features, "
            << ds.class_names.size() << " classes\n";
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
    std::cout << "  " << ds.class_names[c] << ": " << per_class[c] << "\n";
  }
  run.finish();
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  CommonArgs common;
  std::string data, arch, train_config, precision;
};

std::string history_csv(const TrainHistory& h) {
  std::ostringstream out;
  out << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", e + 1,
                  h.epochs[e].loss, h.epochs[e].accuracy);
    out << buf;
  }
  return out.str();
}

void cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  RunContext run("train", argv, a.common.out_root, a.common.seed);
  run.add_input(a.data);
  run.add_input(a.arch);
  if (!a.train_config.empty()) run.add_input(a.train_config);

  TrainConfig tcfg = load_train_config(a.train_config, a.common, a.precision);
  ArchitectureConfig arch = ArchitectureConfig::load(a.arch);
  EncodedDataset ds = load_encoded(a.data);
  std::optional<Preprocessor> pre = load_sidecar(a.data);

  Network net = Network::build(arch, tcfg.precision);
  TrainHistory history = train(net, ds, tcfg);

  const fs::path ckpt = run.dir() / "model.ckpt";
  save_checkpoint(net, ckpt.string(), pre ? &*pre : nullptr, &history);
  write_text(run.dir() / "history.csv", history_csv(history));

  const EpochStats& last = history.epochs.back();
  std::cout << "trained " << net.plan().total_params << " parameters for "
            << history.epochs.size() << " epochs\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final loss %.6f, train accuracy %.4f\n",
                last.loss, last.accuracy);
  std::cout << buf << "checkpoint: " << ckpt.string() << "\n";
  run.finish();
}

// ---- crossval -----------------------------------------------------------------

struct CrossvalArgs {
  CommonArgs common;
  std::string data, arch, train_config, precision;
  std::size_t k = 10;
};

void cmd_crossval(const CrossvalArgs& a, const std::vector<std::string>& argv) {
  RunContext run("crossval", argv, a.common.out_root, a.common.seed);
  run.add_input(a.data);
  run.add_input(a.arch);
  if (!a.train_config.empty()) run.add_input(a.train_config);

  TrainConfig tcfg = load_train_config(a.train_config, a.common, a.precision);
  ArchitectureConfig arch = ArchitectureConfig::load(a.arch);
  EncodedDataset ds = load_encoded(a.data);

  std::size_t n_classes = 0;
  for (std::size_t l : ds.labels) n_classes = std::max(n_classes, l + 1);

  auto folds = stratified_kfold(ds, a.k, tcfg.seed);
  json fold_rows = json::array();
  std::ostringstream csv;
  csv << "fold,acc,dr,far,tp,fn,tn,fp\n";
  double acc_sum = 0, dr_sum = 0, far_sum = 0;
  std::size_t dr_n = 0, far_n = 0;

  for (std::size_t f = 0; f < folds.size(); ++f) {
    Network net = Network::build(arch, tcfg.precision);
    train(net, select_rows(ds, folds[f].train), tcfg);
    EncodedDataset test = select_rows(ds, folds[f].test);
    Prediction pred = predict(net, test, tcfg.batch_size);

    Metrics m;
    if (n_classes == 2) {
      m = metrics(confusion(pred.classes, test.labels, 1));
    } else {
      m.acc = accuracy(pred.classes, test.labels);
    }
    acc_sum += m.acc.value_or(0.0);
    if (m.dr) { dr_sum += *m.dr; ++dr_n; }
    if (m.far) { far_sum += *m.far; ++far_n; }

    fold_rows.push_back(metrics_json_row(m));
    csv << (f + 1) << ',' << fmt4(m.acc) << ',' << fmt4(m.dr) << ','
        << fmt4(m.far) << ',' << m.counts.tp << ',' << m.counts.fn << ','
        << m.counts.tn << ',' << m.counts.fp << '\n';
    std::cout << "fold " << (f + 1) << "/" << folds.size() << ": acc "
              << fmt4(m.acc) << " dr " << fmt4(m.dr) << " far " << fmt4(m.far)
              << "\n";
  }

  Metrics mean;
  mean.acc = acc_sum / static_cast<double>(folds.size());
  if (dr_n > 0) mean.dr = dr_sum / static_cast<double>(dr_n);
  if (far_n > 0) mean.far = far_sum / static_cast<double>(far_n);
  csv << "mean," << fmt4(mean.acc) << ',' << fmt4(mean.dr) << ','
      << fmt4(mean.far) << ",,,,\n";

  json out{{"k", a.k}, {"folds", fold_rows}, {"mean", metrics_json_row(mean)}};
  write_text(run.dir() / "crossval.json", out.dump(2) + "\n");
  write_text(run.dir() / "crossval.csv", csv.str());
  std::cout << "mean: acc " << fmt4(mean.acc) << " dr " << fmt4(mean.dr)
            << " far " << fmt4(mean.far) << "\n";
  run.finish();
}

// ---- explain ------------------------------------------------------------------

struct ExplainArgs {
  CommonArgs common;
  std::string model, data, agg = "sum";
  std::size_t topk = 5, samples = 0;
};

void cmd_explain(const ExplainArgs& a, const std::vector<std::string>& argv) {
  RunContext run("explain", argv, a.common.out_root, a.common.seed);
  run.add_input(a.model);
  run.add_input(a.data);

  Network net = load_checkpoint(a.model);
  EncodedDataset ds = load_encoded(a.data);

  std::vector<std::size_t> samples;
  if (a.samples > 0 && a.samples < ds.n) {
    Rng rng(a.common.seed);
    std::vector<std::size_t> idx = shuffled_indices(ds.n, rng);
    samples.assign(idx.begin(), idx.begin() + a.samples);
  }

  GroupAggregate agg =
      a.agg == "max" ? GroupAggregate::max : GroupAggregate::sum;
  AttentionReport rep = attention_importance(net, ds, samples, 256, agg);

  export_attention(rep, (run.dir() / "attention.json").string(), "json",
                   a.topk);
  export_attention(rep, (run.dir() / "attention.csv").string(), "csv", a.topk);

  std::size_t rank = 1;
  for (const auto& item : rep.top(a.topk)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", item.score);
    std::cout << rank++ << ". " << item.name << "  " << buf << "\n";
  }
  run.finish();
}

// ---- sweep --------------------------------------------------------------------

struct SweepArgs {
  CommonArgs common;
  std::string data, arch, train_config, precision, grid;
};

void cmd_sweep(const SweepArgs& a, const std::vector<std::string>& argv) {
  RunContext run("sweep", argv, a.common.out_root, a.common.seed);
  run.add_input(a.data);
  run.add_input(a.arch);
  if (!a.train_config.empty()) run.add_input(a.train_config);

  TrainConfig tcfg = load_train_config(a.train_config, a.common, a.precision);
  ArchitectureConfig arch = ArchitectureConfig::load(a.arch);
  EncodedDataset ds = load_encoded(a.data);

  SweepResult result =
      run_sweep(sweep_kind_from_name(a.grid), arch, tcfg, ds, tcfg.seed);
  save_sweep_csv(result, (run.dir() / "sweep.csv").string());

  for (const auto& p : result.points) {
    std::cout << p.config_id << ": acc " << fmt4(p.accuracy) << ", "
              << p.params << " params\n";
  }
  run.finish();
}

const char* error_name(const Error& e) {
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const DataError*>(&e)) return "DataError";
  if (dynamic_cast<const IoError*>(&e)) return "IoError";
  return "Error";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_argv(argv, argv + argc);

  CLI::App app{"dual-scale intrusion detection toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  PreprocessArgs pa;
  auto* pre = app.add_subcommand(
      "preprocess", "fit an encoder on a raw csv and store the encoded set");
  pa.common.attach(pre);
  pre->add_option("--data", pa.data, "raw csv file")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--schema", pa.schema, "column schema json")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--task", pa.task, "binary or multiclass")
      ->check(CLI::IsMember({"binary", "multiclass"}));
  pre->add_option("--format", pa.format, "encoded file format")
      ->check(CLI::IsMember({"binary", "csv"}));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on an encoded set");
  ta.common.attach(tr);
  tr->add_option("--data", ta.data, "encoded dataset")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--arch-config", ta.arch, "architecture json")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--train-config", ta.train_config, "training json")
      ->check(CLI::ExistingFile);
  tr->add_option("--precision", ta.precision, "f32 or f64 override")
      ->check(CLI::IsMember({"f32", "f64", "single", "double"}));

  CrossvalArgs ca;
  auto* cv = app.add_subcommand("crossval", "k-fold cross validation");
  ca.common.attach(cv);
  cv->add_option("--data", ca.data, "encoded dataset")
      ->required()
      ->check(CLI::ExistingFile);
  cv->add_option("--arch-config", ca.arch, "architecture json")
      ->required()
      ->check(CLI::ExistingFile);
  cv->add_option("--train-config", ca.train_config, "training json")
      ->check(CLI::ExistingFile);
  cv->add_option("--precision", ca.precision, "f32 or f64 override")
      ->check(CLI::IsMember({"f32", "f64", "single", "double"}));
  cv->add_option("--k", ca.k, "fold count")->check(CLI::Range(2, 100));

  ExplainArgs ea;
  auto* ex = app.add_subcommand(
      "explain", "rank input features by received attention");
  ea.common.attach(ex);
  ex->add_option("--model", ea.model, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--data", ea.data, "encoded dataset")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--topk", ea.topk, "features to list");
  ex->add_option("--samples", ea.samples,
                 "rows to average over (0 = whole set)");
  ex->add_option("--agg", ea.agg, "one-hot group aggregation")
      ->check(CLI::IsMember({"sum", "max"}));

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "train one model per swept value");
  sa.common.attach(sw);
  sw->add_option("--grid", sa.grid, "growth, plainstack, or connectivity")
      ->required()
      ->check(CLI::IsMember({"growth", "plainstack", "connectivity"}));
  sw->add_option("--data", sa.data, "encoded dataset")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--arch-config", sa.arch, "architecture json")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--train-config", sa.train_config, "training json")
      ->check(CLI::ExistingFile);
  sw->add_option("--precision", sa.precision, "f32 or f64 override")
      ->check(CLI::IsMember({"f32", "f64", "single", "double"}));

  try {
    app.parse(argc, argv);
    if (pre->parsed()) cmd_preprocess(pa, raw_argv);
    if (tr->parsed()) cmd_train(ta, raw_argv);
    if (cv->parsed()) cmd_crossval(ca, raw_argv);
    if (ex->parsed()) cmd_explain(ea, raw_argv);
    if (sw->parsed()) cmd_sweep(sa, raw_argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    json err{{"error", error_name(e)}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", "Error"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
