#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

fs::path scratch_dir() {
  auto dir = fs::temp_directory_path() / "dualnet-cli-tests";
  fs::create_directories(dir);
  return dir;
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  ++counter;
  const fs::path out_file = scratch_dir() / ("out" + std::to_string(counter));
  const fs::path err_file = scratch_dir() / ("err" + std::to_string(counter));
  const std::string cmd = std::string(DUALNET_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

std::string fixture(const std::string& name) {
  return (fs::path(DUALNET_FIXTURE_DIR) / name).string();
}

// the tool prints "run dir: <path>" when a command succeeds
std::string run_dir_of(const std::string& stdout_text) {
  const std::string tag = "run dir: ";
  auto pos = stdout_text.find(tag);
  REQUIRE(pos != std::string::npos);
  auto end = stdout_text.find('\n', pos);
  return stdout_text.substr(pos + tag.size(), end - pos - tag.size());
}

}  // namespace

TEST_CASE("version flag") {
  CliResult r = run_cli("--version");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("0.1.0") != std::string::npos);
}

TEST_CASE("pipeline end to end") {
  const std::string out_root = (scratch_dir() / "runs").string();

  // preprocess
  CliResult pre = run_cli("preprocess --data " + fixture("tiny.csv") +
                          " --schema " + fixture("tiny.schema.json") +
                          " --task binary --out " + out_root);
  CAPTURE(pre.err);
  REQUIRE(pre.exit_code == 0);
  const fs::path pre_dir = run_dir_of(pre.out);
  CHECK(fs::exists(pre_dir / "encoded.bin"));
  CHECK(fs::exists(pre_dir / "encoded.bin.meta.json"));
  CHECK(fs::exists(pre_dir / "summary.json"));

  auto summary = nlohmann::json::parse(slurp(pre_dir / "summary.json"));
  CHECK(summary["rows"].get<int>() == 24);
  // 3 numeric + one-hot proto {tcp, udp, icmp}
  CHECK(summary["features"].get<int>() == 6);
  CHECK(summary["classes"].size() == 2);
  CHECK(summary["class_counts"][0].get<int>() == 12);
  CHECK(summary["class_counts"][1].get<int>() == 12);

  auto manifest = nlohmann::json::parse(slurp(pre_dir / "manifest.json"));
  CHECK(manifest["command"] == "preprocess");
  CHECK(manifest["inputs"].size() == 2);
  CHECK(manifest["inputs"][0]["fnv1a64"].get<std::string>().size() == 16);
  CHECK(manifest["wall_time_s"].get<double>() >= 0.0);

  const std::string encoded = (pre_dir / "encoded.bin").string();

  // train
  CliResult tr = run_cli("train --data " + encoded + " --arch-config " +
                         fixture("dualnet_tiny.arch.json") +
                         " --train-config " + fixture("train_tiny.json") +
                         " --out " + out_root);
  CAPTURE(tr.err);
  REQUIRE(tr.exit_code == 0);
  const fs::path tr_dir = run_dir_of(tr.out);
  REQUIRE(fs::exists(tr_dir / "model.ckpt"));
  const std::string history = slurp(tr_dir / "history.csv");
  CHECK(history.rfind("epoch,loss,accuracy\n", 0) == 0);
  // 2 epochs -> header + 2 rows
  CHECK(std::count(history.begin(), history.end(), '\n') == 3);

  // retraining with the same seed reproduces the checkpoint bit for bit,
  // manifests aside
  CliResult tr2 = run_cli("train --data " + encoded + " --arch-config " +
                          fixture("dualnet_tiny.arch.json") +
                          " --train-config " + fixture("train_tiny.json") +
                          " --out " + out_root);
  REQUIRE(tr2.exit_code == 0);
  const fs::path tr2_dir = run_dir_of(tr2.out);
  CHECK(slurp(tr_dir / "model.ckpt") == slurp(tr2_dir / "model.ckpt"));

  // explain
  CliResult ex = run_cli("explain --model " + (tr_dir / "model.ckpt").string() +
                         " --data " + encoded + " --topk 3 --out " + out_root);
  CAPTURE(ex.err);
  REQUIRE(ex.exit_code == 0);
  const fs::path ex_dir = run_dir_of(ex.out);
  const std::string attn = slurp(ex_dir / "attention.csv");
  CHECK(attn.rfind("rank,feature,score\n", 0) == 0);
  CHECK(std::count(attn.begin(), attn.end(), '\n') == 4);
  auto attn_json = nlohmann::json::parse(slurp(ex_dir / "attention.json"));
  CHECK(attn_json["encoded"].size() == 6);
  CHECK(attn_json["top"].size() == 3);

  // crossval
  CliResult cv = run_cli("crossval --data " + encoded + " --arch-config " +
                         fixture("dualnet_tiny.arch.json") +
                         " --train-config " + fixture("train_tiny.json") +
                         " --k 2 --out " + out_root);
  CAPTURE(cv.err);
  REQUIRE(cv.exit_code == 0);
  const fs::path cv_dir = run_dir_of(cv.out);
  auto cv_json = nlohmann::json::parse(slurp(cv_dir / "crossval.json"));
  CHECK(cv_json["k"].get<int>() == 2);
  REQUIRE(cv_json["folds"].size() == 2);
  const double mean_acc = cv_json["mean"]["acc"].get<double>();
  const double recomputed = (cv_json["folds"][0]["acc"].get<double>() +
                             cv_json["folds"][1]["acc"].get<double>()) /
                            2.0;
  CHECK(mean_acc == doctest::Approx(recomputed).epsilon(1e-12));
  const std::string cv_csv = slurp(cv_dir / "crossval.csv");
  CHECK(cv_csv.rfind("fold,acc,dr,far,tp,fn,tn,fp\n", 0) == 0);
  CHECK(cv_csv.find("\nmean,") != std::string::npos);

  // sweep over the two dense-combiner variants
  CliResult sw = run_cli("sweep --grid connectivity --data " + encoded +
                         " --arch-config " + fixture("dualnet_tiny.arch.json") +
                         " --train-config " + fixture("train_tiny.json") +
                         " --out " + out_root);
  CAPTURE(sw.err);
  REQUIRE(sw.exit_code == 0);
  const fs::path sw_dir = run_dir_of(sw.out);
  const std::string sweep_csv = slurp(sw_dir / "sweep.csv");
  CHECK(sweep_csv.rfind(
            "config_id,x,accuracy,dr,far,train_accuracy,params,wall_time_s\n",
            0) == 0);
  CHECK(sweep_csv.find("connectivity_concat,concat,") != std::string::npos);
  CHECK(sweep_csv.find("connectivity_add,add,") != std::string::npos);
}

TEST_CASE("usage errors exit nonzero") {
  CliResult missing = run_cli("train --arch-config " +
                              fixture("dualnet_tiny.arch.json"));
  CHECK(missing.exit_code != 0);

  CliResult absent = run_cli("train --data /no/such/file --arch-config " +
                             fixture("dualnet_tiny.arch.json"));
  CHECK(absent.exit_code != 0);

  CliResult bad_grid = run_cli("sweep --grid everything --data " +
                               fixture("tiny.csv") + " --arch-config " +
                               fixture("dualnet_tiny.arch.json"));
  CHECK(bad_grid.exit_code != 0);
}

TEST_CASE("runtime failures report one json line on stderr") {
  const std::string out_root = (scratch_dir() / "runs-err").string();
  const fs::path bad_cfg = scratch_dir() / "bad_train.json";
  {
    std::ofstream out(bad_cfg);
    out << "{\"learning_rte\": 0.001}";
  }
  CliResult r = run_cli("train --data " + fixture("tiny.csv") +
                        " --arch-config " + fixture("dualnet_tiny.arch.json") +
                        " --train-config " + bad_cfg.string() + " --out " +
                        out_root);
  CHECK(r.exit_code == 1);
  auto err = nlohmann::json::parse(r.err);
  CHECK(err["error"] == "ConfigError");
  CHECK(err["message"].get<std::string>().find("learning_rte") !=
        std::string::npos);
  CHECK(r.err.find('\n') == r.err.size() - 1);
}
