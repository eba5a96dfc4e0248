#include "dualnet/sweep.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dualnet {

const char* sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::growth: return "growth";
    case SweepKind::plainstack: return "plainstack";
    case SweepKind::connectivity: return "connectivity";
  }
  return "?";
}

SweepKind sweep_kind_from_name(const std::string& name) {
  if (name == "growth") return SweepKind::growth;
  if (name == "plainstack") return SweepKind::plainstack;
  if (name == "connectivity") return SweepKind::connectivity;
  throw ConfigError("unknown sweep '" + name +
                    "' (expected growth, plainstack, or connectivity)");
}

namespace {

struct Variant {
  std::string config_id, x;
  ArchitectureConfig cfg;
};

std::vector<Variant> sweep_variants(SweepKind kind,
                                    const ArchitectureConfig& base) {
  std::vector<Variant> out;
  switch (kind) {
    case SweepKind::growth: {
      if (base.kind != NetKind::dense && base.kind != NetKind::dualnet) {
        throw ConfigError("growth sweep needs a dense or dualnet base");
      }
      for (std::size_t k = 1; k <= 6; ++k) {
        Variant v{"growth_k" + std::to_string(k), std::to_string(k), base};
        v.cfg.growth_rate = k;
        out.push_back(std::move(v));
      }
      break;
    }
    case SweepKind::plainstack: {
      for (std::size_t n = 1; n <= 10; ++n) {
        Variant v{"plainstack_n" + std::to_string(n), std::to_string(n), base};
        v.cfg.kind = NetKind::plain_stack;
        v.cfg.attention.enabled = false;
        v.cfg.blocks = n;
        out.push_back(std::move(v));
      }
      break;
    }
    case SweepKind::connectivity: {
      if (base.kind != NetKind::dense && base.kind != NetKind::dualnet) {
        throw ConfigError("connectivity sweep needs a dense or dualnet base");
      }
      for (Connectivity c : {Connectivity::concat, Connectivity::add}) {
        Variant v{std::string("connectivity_") + connectivity_name(c),
                  connectivity_name(c), base};
        v.cfg.connectivity = c;
        out.push_back(std::move(v));
      }
      break;
    }
  }
  for (auto& v : out) v.cfg.validate();
  return out;
}

std::string fmt4(const std::optional<double>& v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

SweepResult run_sweep(SweepKind kind, const ArchitectureConfig& base,
                      const TrainConfig& tcfg, const EncodedDataset& ds,
                      std::uint64_t split_seed) {
  auto folds = stratified_kfold(ds.labels, 5, split_seed, true,
                                ds.class_names.empty() ? nullptr
                                                       : &ds.class_names);
  EncodedDataset train_ds = select_rows(ds, folds[0].train);
  EncodedDataset test_ds = select_rows(ds, folds[0].test);

  std::size_t n_classes = 0;
  for (std::size_t l : ds.labels) n_classes = std::max(n_classes, l + 1);

  SweepResult result;
  result.kind = kind;
  for (const Variant& v : sweep_variants(kind, base)) {
    const auto t0 = std::chrono::steady_clock::now();

    Network net = Network::build(v.cfg, tcfg.precision);
    TrainHistory history = train(net, train_ds, tcfg);

    SweepPoint p;
    p.config_id = v.config_id;
    p.x = v.x;
    p.train_accuracy = history.epochs.back().accuracy;
    p.params = count_params(net);

    Prediction pred = predict(net, test_ds, tcfg.batch_size);
    if (n_classes == 2) {
      Metrics m = metrics(confusion(pred.classes, test_ds.labels, 1));
      p.accuracy = m.acc;
      p.dr = m.dr;
      p.far = m.far;
    } else {
      p.accuracy = accuracy(pred.classes, test_ds.labels);
    }

    const auto t1 = std::chrono::steady_clock::now();
    p.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    result.points.push_back(std::move(p));
  }
  return result;
}

std::string sweep_to_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "config_id,x,accuracy,dr,far,train_accuracy,params,wall_time_s\n";
  for (const auto& p : result.points) {
    char wall[32];
    std::snprintf(wall, sizeof(wall), "%.3f", p.wall_time_s);
    out << p.config_id << ',' << p.x << ',' << fmt4(p.accuracy) << ','
        << fmt4(p.dr) << ',' << fmt4(p.far) << ','
        << fmt4(p.train_accuracy) << ',' << p.params << ',' << wall << '\n';
  }
  return out.str();
}

void save_sweep_csv(const SweepResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << sweep_to_csv(result);
  if (!out) throw IoError("short write to " + path);
}

}  // namespace dualnet
