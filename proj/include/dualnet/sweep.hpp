#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dualnet/data.hpp"
#include "dualnet/eval.hpp"
#include "dualnet/train.hpp"

namespace dualnet {

// growth:       dense plains per group, k = 1..6
// plainstack:   stacked plain blocks, n = 1..10
// connectivity: concat vs add combiners inside the dense groups
enum class SweepKind { growth, plainstack, connectivity };

const char* sweep_kind_name(SweepKind k);
SweepKind sweep_kind_from_name(const std::string& name);

struct SweepPoint {
  std::string config_id;
  std::string x;
  std::optional<double> accuracy, dr, far;  // held-out split
  double train_accuracy = 0.0;
  std::size_t params = 0;
  double wall_time_s = 0.0;
};

struct SweepResult {
  SweepKind kind = SweepKind::growth;
  std::vector<SweepPoint> points;
};

// Trains one model per swept value on a stratified 80/20 split of `ds` and
// scores the held-out fifth. The detection and false-alarm columns are
// filled for two-class data and left undefined otherwise.
SweepResult run_sweep(SweepKind kind, const ArchitectureConfig& base,
                      const TrainConfig& tcfg, const EncodedDataset& ds,
                      std::uint64_t split_seed = 0);

std::string sweep_to_csv(const SweepResult& result);
void save_sweep_csv(const SweepResult& result, const std::string& path);

}  // namespace dualnet
