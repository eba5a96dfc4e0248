#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualnet/data.hpp"
#include "dualnet/network.hpp"

namespace dualnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;  // >= 2, batch norm needs company
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  Dtype precision = Dtype::f64;
  TaskKind task = TaskKind::binary;

  void validate() const;
  std::string to_json_text(int indent = 2) const;
  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig load(const std::string& path);
};

// Mean over the batch of -log p(label), with a 1e-12 probability floor.
ValueId sparse_ce_loss(Tape& tape, ValueId probs,
                       const std::vector<std::size_t>& labels);

struct AdamState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots;  // keyed by parameter name
  std::uint64_t t = 0;
};

// Bias-corrected update in place; t advances once per call.
void adam_step(const std::vector<StagedParam>& params, const GradMap& grads,
               AdamState& state, const TrainConfig& cfg);

struct EpochStats {
  double loss = 0.0;      // mean training loss over the epoch's samples
  double accuracy = 0.0;  // inference-mode accuracy on the training set
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// Seeded mini-batch loop; a trailing batch of one is folded into its
// predecessor so batch norm always sees at least two rows.
TrainHistory train(Network& net, const EncodedDataset& ds,
                   const TrainConfig& cfg, AdamState* state = nullptr);

struct Prediction {
  std::vector<std::size_t> classes;  // argmax, lowest index wins ties
  Tensor probs;                      // [n, classes]
};

Prediction predict(Network& net, const EncodedDataset& ds,
                   std::size_t batch_size = 256);
Prediction predict_rows(Network& net, const Tensor& x,
                        std::size_t batch_size = 256);

double accuracy(const std::vector<std::size_t>& predicted,
                const std::vector<std::size_t>& labels);

// Single-file checkpoint: magic, version, JSON header (architecture + its
// hash, named parameter and state records, optional preprocessor, history),
// then one little-endian f64 payload. Byte layout documented in the README
// and pinned by round-trip tests.
void save_checkpoint(Network& net, const std::string& path,
                     const Preprocessor* pre = nullptr,
                     const TrainHistory* history = nullptr);
Network load_checkpoint(const std::string& path,
                        std::optional<Preprocessor>* pre_out = nullptr,
                        TrainHistory* history_out = nullptr);

}  // namespace dualnet
