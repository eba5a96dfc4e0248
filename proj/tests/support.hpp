#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dualnet/data.hpp"
#include "dualnet/gradcheck.hpp"
#include "dualnet/layers.hpp"
#include "dualnet/rng.hpp"

namespace dualnet::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t(i) = rng.uniform(lo, hi);
  return t;
}

template <typename LayerT>
std::vector<std::pair<std::string, Tensor*>> collect_params(LayerT& layer) {
  std::vector<std::pair<std::string, Tensor*>> out;
  layer.visit_params([&](const std::string& name, Tensor& t, const ParamInit&) {
    out.emplace_back(name, &t);
  });
  return out;
}

// FD-vs-analytic check for a taped forward. `build` must reconstruct the
// loss from current parameter values on every call; the dropout stream is
// re-seeded per evaluation so the sampled masks stay fixed.
inline GradCheckReport check_taped_gradients(
    const std::function<ValueId(FwdCtx&)>& build,
    const std::vector<std::pair<std::string, Tensor*>>& params,
    Mode mode = Mode::train, double tol = 1e-6, double step = 1e-4,
    std::uint64_t drop_seed = 99) {
  auto eval = [&](std::vector<Tensor>* grads) -> double {
    Tape tape;
    std::vector<StagedParam> staged;
    Rng rng(drop_seed);
    FwdCtx ctx{tape, mode, &rng, &staged, nullptr};
    ValueId loss = build(ctx);
    const double value = tape.value(loss)(0);
    if (grads) {
      GradMap gm = tape.backward(loss);
      std::unordered_map<std::string, const Tensor*> by_name;
      for (const StagedParam& sp : staged) {
        auto it = gm.find(sp.id);
        if (it != gm.end()) by_name.emplace(sp.name, &it->second);
      }
      grads->clear();
      for (const auto& [name, tensor] : params) {
        auto it = by_name.find(name);
        grads->push_back(it != by_name.end() ? *it->second
                                             : Tensor::zeros(tensor->shape()));
      }
    }
    return value;
  };
  return gradient_check_params(eval, params, {.tol = tol, .step = step});
}

// Two Gaussian blobs in the unit box, alternating labels.
inline EncodedDataset synthetic_blobs(std::size_t n, std::size_t features,
                                      std::uint64_t seed,
                                      double spread = 0.08) {
  Rng rng(seed);
  EncodedDataset ds;
  ds.n = n;
  ds.features = features;
  ds.class_names = {"normal", "attack"};
  for (std::size_t j = 0; j < features; ++j) {
    ds.feature_names.push_back("f" + std::to_string(j));
    ds.groups.push_back({ds.feature_names.back(), j, j + 1});
  }
  ds.x.resize(n * features);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t label = i % 2;
    ds.labels[i] = label;
    double center = label ? 0.7 : 0.3;
    for (std::size_t j = 0; j < features; ++j) {
      double v = center + rng.normal() * spread;
      ds.x[i * features + j] = std::min(1.0, std::max(0.0, v));
    }
  }
  return ds;
}

}  // namespace dualnet::testing
