#include "dualnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dualnet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate < 0.0)
    throw ConfigError("learning_rate must not be negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (batch_size < 2)
    throw ConfigError("batch_size must be at least 2 (batch norm)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
}

static void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::string TrainConfig::to_json_text(int indent) const {
  json j;
  j["learning_rate"] = learning_rate;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["epsilon"] = epsilon;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["precision"] = dtype_name(precision);
  j["task"] = task_name(task);
  return j.dump(indent) + "\n";
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("training config is not valid JSON: ") +
                      e.what());
  }
  if (!j.is_object()) throw ConfigError("training config must be an object");
  check_keys(j,
             {"learning_rate", "beta1", "beta2", "epsilon", "batch_size",
              "epochs", "seed", "precision", "task"},
             "training config");
  TrainConfig c;
  if (j.contains("learning_rate"))
    c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
  if (j.contains("batch_size"))
    c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("precision"))
    c.precision = dtype_from_name(j.at("precision").get<std::string>());
  if (j.contains("task")) c.task = task_from_name(j.at("task").get<std::string>());
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ValueId sparse_ce_loss(Tape& tape, ValueId probs,
                       const std::vector<std::size_t>& labels) {
  ValueId picked = ops::pick_class(tape, probs, labels);
  ValueId floored = ops::clamp_min(tape, picked, 1e-12);
  ValueId logs = ops::log_(tape, floored);
  ValueId mean = ops::mean_all(tape, logs);
  return ops::affine_scalar(tape, mean, -1.0, 0.0);
}

void adam_step(const std::vector<StagedParam>& params, const GradMap& grads,
               AdamState& state, const TrainConfig& cfg) {
  state.t += 1;
  double b1t = 1.0 - std::pow(cfg.beta1, double(state.t));
  double b2t = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (const StagedParam& p : params) {
    Tensor& w = *p.tensor;
    AdamState::Slot& slot = state.slots[p.name];
    if (slot.m.empty()) {
      slot.m.assign(w.numel(), 0.0);
      slot.v.assign(w.numel(), 0.0);
    } else if (slot.m.size() != w.numel()) {
      throw ShapeError("optimizer state for '" + p.name + "' has " +
                       std::to_string(slot.m.size()) + " elements, parameter has " +
                       std::to_string(w.numel()));
    }
    auto it = grads.find(p.id);
    const std::vector<double>* g = it == grads.end() ? nullptr : &it->second.data();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      double gi = g ? (*g)[i] : 0.0;
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = slot.m[i] / b1t;
      double vhat = slot.v[i] / b2t;
      w.data()[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    if (w.dtype() == Dtype::f32) w.quantize();
  }
}

// Consecutive index chunks; a final chunk of one is merged into the one
// before it.
static std::vector<std::vector<std::size_t>> batch_plan(
    const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    std::size_t end = std::min(order.size(), at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

TrainHistory train(Network& net, const EncodedDataset& ds,
                   const TrainConfig& cfg, AdamState* state) {
  cfg.validate();
  if (ds.n < 2) throw DataError("training needs at least 2 samples");
  net.set_input_features(ds.features);
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (ds.labels[i] >= net.classes())
      throw DataError("label " + std::to_string(ds.labels[i]) + " at row " +
                      std::to_string(i) + " is out of range for " +
                      std::to_string(net.classes()) + " classes");
  }

  AdamState local;
  AdamState& opt = state ? *state : local;
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(mix_seed(cfg.seed, epoch));
    std::vector<std::size_t> order = shuffled_indices(ds.n, order_rng);
    double loss_sum = 0.0;

    std::size_t batch_no = 0;
    for (const std::vector<std::size_t>& idx : batch_plan(order, cfg.batch_size)) {
      Tape tape;
      Rng drop_rng(mix_seed(mix_seed(cfg.seed, 0x9e3779b9u + epoch), batch_no));
      std::vector<StagedParam> staged;
      FwdCtx ctx{tape, Mode::train, &drop_rng, &staged, nullptr};
      ValueId in = tape.leaf(ds.rows_tensor(idx).cast(net.dtype()));
      ValueId probs = net.forward(ctx, in);
      ValueId loss = sparse_ce_loss(tape, probs, ds.labels_for(idx));
      GradMap grads = tape.backward(loss);
      adam_step(staged, grads, opt, cfg);
      loss_sum += tape.value(loss)(0) * double(idx.size());
      ++batch_no;
    }

    EpochStats stats;
    stats.loss = loss_sum / double(ds.n);
    Prediction pred = predict(net, ds, cfg.batch_size);
    stats.accuracy = accuracy(pred.classes, ds.labels);
    history.epochs.push_back(stats);
  }
  return history;
}

Prediction predict_rows(Network& net, const Tensor& x, std::size_t batch_size) {
  if (x.rank() != 2)
    throw ShapeError("predict expects [n, features], got " + x.shape_str());
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  std::size_t n = x.shape()[0], f = x.shape()[1];
  std::size_t classes = net.classes();

  Prediction out;
  out.probs = Tensor::zeros({n, classes});
  out.classes.resize(n);
  for (std::size_t at = 0; at < n; at += batch_size) {
    std::size_t end = std::min(n, at + batch_size);
    Tensor chunk = Tensor::zeros({end - at, f});
    std::copy(x.data().begin() + at * f, x.data().begin() + end * f,
              chunk.data().begin());
    Tape tape;
    FwdCtx ctx{tape, Mode::infer, nullptr, nullptr, nullptr};
    ValueId probs = net.forward(ctx, tape.leaf(chunk.cast(net.dtype())));
    const Tensor& p = tape.value(probs);
    for (std::size_t r = 0; r < end - at; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        double v = p(r, c);
        out.probs(at + r, c) = v;
        if (v > p(r, best)) best = c;
      }
      out.classes[at + r] = best;
    }
  }
  return out;
}

Prediction predict(Network& net, const EncodedDataset& ds,
                   std::size_t batch_size) {
  std::vector<std::size_t> all(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) all[i] = i;
  return predict_rows(net, ds.rows_tensor(all), batch_size);
}

double accuracy(const std::vector<std::size_t>& predicted,
                const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size())
    throw ShapeError("prediction/label length mismatch: " +
                     std::to_string(predicted.size()) + " vs " +
                     std::to_string(labels.size()));
  if (predicted.empty()) throw DataError("cannot score an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == labels[i]) ++hits;
  return double(hits) / double(predicted.size());
}

}  // namespace dualnet
