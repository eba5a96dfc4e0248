#include "dualnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace dualnet {

using nlohmann::json;

ConfusionCounts confusion(const std::vector<std::size_t>& preds,
                          const std::vector<std::size_t>& labels,
                          std::size_t positive) {
  if (preds.size() != labels.size()) {
    throw ShapeError("confusion: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = preds[i] == positive;
    const bool is_pos = labels[i] == positive;
    if (is_pos) {
      (pred_pos ? c.tp : c.fn) += 1;
    } else {
      (pred_pos ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  const auto total = c.total();
  if (total > 0) {
    m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
  }
  if (c.tp + c.fn > 0) {
    m.dr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (c.fp + c.tn > 0) {
    m.far = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  }
  return m;
}

std::vector<ClassMetrics> per_class_report(
    const std::vector<std::size_t>& preds,
    const std::vector<std::size_t>& labels,
    const std::vector<std::string>& class_names) {
  if (class_names.empty()) {
    throw ConfigError("per_class_report: no class names given");
  }
  std::vector<ClassMetrics> rows;
  rows.reserve(class_names.size());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    rows.push_back({class_names[c], metrics(confusion(preds, labels, c))});
  }
  return rows;
}

AttentionReport attention_importance(Network& net, const EncodedDataset& ds,
                                     const std::vector<std::size_t>& samples,
                                     std::size_t batch_size,
                                     GroupAggregate agg) {
  const ArchitectureConfig& cfg = net.config();
  if (!cfg.attention.enabled) {
    throw ConfigError(
        "attention importance needs the attention stage; this network has "
        "none");
  }
  if (cfg.pool.stride != 1) {
    throw ConfigError(
        "pooling stride " + std::to_string(cfg.pool.stride) +
        " drops positions, so attention columns no longer map one-to-one onto "
        "input features");
  }
  if (batch_size == 0) {
    throw ConfigError("attention importance: batch size must be at least 1");
  }
  if (ds.n == 0 || ds.features == 0) {
    throw DataError("attention importance: empty dataset");
  }

  std::vector<std::size_t> idx = samples;
  if (idx.empty()) {
    idx.resize(ds.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  for (std::size_t i : idx) {
    if (i >= ds.n) {
      throw DataError("attention importance: sample index " +
                      std::to_string(i) + " out of range for " +
                      std::to_string(ds.n) + " rows");
    }
  }
  // scores are a mean over the sample set, so accumulate in a fixed order
  std::sort(idx.begin(), idx.end());

  const std::size_t f = ds.features;
  std::vector<double> col_sum(f, 0.0);

  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t stop = std::min(idx.size(), start + batch_size);
    std::vector<std::size_t> chunk(idx.begin() + start, idx.begin() + stop);
    Tensor x = ds.rows_tensor(chunk).cast(net.dtype());

    Tape tape;
    std::vector<ValueId> maps;
    FwdCtx ctx{tape, Mode::infer, nullptr, nullptr, &maps};
    net.forward(ctx, tape.leaf(x));
    if (maps.size() != 1) {
      throw ConfigError("attention importance: expected one attention map, got " +
                        std::to_string(maps.size()));
    }
    const Tensor& a = tape.value(maps[0]);
    if (a.shape().size() != 3 || a.shape()[1] != f || a.shape()[2] != f) {
      throw ShapeError("attention importance: map shape " +
                       shape_str(a.shape()) + " does not cover " +
                       std::to_string(f) + " features");
    }
    const std::size_t b = a.shape()[0];
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
          col_sum[j] += a(s, i, j);
        }
      }
    }
  }

  AttentionReport rep;
  rep.aggregate = agg;
  rep.encoded_scores.resize(f);
  const double denom = static_cast<double>(idx.size()) * static_cast<double>(f);
  for (std::size_t j = 0; j < f; ++j) {
    rep.encoded_scores[j] = col_sum[j] / denom;
  }

  rep.encoded_names.resize(f);
  for (std::size_t j = 0; j < f; ++j) {
    rep.encoded_names[j] = j < ds.feature_names.size()
                               ? ds.feature_names[j]
                               : "f" + std::to_string(j);
  }

  if (ds.groups.empty()) {
    rep.group_names = rep.encoded_names;
    rep.group_scores = rep.encoded_scores;
  } else {
    for (const auto& g : ds.groups) {
      if (g.begin >= g.end || g.end > f) {
        throw DataError("attention importance: group '" + g.column +
                        "' spans columns outside the encoded width");
      }
      double score = 0.0;
      for (std::size_t j = g.begin; j < g.end; ++j) {
        score = agg == GroupAggregate::sum
                    ? score + rep.encoded_scores[j]
                    : std::max(score, rep.encoded_scores[j]);
      }
      rep.group_names.push_back(g.column);
      rep.group_scores.push_back(score);
    }
  }
  return rep;
}

std::vector<AttentionReport::Item> AttentionReport::top(std::size_t k,
                                                        bool grouped) const {
  const auto& names = grouped ? group_names : encoded_names;
  const auto& scores = grouped ? group_scores : encoded_scores;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<Item> out;
  for (std::size_t r = 0; r < order.size() && r < k; ++r) {
    out.push_back({names[order[r]], scores[order[r]]});
  }
  return out;
}

namespace {

double round_to(double v, int places) {
  const double scale = std::pow(10.0, places);
  return std::round(v * scale) / scale;
}

json metric_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return round_to(*v, 4);
}

std::string metric_csv(const std::optional<double>& v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

json counts_json(const ConfusionCounts& c) {
  return json{{"tp", c.tp}, {"fn", c.fn}, {"tn", c.tn}, {"fp", c.fp}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write to " + path);
}

void check_format(const std::string& format) {
  if (format != "json" && format != "csv") {
    throw ConfigError("unknown report format '" + format +
                      "' (expected json or csv)");
  }
}

std::string metrics_csv_row(const Metrics& m) {
  std::ostringstream out;
  out << metric_csv(m.acc) << ',' << metric_csv(m.dr) << ','
      << metric_csv(m.far) << ',' << m.counts.tp << ',' << m.counts.fn << ','
      << m.counts.tn << ',' << m.counts.fp;
  return out.str();
}

}  // namespace

std::string metrics_to_json(const Metrics& m) {
  json j{{"acc", metric_json(m.acc)},
         {"dr", metric_json(m.dr)},
         {"far", metric_json(m.far)},
         {"counts", counts_json(m.counts)}};
  return j.dump(2) + "\n";
}

std::string per_class_to_json(const std::vector<ClassMetrics>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back(json{{"label", r.name},
                       {"acc", metric_json(r.m.acc)},
                       {"dr", metric_json(r.m.dr)},
                       {"far", metric_json(r.m.far)},
                       {"counts", counts_json(r.m.counts)}});
  }
  return arr.dump(2) + "\n";
}

std::string attention_to_json(const AttentionReport& report, std::size_t topk) {
  auto scores_json = [](const std::vector<std::string>& names,
                        const std::vector<double>& scores) {
    json arr = json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
      arr.push_back(json{{"feature", names[i]}, {"score", round_to(scores[i], 6)}});
    }
    return arr;
  };
  json top = json::array();
  std::size_t rank = 1;
  for (const auto& item : report.top(topk)) {
    top.push_back(json{{"rank", rank++},
                       {"feature", item.name},
                       {"score", round_to(item.score, 6)}});
  }
  json j{{"encoded", scores_json(report.encoded_names, report.encoded_scores)},
         {"features", scores_json(report.group_names, report.group_scores)},
         {"top", top}};
  return j.dump(2) + "\n";
}

void export_metrics(const Metrics& m, const std::string& path,
                    const std::string& format) {
  check_format(format);
  if (format == "json") {
    write_text(path, metrics_to_json(m));
    return;
  }
  write_text(path, "acc,dr,far,tp,fn,tn,fp\n" + metrics_csv_row(m) + "\n");
}

void export_per_class(const std::vector<ClassMetrics>& rows,
                      const std::string& path, const std::string& format) {
  check_format(format);
  if (format == "json") {
    write_text(path, per_class_to_json(rows));
    return;
  }
  std::ostringstream out;
  out << "label,acc,dr,far,tp,fn,tn,fp\n";
  for (const auto& r : rows) {
    out << r.name << ',' << metrics_csv_row(r.m) << '\n';
  }
  write_text(path, out.str());
}

void export_attention(const AttentionReport& report, const std::string& path,
                      const std::string& format, std::size_t topk) {
  check_format(format);
  if (format == "json") {
    write_text(path, attention_to_json(report, topk));
    return;
  }
  std::ostringstream out;
  out << "rank,feature,score\n";
  std::size_t rank = 1;
  for (const auto& item : report.top(topk)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", item.score);
    out << rank++ << ',' << item.name << ',' << buf << '\n';
  }
  write_text(path, out.str());
}

}  // namespace dualnet
