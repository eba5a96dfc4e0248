#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dualnet/data.hpp"
#include "dualnet/train.hpp"

namespace dualnet {

struct ConfusionCounts {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  std::size_t total() const { return tp + fn + tn + fp; }
};

// One-vs-rest counts with `positive` as the positive class (attack = 1 under
// the binary task).
ConfusionCounts confusion(const std::vector<std::size_t>& preds,
                          const std::vector<std::size_t>& labels,
                          std::size_t positive = 1);

// A metric with a zero denominator is reported as absent, never as 0.
struct Metrics {
  std::optional<double> acc, dr, far;
  ConfusionCounts counts;
};

Metrics metrics(const ConfusionCounts& c);

struct ClassMetrics {
  std::string name;
  Metrics m;
};

std::vector<ClassMetrics> per_class_report(
    const std::vector<std::size_t>& preds,
    const std::vector<std::size_t>& labels,
    const std::vector<std::string>& class_names);

enum class GroupAggregate { sum, max };

// Column means of the attention maps: how much attention each input position
// receives, averaged over samples and query rows. Encoded scores sum to 1.
struct AttentionReport {
  std::vector<std::string> encoded_names;
  std::vector<double> encoded_scores;
  std::vector<std::string> group_names;  // original columns
  std::vector<double> group_scores;
  GroupAggregate aggregate = GroupAggregate::sum;

  struct Item {
    std::string name;
    double score = 0.0;
  };
  std::vector<Item> top(std::size_t k, bool grouped = true) const;
};

// `samples`: dataset row indices to run; empty means all rows. Requires the
// attention stage and a length-preserving configuration (pool stride 1), so
// attention columns map one-to-one onto encoded features.
AttentionReport attention_importance(
    Network& net, const EncodedDataset& ds,
    const std::vector<std::size_t>& samples = {}, std::size_t batch_size = 256,
    GroupAggregate agg = GroupAggregate::sum);

// format: "json" or "csv". Metric fractions are rounded to 4 decimals,
// attention scores to 6.
void export_metrics(const Metrics& m, const std::string& path,
                    const std::string& format);
void export_per_class(const std::vector<ClassMetrics>& rows,
                      const std::string& path, const std::string& format);
void export_attention(const AttentionReport& report, const std::string& path,
                      const std::string& format, std::size_t topk = 5);

std::string metrics_to_json(const Metrics& m);
std::string per_class_to_json(const std::vector<ClassMetrics>& rows);
std::string attention_to_json(const AttentionReport& report, std::size_t topk);

}  // namespace dualnet
