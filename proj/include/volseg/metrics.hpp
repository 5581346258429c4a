#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volseg/volume.hpp"

namespace volseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct SimilarityMetrics {
  double dsc = 0.0;
  double sensitivity = 0.0;
  double ppv = 0.0;
  double iou = 0.0;
};

struct MetricsReport {
  std::string id;
  ConfusionCounts counts;
  SimilarityMetrics metrics;
};

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt);

// dsc = 2tp / (2tp + fp + fn), sensitivity = tp / (tp + fn),
// ppv = tp / (tp + fp), iou = tp / (tp + fp + fn). A metric whose
// denominator is zero is 1 (both sets empty on that side).
SimilarityMetrics metrics_from_counts(const ConfusionCounts& c);

MetricsReport report_volume(const Mask& pred, const Mask& gt, std::string id);

enum class Averaging {
  macro,  // mean of per-volume metrics
  micro,  // metrics of the pooled counts
};

struct AggregateReport {
  std::size_t n = 0;
  Averaging averaging = Averaging::macro;
  SimilarityMetrics mean;
};

AggregateReport aggregate(std::span<const MetricsReport> reports, Averaging averaging = Averaging::macro);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const AggregateReport& a);

}  // namespace volseg
