#include "volseg/metrics.hpp"

#include "volseg/error.hpp"

namespace volseg {

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion_counts: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                     " voxels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt) {
  if (pred.dims != gt.dims) {
    throw ShapeError("confusion_counts: dims differ (" + dims_str(pred.dims) + " vs " + dims_str(gt.dims) + ")");
  }
  return confusion_counts(std::span<const std::uint8_t>(pred.data), std::span<const std::uint8_t>(gt.data));
}

namespace {
double ratio(double num, double den) { return den == 0.0 ? 1.0 : num / den; }
}  // namespace

SimilarityMetrics metrics_from_counts(const ConfusionCounts& c) {
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  return {ratio(2.0 * tp, 2.0 * tp + fp + fn), ratio(tp, tp + fn), ratio(tp, tp + fp), ratio(tp, tp + fp + fn)};
}

MetricsReport report_volume(const Mask& pred, const Mask& gt, std::string id) {
  MetricsReport r;
  r.id = std::move(id);
  r.counts = confusion_counts(pred, gt);
  r.metrics = metrics_from_counts(r.counts);
  return r;
}

AggregateReport aggregate(std::span<const MetricsReport> reports, Averaging averaging) {
  if (reports.empty()) throw ConfigError("aggregate: no reports");
  AggregateReport out;
  out.n = reports.size();
  out.averaging = averaging;
  if (averaging == Averaging::micro) {
    ConfusionCounts pooled;
    for (const auto& r : reports) {
      pooled.tp += r.counts.tp;
      pooled.fp += r.counts.fp;
      pooled.fn += r.counts.fn;
      pooled.tn += r.counts.tn;
    }
    out.mean = metrics_from_counts(pooled);
    return out;
  }
  long double dsc = 0, sens = 0, ppv = 0, iou = 0;
  for (const auto& r : reports) {
    dsc += r.metrics.dsc;
    sens += r.metrics.sensitivity;
    ppv += r.metrics.ppv;
    iou += r.metrics.iou;
  }
  const auto n = static_cast<long double>(reports.size());
  out.mean = {static_cast<double>(dsc / n), static_cast<double>(sens / n), static_cast<double>(ppv / n),
              static_cast<double>(iou / n)};
  return out;
}

namespace {
nlohmann::json metrics_json(const SimilarityMetrics& m) {
  return {{"dsc", m.dsc}, {"sensitivity", m.sensitivity}, {"ppv", m.ppv}, {"iou", m.iou}};
}
}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = metrics_json(r.metrics);
  j["id"] = r.id;
  j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}};
  return j;
}

nlohmann::json to_json(const AggregateReport& a) {
  return {{"n", a.n},
          {"averaging", a.averaging == Averaging::macro ? "macro" : "micro"},
          {"mean", metrics_json(a.mean)}};
}

}  // namespace volseg
