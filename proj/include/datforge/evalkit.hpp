// Detection metrics: IoU, greedy matching, all-point average precision,
// mAP@50, pseudo-label quality audits, and CSV/SVG report emission.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datforge/detector.hpp"
#include "datforge/pseudo_labels.hpp"

namespace datforge::evalkit {

float iou(const scene::BoxLabel& a, const scene::BoxLabel& b);

struct MatchResult {
  struct DetMatch {
    int matched_gt = -1;  // index into the ground-truth list, -1 for FP
    bool class_correct = false;
  };
  std::vector<DetMatch> detections;  // aligned with the input detection order
  std::vector<bool> gt_covered;
};

// Greedy class-aware matching: detections in descending confidence (ties by
// index) each claim the highest-IoU unmatched same-class ground truth with
// IoU >= threshold.
MatchResult match_detections(std::span<const detector::Detection> detections,
                             std::span<const scene::BoxLabel> ground_truth, float iou_threshold);

struct EvalInstance {
  std::vector<detector::Detection> detections;
  std::vector<scene::BoxLabel> ground_truth;
};

// All-point (precision-envelope) average precision for one class.
// No ground truth and no detections: undefined (nullopt, excluded from mAP).
// No ground truth but detections present: 0.
std::optional<double> average_precision(std::span<const EvalInstance> instances, int class_id,
                                        float iou_threshold);

struct MapResult {
  std::vector<std::optional<double>> per_class_ap;
  double map = 0.0;
  int defined_classes = 0;
};

MapResult map50(std::span<const EvalInstance> instances, int class_count);

struct AuditRow {
  int class_id = 0;
  std::int64_t gt_count = 0;
  std::int64_t confident = 0;  // pseudo-labels of this class with conf >= delta
  std::int64_t correct = 0;
  std::int64_t wrong_class = 0;
  std::int64_t unmatched = 0;
  double ratio = 0.0;  // confident / max(gt_count, 1)
};

// Class-agnostic matching at the IoU threshold, then split by whether the
// pseudo-label class agrees with the matched ground truth.
std::vector<AuditRow> audit_pseudo_labels(const plabel::PseudoLabels& labels,
                                          std::span<const std::vector<scene::BoxLabel>> gt,
                                          float iou_threshold, float delta, int class_count);

struct MetricRow {
  std::string run_id;
  int iter = 0;
  std::string cls;
  std::optional<double> ap50;
  double map50 = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
void write_audit_csv(const std::filesystem::path& path, std::span<const AuditRow> rows,
                     std::span<const std::string> class_names);

struct ReportInputs {
  std::vector<MetricRow> metrics;
  std::vector<AuditRow> audit;
  std::vector<std::string> class_names;
};

// Writes metrics.csv, audit.csv and standalone SVG charts under out_dir.
void emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

std::string format_double(double v);

}  // namespace datforge::evalkit
