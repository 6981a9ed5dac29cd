// Independent average-precision oracle: enumerates every confidence threshold,
// re-runs greedy matching from scratch on the kept detections, and integrates
// the precision envelope over the resulting PR point set. Shares no code with
// the evaluator under test.
#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "datforge/evalkit.hpp"

namespace datforge::testsupport {

inline double pair_iou(const scene::BoxLabel& a, const scene::BoxLabel& b) {
  const double ix =
      std::max(0.0, static_cast<double>(std::min(a.x_max, b.x_max)) -
                        static_cast<double>(std::max(a.x_min, b.x_min)));
  const double iy =
      std::max(0.0, static_cast<double>(std::min(a.y_max, b.y_max)) -
                        static_cast<double>(std::max(a.y_min, b.y_min)));
  const double inter = ix * iy;
  const double ua = static_cast<double>(a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double ub = static_cast<double>(b.x_max - b.x_min) * (b.y_max - b.y_min);
  const double uni = ua + ub - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Greedy matching of detections with conf >= cutoff inside one instance;
// returns the true-positive count for `class_id`.
inline int count_tp(const evalkit::EvalInstance& inst, int class_id, float cutoff,
                    float iou_threshold) {
  struct Cand {
    float conf;
    std::size_t idx;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < inst.detections.size(); ++i) {
    const auto& d = inst.detections[i];
    if (d.box.class_id == class_id && d.confidence >= cutoff) cands.push_back({d.confidence, i});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    return a.idx < b.idx;
  });
  std::vector<bool> used(inst.ground_truth.size(), false);
  int tp = 0;
  for (const auto& c : cands) {
    const auto& det = inst.detections[c.idx];
    int best = -1;
    double best_iou = static_cast<double>(iou_threshold);
    for (std::size_t g = 0; g < inst.ground_truth.size(); ++g) {
      if (used[g] || inst.ground_truth[g].class_id != class_id) continue;
      const double v = pair_iou(det.box, inst.ground_truth[g]);
      if (v > best_iou || (v == best_iou && v >= iou_threshold && best == -1)) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
  }
  return tp;
}

inline std::optional<double> brute_force_ap(std::span<const evalkit::EvalInstance> instances,
                                            int class_id, float iou_threshold) {
  std::vector<float> cutoffs;
  std::int64_t gt_count = 0, det_count = 0;
  for (const auto& inst : instances) {
    for (const auto& g : inst.ground_truth)
      if (g.class_id == class_id) ++gt_count;
    for (const auto& d : inst.detections)
      if (d.box.class_id == class_id) {
        cutoffs.push_back(d.confidence);
        ++det_count;
      }
  }
  if (gt_count == 0 && det_count == 0) return std::nullopt;
  if (gt_count == 0 || det_count == 0) return 0.0;

  std::sort(cutoffs.begin(), cutoffs.end(), std::greater<>());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

  struct PrPoint {
    double recall, precision;
  };
  std::vector<PrPoint> points;
  for (float cutoff : cutoffs) {
    std::int64_t tp = 0, kept = 0;
    for (const auto& inst : instances) {
      tp += count_tp(inst, class_id, cutoff, iou_threshold);
      for (const auto& d : inst.detections)
        if (d.box.class_id == class_id && d.confidence >= cutoff) ++kept;
    }
    points.push_back({static_cast<double>(tp) / static_cast<double>(gt_count),
                      kept > 0 ? static_cast<double>(tp) / static_cast<double>(kept) : 0.0});
  }

  // integrate: at each recall level use the best precision achievable at
  // recall >= that level
  std::sort(points.begin(), points.end(),
            [](const PrPoint& a, const PrPoint& b) { return a.recall < b.recall; });
  for (std::size_t i = points.size() - 1; i-- > 0;)
    points[i].precision = std::max(points[i].precision, points[i + 1].precision);
  double ap = 0.0, prev = 0.0;
  for (const auto& p : points) {
    if (p.recall > prev) {
      ap += (p.recall - prev) * p.precision;
      prev = p.recall;
    }
  }
  return ap;
}

}  // namespace datforge::testsupport
