#include "datforge/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

namespace datforge::evalkit {

float iou(const scene::BoxLabel& a, const scene::BoxLabel& b) { return scene::box_iou(a, b); }

namespace {

std::vector<std::size_t> confidence_order(std::span<const detector::Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].confidence != dets[b].confidence)
      return dets[a].confidence > dets[b].confidence;
    return a < b;
  });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const detector::Detection> detections,
                             std::span<const scene::BoxLabel> ground_truth,
                             float iou_threshold) {
  MatchResult result;
  result.detections.resize(detections.size());
  result.gt_covered.assign(ground_truth.size(), false);
  for (std::size_t di : confidence_order(detections)) {
    const auto& det = detections[di];
    int best_gt = -1;
    float best_iou = iou_threshold;
    for (std::size_t gi = 0; gi < ground_truth.size(); ++gi) {
      if (result.gt_covered[gi]) continue;
      if (ground_truth[gi].class_id != det.box.class_id) continue;
      const float v = iou(det.box, ground_truth[gi]);
      if (v > best_iou || (v == best_iou && v >= iou_threshold && best_gt == -1)) {
        best_iou = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      result.gt_covered[static_cast<std::size_t>(best_gt)] = true;
      result.detections[di].matched_gt = best_gt;
      result.detections[di].class_correct = true;
    }
  }
  return result;
}

std::optional<double> average_precision(std::span<const EvalInstance> instances, int class_id,
                                        float iou_threshold) {
  struct Ranked {
    float conf;
    std::size_t instance, det;
    bool tp;
  };
  std::vector<Ranked> ranked;
  std::int64_t gt_count = 0;
  for (std::size_t ii = 0; ii < instances.size(); ++ii) {
    const auto& inst = instances[ii];
    for (const auto& g : inst.ground_truth)
      if (g.class_id == class_id) ++gt_count;
    const MatchResult match = match_detections(inst.detections, inst.ground_truth, iou_threshold);
    for (std::size_t di = 0; di < inst.detections.size(); ++di) {
      if (inst.detections[di].box.class_id != class_id) continue;
      ranked.push_back({inst.detections[di].confidence, ii, di,
                        match.detections[di].matched_gt >= 0});
    }
  }
  if (gt_count == 0 && ranked.empty()) return std::nullopt;
  if (gt_count == 0) return 0.0;
  if (ranked.empty()) return 0.0;

  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.instance != b.instance) return a.instance < b.instance;
    return a.det < b.det;
  });

  // precision/recall at every rank, then integrate the precision envelope
  const std::size_t n = ranked.size();
  std::vector<double> precision(n), recall(n);
  std::int64_t tps = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tps += ranked[k].tp ? 1 : 0;
    precision[k] = static_cast<double>(tps) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tps) / static_cast<double>(gt_count);
  }
  for (std::size_t k = n - 1; k-- > 0;)
    precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

MapResult map50(std::span<const EvalInstance> instances, int class_count) {
  MapResult result;
  double sum = 0.0;
  for (int c = 0; c < class_count; ++c) {
    auto ap = average_precision(instances, c, 0.5f);
    result.per_class_ap.push_back(ap);
    if (ap.has_value()) {
      sum += *ap;
      ++result.defined_classes;
    }
  }
  result.map = result.defined_classes > 0 ? sum / result.defined_classes : 0.0;
  return result;
}

std::vector<AuditRow> audit_pseudo_labels(const plabel::PseudoLabels& labels,
                                          std::span<const std::vector<scene::BoxLabel>> gt,
                                          float iou_threshold, float delta, int class_count) {
  if (labels.images.size() != gt.size())
    raise(ErrorKind::format, "audit: pseudo-label file covers ", labels.images.size(),
          " images, ground truth has ", gt.size());
  std::vector<AuditRow> rows(static_cast<std::size_t>(class_count));
  for (int c = 0; c < class_count; ++c) rows[static_cast<std::size_t>(c)].class_id = c;

  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (const auto& g : gt[i]) rows[static_cast<std::size_t>(g.class_id)].gt_count++;

    std::vector<detector::Detection> confident;
    for (const auto& d : labels.images[i])
      if (d.confidence >= delta) confident.push_back(d);

    std::vector<bool> covered(gt[i].size(), false);
    for (std::size_t di : confidence_order(confident)) {
      const auto& det = confident[di];
      auto& row = rows[static_cast<std::size_t>(det.box.class_id)];
      row.confident++;
      // class-agnostic match to the highest-IoU free ground truth
      int best_gt = -1;
      float best_iou = iou_threshold;
      for (std::size_t gi = 0; gi < gt[i].size(); ++gi) {
        if (covered[gi]) continue;
        const float v = iou(det.box, gt[i][gi]);
        if (v > best_iou || (v == best_iou && v >= iou_threshold && best_gt == -1)) {
          best_iou = v;
          best_gt = static_cast<int>(gi);
        }
      }
      if (best_gt < 0) {
        row.unmatched++;
      } else {
        covered[static_cast<std::size_t>(best_gt)] = true;
        if (gt[i][static_cast<std::size_t>(best_gt)].class_id == det.box.class_id) {
          row.correct++;
        } else {
          row.wrong_class++;
        }
      }
    }
  }
  for (auto& row : rows)
    row.ratio = static_cast<double>(row.confident) /
                static_cast<double>(std::max<std::int64_t>(row.gt_count, 1));
  return rows;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) raise(ErrorKind::numeric, "cannot format double");
  return std::string(buf, ptr);
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::io, "cannot write ", path.string());
  out << "run_id,iter,class,ap50,map50\n";
  for (const auto& r : rows) {
    out << r.run_id << "," << r.iter << "," << r.cls << ","
        << (r.ap50.has_value() ? format_double(*r.ap50) : std::string()) << ","
        << format_double(r.map50) << "\n";
  }
  if (!out) raise(ErrorKind::io, "failed writing ", path.string());
}

void write_audit_csv(const std::filesystem::path& path, std::span<const AuditRow> rows,
                     std::span<const std::string> class_names) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::io, "cannot write ", path.string());
  out << "class,gt_count,pl_confident,correct,wrong_class,unmatched,ratio\n";
  for (const auto& r : rows) {
    const std::string name = r.class_id < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<std::size_t>(r.class_id)]
                                 : std::to_string(r.class_id);
    out << name << "," << r.gt_count << "," << r.confident << "," << r.correct << ","
        << r.wrong_class << "," << r.unmatched << "," << format_double(r.ratio) << "\n";
  }
  if (!out) raise(ErrorKind::io, "failed writing ", path.string());
}

namespace {

struct SvgWriter {
  std::ofstream out;
  explicit SvgWriter(const std::filesystem::path& path, int w, int h) : out(path) {
    if (!out) raise(ErrorKind::io, "cannot write ", path.string());
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  }
  void rect(double x, double y, double w, double h, const char* fill) {
    out << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11) {
    out << "  <text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
        << "\" font-family=\"sans-serif\">" << s << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2) {
    out << "  <line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
        << "\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  }
  void close() { out << "</svg>\n"; }
};

void write_metrics_chart(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  // bars of ap50 for the highest iter present
  int last_iter = 0;
  for (const auto& r : rows) last_iter = std::max(last_iter, r.iter);
  std::vector<const MetricRow*> shown;
  for (const auto& r : rows)
    if (r.iter == last_iter && r.ap50.has_value()) shown.push_back(&r);

  const int width = std::max(320, 60 + 70 * static_cast<int>(shown.size()));
  SvgWriter svg(path, width, 260);
  svg.text(10, 20, "per-class AP@50 (iter " + std::to_string(last_iter) + ")", 13);
  svg.line(40, 220, width - 20, 220);
  double x = 50;
  for (const auto* r : shown) {
    const double h = 170.0 * std::clamp(*r->ap50, 0.0, 1.0);
    svg.rect(x, 220 - h, 40, h, "#4878a8");
    svg.text(x, 236, r->cls);
    svg.text(x, 214 - h, format_double(std::round(*r->ap50 * 1000) / 1000), 10);
    x += 70;
  }
  svg.close();
}

void write_audit_chart(const std::filesystem::path& path, std::span<const AuditRow> rows,
                       std::span<const std::string> class_names) {
  const int width = std::max(320, 60 + 90 * static_cast<int>(rows.size()));
  SvgWriter svg(path, width, 280);
  svg.text(10, 20, "confident pseudo-labels / true instances", 13);
  double max_ratio = 1.0;
  for (const auto& r : rows) max_ratio = std::max(max_ratio, r.ratio);
  svg.line(40, 230, width - 20, 230);
  double x = 50;
  for (const auto& r : rows) {
    const double denom = static_cast<double>(std::max<std::int64_t>(r.gt_count, 1));
    const double scale = 180.0 / max_ratio;
    const double hc = scale * static_cast<double>(r.correct) / denom;
    const double hw = scale * static_cast<double>(r.wrong_class) / denom;
    const double hu = scale * static_cast<double>(r.unmatched) / denom;
    double y = 230;
    svg.rect(x, y - hc, 44, hc, "#4878a8");
    y -= hc;
    svg.rect(x, y - hw, 44, hw, "#d88846");
    y -= hw;
    svg.rect(x, y - hu, 44, hu, "#74a858");
    const std::string name = r.class_id < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<std::size_t>(r.class_id)]
                                 : std::to_string(r.class_id);
    svg.text(x, 246, name);
    svg.text(x, 258, "r=" + format_double(std::round(r.ratio * 100) / 100), 9);
    x += 90;
  }
  svg.text(10, 272, "blue: correct class, orange: wrong class, green: unmatched", 10);
  svg.close();
}

}  // namespace

void emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) raise(ErrorKind::io, "cannot create report directory ", out_dir.string());
  write_metrics_csv(out_dir / "metrics.csv", inputs.metrics);
  write_audit_csv(out_dir / "audit.csv", inputs.audit, inputs.class_names);
  if (!inputs.metrics.empty()) write_metrics_chart(out_dir / "metrics.svg", inputs.metrics);
  if (!inputs.audit.empty())
    write_audit_chart(out_dir / "audit.svg", inputs.audit, inputs.class_names);
}

}  // namespace datforge::evalkit
