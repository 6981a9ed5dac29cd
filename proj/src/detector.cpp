#include "datforge/detector.hpp"

#include <algorithm>
#include <cmath>

namespace datforge::detector {

void DetectorConfig::validate() const {
  if (backbone_channels.empty())
    raise(ErrorKind::config, "detector: backbone_channels must not be empty");
  if (class_count < 1) raise(ErrorKind::config, "detector: class_count must be >= 1");
  if (feature_stride < 1 || grid_stride < feature_stride ||
      grid_stride % feature_stride != 0)
    raise(ErrorKind::config, "detector: grid_stride ", grid_stride,
          " must be a multiple of feature_stride ", feature_stride);
  if (image_size % grid_stride != 0)
    raise(ErrorKind::config, "detector: image_size ", image_size,
          " not divisible by grid stride ", grid_stride);
  if (nms_iou <= 0.f || nms_iou > 1.f)
    raise(ErrorKind::config, "detector: nms_iou outside (0,1]");
  if (decode_conf_floor < 0.f || decode_conf_floor >= 1.f)
    raise(ErrorKind::config, "detector: decode_conf_floor outside [0,1)");
}

GridTargets assign_targets(std::span<const std::vector<scene::BoxLabel>> boxes_per_image,
                           int grid, int stride, int class_count) {
  const int N = static_cast<int>(boxes_per_image.size());
  GridTargets t;
  t.batch = N;
  t.grid = grid;
  const std::size_t cells = static_cast<std::size_t>(N) * grid * grid;
  std::vector<float> obj(cells, 0.f);
  std::vector<int> cls(cells, -1);
  std::vector<float> deltas(static_cast<std::size_t>(N) * 4 * grid * grid, 0.f);
  std::vector<float> area(cells, 0.f);

  for (int n = 0; n < N; ++n) {
    for (const auto& b : boxes_per_image[static_cast<std::size_t>(n)]) {
      if (b.class_id < 0 || b.class_id >= class_count)
        raise(ErrorKind::argument, "assign_targets: class id ", b.class_id, " outside [0,",
              class_count, ")");
      const float cx = b.center_x(), cy = b.center_y();
      const int gx = static_cast<int>(std::floor(cx / static_cast<float>(stride)));
      const int gy = static_cast<int>(std::floor(cy / static_cast<float>(stride)));
      if (gx < 0 || gx >= grid || gy < 0 || gy >= grid) continue;
      const std::size_t cell = (static_cast<std::size_t>(n) * grid + gy) * grid + gx;
      if (obj[cell] != 0.f && area[cell] >= b.area()) continue;  // larger box wins
      obj[cell] = 1.f;
      area[cell] = b.area();
      cls[cell] = b.class_id;
      const float fs = static_cast<float>(stride);
      const std::size_t base = ((static_cast<std::size_t>(n) * 4) * grid + gy) * grid + gx;
      const std::size_t plane = static_cast<std::size_t>(grid) * grid;
      deltas[base + 0 * plane] = cx / fs - static_cast<float>(gx);
      deltas[base + 1 * plane] = cy / fs - static_cast<float>(gy);
      deltas[base + 2 * plane] = std::log(b.width() / fs);
      deltas[base + 3 * plane] = std::log(b.height() / fs);
    }
  }
  int positives = 0;
  for (float v : obj) positives += v != 0.f ? 1 : 0;
  t.positives = positives;
  t.objectness = numerics::const_buffer(std::move(obj));
  t.class_ids = numerics::const_buffer(std::move(cls));
  t.box_deltas = numerics::const_buffer(std::move(deltas));
  return t;
}

std::vector<std::vector<Detection>> decode(const DetectorOutput<float>& output,
                                           const DetectorConfig& config, float conf_floor) {
  if (conf_floor < 0.f || conf_floor >= 1.f)
    raise(ErrorKind::argument, "decode: conf_floor outside [0,1)");
  const int N = output.objectness.dim(0);
  const int G = output.objectness.dim(2);
  const int K = output.class_logits.dim(1);
  const float stride = static_cast<float>(config.grid_stride);
  const float S = static_cast<float>(config.image_size);
  const std::size_t plane = static_cast<std::size_t>(G) * G;

  std::vector<std::vector<Detection>> all(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const float* obj = output.objectness.data() + static_cast<std::size_t>(n) * plane;
    const float* cls = output.class_logits.data() + static_cast<std::size_t>(n) * K * plane;
    const float* box = output.box_deltas.data() + static_cast<std::size_t>(n) * 4 * plane;
    for (int gy = 0; gy < G; ++gy) {
      for (int gx = 0; gx < G; ++gx) {
        const std::size_t p = static_cast<std::size_t>(gy) * G + gx;
        const float z = obj[p];
        const float obj_p = z >= 0.f ? 1.f / (1.f + std::exp(-z))
                                     : std::exp(z) / (1.f + std::exp(z));
        // softmax max over the class axis
        float zmax = cls[p];
        int best = 0;
        for (int k = 1; k < K; ++k) {
          const float v = cls[static_cast<std::size_t>(k) * plane + p];
          if (v > zmax) {
            zmax = v;
            best = k;
          }
        }
        float sum = 0.f;
        for (int k = 0; k < K; ++k)
          sum += std::exp(cls[static_cast<std::size_t>(k) * plane + p] - zmax);
        const float cls_p = 1.f / sum;
        const float conf = obj_p * cls_p;
        if (conf < conf_floor) continue;
        const float cx = (static_cast<float>(gx) + box[p]) * stride;
        const float cy = (static_cast<float>(gy) + box[plane + p]) * stride;
        const float w = stride * std::exp(box[2 * plane + p]);
        const float h = stride * std::exp(box[3 * plane + p]);
        Detection d;
        d.box.class_id = best;
        d.box.x_min = std::clamp(cx - 0.5f * w, 0.f, S);
        d.box.y_min = std::clamp(cy - 0.5f * h, 0.f, S);
        d.box.x_max = std::clamp(cx + 0.5f * w, 0.f, S);
        d.box.y_max = std::clamp(cy + 0.5f * h, 0.f, S);
        d.confidence = conf;
        if (d.box.width() <= 0.f || d.box.height() <= 0.f) continue;
        all[static_cast<std::size_t>(n)].push_back(d);
      }
    }
  }
  return all;
}

std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold) {
  if (iou_threshold <= 0.f || iou_threshold > 1.f)
    raise(ErrorKind::argument, "nms: iou_threshold outside (0,1]");
  std::vector<std::size_t> order(detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (detections[a].confidence != detections[b].confidence)
      return detections[a].confidence > detections[b].confidence;
    return a < b;  // deterministic tie-break by original index
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& cand = detections[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.box.class_id != cand.box.class_id) continue;
      if (scene::box_iou(k.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

std::vector<Detection> threshold_detections(std::span<const Detection> detections, float delta) {
  if (delta < 0.f || delta > 1.f)
    raise(ErrorKind::argument, "threshold_detections: delta outside [0,1]");
  std::vector<Detection> kept;
  for (const auto& d : detections)
    if (d.confidence >= delta) kept.push_back(d);
  return kept;
}

std::vector<std::vector<Detection>> postprocess(const DetectorOutput<float>& output,
                                                const DetectorConfig& config) {
  auto decoded = decode(output, config, config.decode_conf_floor);
  for (auto& dets : decoded) dets = nms(std::move(dets), config.nms_iou);
  return decoded;
}

nlohmann::ordered_json config_to_json(const DetectorConfig& c) {
  return {{"backbone_channels", c.backbone_channels},
          {"head_channels", c.head_channels},
          {"class_count", c.class_count},
          {"image_size", c.image_size},
          {"feature_stride", c.feature_stride},
          {"grid_stride", c.grid_stride},
          {"nms_iou", static_cast<double>(c.nms_iou)},
          {"decode_conf_floor", static_cast<double>(c.decode_conf_floor)}};
}

DetectorConfig config_from_json(const nlohmann::ordered_json& j) {
  DetectorConfig c;
  c.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
  c.head_channels = j.at("head_channels").get<int>();
  c.class_count = j.at("class_count").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.feature_stride = j.at("feature_stride").get<int>();
  c.grid_stride = j.at("grid_stride").get<int>();
  c.nms_iou = static_cast<float>(j.at("nms_iou").get<double>());
  c.decode_conf_floor = static_cast<float>(j.at("decode_conf_floor").get<double>());
  c.validate();
  return c;
}

}  // namespace datforge::detector
