// Single-stage dense-grid detector: small conv backbone, stride-8 head grid,
// objectness/class/box outputs, loss, decoding and suppression.
#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "datforge/ops.hpp"
#include "datforge/rng.hpp"
#include "datforge/scene.hpp"

namespace datforge::detector {

struct DetectorConfig {
  std::vector<int> backbone_channels = {16, 32, 64, 64};
  int head_channels = 64;
  int class_count = 3;
  int image_size = 64;
  int feature_stride = 4;  // stride of the backbone feature map used for alignment
  int grid_stride = 8;     // stride of the detection grid
  float nms_iou = 0.5f;
  float decode_conf_floor = 0.05f;

  void validate() const;
  int grid() const { return image_size / grid_stride; }
  int feature_grid() const { return image_size / feature_stride; }
  int feature_channels() const { return backbone_channels.back(); }
};

template <std::floating_point T>
struct DetectorOutput {
  numerics::Tensor<T> features;      // [N, C_s, S/4, S/4]
  numerics::Tensor<T> objectness;    // [N, 1, G, G] logits
  numerics::Tensor<T> class_logits;  // [N, K, G, G]
  numerics::Tensor<T> box_deltas;    // [N, 4, G, G] (dx, dy, dw, dh)
};

enum class ForwardMode { full, features_only };

// Weight initialization. Backbone parameters are named backbone.convN.{w,b},
// the head stem and output convs head.{stem,obj,cls,box}.{w,b}.
template <std::floating_point T>
numerics::ModelState<T> init_params(const DetectorConfig& config, Rng& rng);

// Head-only parameters for an external backbone with `in_channels` feature
// planes at `feature_stride_in` (used by the labeller on oracle features).
template <std::floating_point T>
numerics::ModelState<T> init_head_params(const DetectorConfig& config, int in_channels,
                                         Rng& rng);

template <std::floating_point T>
numerics::Tensor<T> backbone_forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                                     const numerics::ModelState<T>& params,
                                     const numerics::Tensor<T>& images);

// Runs the detection head on a feature map whose stride is
// config.grid_stride / stem_stride; the stem conv downsamples by stem_stride.
template <std::floating_point T>
DetectorOutput<T> head_forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                               const numerics::ModelState<T>& params,
                               const numerics::Tensor<T>& features, int stem_stride);

template <std::floating_point T>
DetectorOutput<T> forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                          const numerics::ModelState<T>& params,
                          const numerics::Tensor<T>& images,
                          ForwardMode mode = ForwardMode::full);

// Per-cell training targets. A cell is positive iff a box center falls inside
// it; collisions keep the larger-area box. Offsets are the center position
// within the cell in [0,1); sizes are log(extent / stride).
struct GridTargets {
  int batch = 0;
  int grid = 0;
  int positives = 0;
  std::shared_ptr<const std::vector<float>> objectness;  // [N,G,G]
  std::shared_ptr<const std::vector<int>> class_ids;     // [N,G,G], -1 where negative
  std::shared_ptr<const std::vector<float>> box_deltas;  // [N,4,G,G]
};

GridTargets assign_targets(std::span<const std::vector<scene::BoxLabel>> boxes_per_image,
                           int grid, int stride, int class_count);

template <std::floating_point T>
struct DetectionLoss {
  numerics::Tensor<T> obj_box;  // objectness BCE + positive-cell smooth-L1
  numerics::Tensor<T> cls;      // positive-cell cross-entropy
  numerics::Tensor<T> total;    // obj_box + cls
};

template <std::floating_point T>
DetectionLoss<T> detection_loss(numerics::Tape<T>* tape, const DetectorOutput<T>& output,
                                const GridTargets& targets);

struct Detection {
  scene::BoxLabel box;
  float confidence = 0;  // sigmoid(objectness) * max class probability
};

std::vector<std::vector<Detection>> decode(const DetectorOutput<float>& output,
                                           const DetectorConfig& config, float conf_floor);
std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold);
std::vector<Detection> threshold_detections(std::span<const Detection> detections, float delta);

// decode + class-wise NMS per image.
std::vector<std::vector<Detection>> postprocess(const DetectorOutput<float>& output,
                                                const DetectorConfig& config);

nlohmann::ordered_json config_to_json(const DetectorConfig& config);
DetectorConfig config_from_json(const nlohmann::ordered_json& j);

// ---- template definitions ----

template <std::floating_point T>
numerics::ModelState<T> init_params(const DetectorConfig& config, Rng& rng) {
  config.validate();
  namespace nm = datforge::numerics;
  nm::ModelState<T> state;
  auto conv_init = [&rng](nm::ModelState<T>& st, const std::string& name, int out_c, int in_c,
                          int k, T bias_init = T(0)) {
    const T stddev = std::sqrt(T(2) / static_cast<T>(in_c * k * k));
    std::vector<T> w(static_cast<std::size_t>(out_c) * in_c * k * k);
    for (auto& v : w) v = static_cast<T>(rng.normal()) * stddev;
    st.add(name + ".w", nm::Tensor<T>::from({out_c, in_c, k, k}, std::move(w), true));
    st.add(name + ".b", nm::Tensor<T>::full({out_c}, bias_init, true));
  };
  int in_c = 3;
  for (std::size_t i = 0; i < config.backbone_channels.size(); ++i) {
    conv_init(state, "backbone.conv" + std::to_string(i + 1), config.backbone_channels[i], in_c,
              3);
    in_c = config.backbone_channels[i];
  }
  conv_init(state, "head.stem", config.head_channels, in_c, 3);
  // objectness bias starts at a low-positive-rate prior
  conv_init(state, "head.obj", 1, config.head_channels, 3, T(-2.944438979));
  conv_init(state, "head.cls", config.class_count, config.head_channels, 3);
  conv_init(state, "head.box", 4, config.head_channels, 3);
  return state;
}

template <std::floating_point T>
numerics::ModelState<T> init_head_params(const DetectorConfig& config, int in_channels,
                                         Rng& rng) {
  config.validate();
  namespace nm = datforge::numerics;
  nm::ModelState<T> state;
  auto conv_init = [&rng](nm::ModelState<T>& st, const std::string& name, int out_c, int in_c,
                          int k, T bias_init = T(0)) {
    const T stddev = std::sqrt(T(2) / static_cast<T>(in_c * k * k));
    std::vector<T> w(static_cast<std::size_t>(out_c) * in_c * k * k);
    for (auto& v : w) v = static_cast<T>(rng.normal()) * stddev;
    st.add(name + ".w", nm::Tensor<T>::from({out_c, in_c, k, k}, std::move(w), true));
    st.add(name + ".b", nm::Tensor<T>::full({out_c}, bias_init, true));
  };
  conv_init(state, "head.stem", config.head_channels, in_channels, 3);
  conv_init(state, "head.obj", 1, config.head_channels, 3, T(-2.944438979));
  conv_init(state, "head.cls", config.class_count, config.head_channels, 3);
  conv_init(state, "head.box", 4, config.head_channels, 3);
  return state;
}

template <std::floating_point T>
numerics::Tensor<T> backbone_forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                                     const numerics::ModelState<T>& params,
                                     const numerics::Tensor<T>& images) {
  namespace nm = datforge::numerics;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config.image_size ||
      images.dim(3) != config.image_size)
    raise(ErrorKind::shape, "detector: expected images [N,3,", config.image_size, ",",
          config.image_size, "], got ", nm::shape_str(images.shape()));
  nm::Tensor<T> x = images;
  int downsample = 1;
  for (std::size_t i = 0; i < config.backbone_channels.size(); ++i) {
    const int stride = downsample < config.feature_stride ? 2 : 1;
    downsample *= stride;
    const std::string name = "backbone.conv" + std::to_string(i + 1);
    x = nm::conv2d(tape, x, params.at(name + ".w"), params.at(name + ".b"), stride, 1);
    x = nm::relu(tape, x);
  }
  return x;
}

template <std::floating_point T>
DetectorOutput<T> head_forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                               const numerics::ModelState<T>& params,
                               const numerics::Tensor<T>& features, int stem_stride) {
  namespace nm = datforge::numerics;
  DetectorOutput<T> out;
  out.features = features;
  nm::Tensor<T> h = nm::conv2d(tape, features, params.at("head.stem.w"),
                               params.at("head.stem.b"), stem_stride, 1);
  h = nm::relu(tape, h);
  out.objectness = nm::conv2d(tape, h, params.at("head.obj.w"), params.at("head.obj.b"), 1, 1);
  out.class_logits = nm::conv2d(tape, h, params.at("head.cls.w"), params.at("head.cls.b"), 1, 1);
  out.box_deltas = nm::conv2d(tape, h, params.at("head.box.w"), params.at("head.box.b"), 1, 1);
  return out;
}

template <std::floating_point T>
DetectorOutput<T> forward(numerics::Tape<T>* tape, const DetectorConfig& config,
                          const numerics::ModelState<T>& params,
                          const numerics::Tensor<T>& images, ForwardMode mode) {
  numerics::Tensor<T> features = backbone_forward(tape, config, params, images);
  if (mode == ForwardMode::features_only) {
    DetectorOutput<T> out;
    out.features = features;
    return out;
  }
  return head_forward(tape, config, params, features,
                      config.grid_stride / config.feature_stride);
}

template <std::floating_point T>
DetectionLoss<T> detection_loss(numerics::Tape<T>* tape, const DetectorOutput<T>& output,
                                const GridTargets& targets) {
  namespace nm = datforge::numerics;
  if (output.objectness.dim(0) != targets.batch || output.objectness.dim(2) != targets.grid)
    raise(ErrorKind::shape, "detection_loss: output grid ", output.objectness.dim(2),
          " batch ", output.objectness.dim(0), " does not match targets (batch ", targets.batch,
          ", grid ", targets.grid, ")");
  const T norm = static_cast<T>(std::max(1, targets.positives));

  std::shared_ptr<const std::vector<T>> obj_t, box_t, mask_t;
  if constexpr (std::is_same_v<T, float>) {
    obj_t = targets.objectness;
    box_t = targets.box_deltas;
    mask_t = targets.objectness;
  } else {
    obj_t = nm::const_buffer(std::vector<T>(targets.objectness->begin(),
                                            targets.objectness->end()));
    box_t = nm::const_buffer(std::vector<T>(targets.box_deltas->begin(),
                                            targets.box_deltas->end()));
    mask_t = obj_t;
  }

  DetectionLoss<T> loss;
  auto bce = nm::bce_with_logits_mean(tape, output.objectness, obj_t);
  auto box = nm::smooth_l1_masked(tape, output.box_deltas, box_t, mask_t, norm);
  loss.obj_box = nm::add_scalars(tape, bce, box);
  loss.cls = nm::cross_entropy_masked(tape, output.class_logits, targets.class_ids, norm);
  loss.total = nm::add_scalars(tape, loss.obj_box, loss.cls);
  return loss;
}

}  // namespace datforge::detector
