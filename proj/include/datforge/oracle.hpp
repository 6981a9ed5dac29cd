// The frozen wide-domain encoder, the decoupled labeller trained on top of
// it, and offline pseudo-label generation.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "datforge/augment.hpp"
#include "datforge/detector.hpp"
#include "datforge/evalkit.hpp"
#include "datforge/pseudo_labels.hpp"

namespace datforge::oracle {

struct OracleConfig {
  enum class Tier { small, large };
  Tier tier = Tier::small;
  int patch_size = 4;
  int image_size = 64;
  int base_width = 32;     // patchify channels at the small tier
  int feature_width = 48;  // conv / output channels at the small tier
  int pretrain_iterations = 1200;
  int pretrain_batch = 8;
  float lr = 0.02f;
  float momentum = 0.9f;

  void validate() const;
  int multiplier() const { return tier == Tier::large ? 4 : 1; }
  int feature_channels() const { return feature_width * multiplier(); }
  int patch_grid() const { return image_size / patch_size; }
  const char* tier_name() const { return tier == Tier::large ? "large" : "small"; }

  static OracleConfig small_tier() { return OracleConfig{}; }
  static OracleConfig large_tier() {
    OracleConfig c;
    c.tier = Tier::large;
    return c;
  }
};

// Encoder: patchify conv (kernel = stride = patch_size), then 3x3 stages at
// the patch grid; the large tier is 4x wider with one extra stage.
template <std::floating_point T>
numerics::ModelState<T> init_encoder_params(const OracleConfig& config, Rng& rng);

template <std::floating_point T>
numerics::Tensor<T> encode_patches(numerics::Tape<T>* tape, const OracleConfig& config,
                                   const numerics::ModelState<T>& params,
                                   const numerics::Tensor<T>& images);

struct PretrainResult {
  numerics::ModelState<float> encoder;  // frozen (requires_grad = false)
  std::vector<float> loss_curve;
  double holdout_patch_accuracy = 0.0;
};

// Supervised per-patch content classification across the world domains.
PretrainResult pretrain_oracle(const OracleConfig& config,
                               const std::vector<const scene::Dataset*>& world_train,
                               const std::vector<const scene::Dataset*>& world_val,
                               std::uint64_t seed);

struct LabellerTrainConfig {
  int iterations = 900;
  int batch = 4;  // images per step; each contributes a weak and a strong view
  float lr = 0.02f;
  float momentum = 0.9f;
  bool unfreeze_backbone = false;
  float backbone_lr_scale = 0.01f;
  augment::Params aug;
};

struct LabellerModel {
  OracleConfig oracle_config;
  detector::DetectorConfig head_config;
  numerics::ModelState<float> encoder;
  numerics::ModelState<float> head;
};

// Detection head config used on oracle patch features.
detector::DetectorConfig labeller_head_config(const OracleConfig& oracle, int class_count,
                                              int grid_stride = 8);

LabellerModel train_labeller_head(const OracleConfig& oracle_config,
                                  const numerics::ModelState<float>& encoder,
                                  const scene::Dataset& source_train,
                                  const LabellerTrainConfig& config, std::uint64_t seed,
                                  std::vector<float>* loss_curve = nullptr);

// Forward + decode + NMS on unaugmented images.
std::vector<std::vector<detector::Detection>> labeller_detect(
    const LabellerModel& model, const numerics::Tensor<float>& images);

plabel::PseudoLabels generate_pseudo_labels(const LabellerModel& model,
                                            const scene::Dataset& target_train, float delta,
                                            const std::filesystem::path& out_path);

evalkit::MapResult evaluate_labeller(const LabellerModel& model, const scene::Dataset& dataset);

nlohmann::ordered_json oracle_config_to_json(const OracleConfig& config);
OracleConfig oracle_config_from_json(const nlohmann::ordered_json& j);

void save_labeller(const std::filesystem::path& dir, const LabellerModel& model);
LabellerModel load_labeller(const std::filesystem::path& dir);

// ---- template definitions ----

template <std::floating_point T>
numerics::ModelState<T> init_encoder_params(const OracleConfig& config, Rng& rng) {
  config.validate();
  namespace nm = datforge::numerics;
  nm::ModelState<T> state;
  auto conv_init = [&rng](nm::ModelState<T>& st, const std::string& name, int out_c, int in_c,
                          int k) {
    const T stddev = std::sqrt(T(2) / static_cast<T>(in_c * k * k));
    std::vector<T> w(static_cast<std::size_t>(out_c) * in_c * k * k);
    for (auto& v : w) v = static_cast<T>(rng.normal()) * stddev;
    st.add(name + ".w", nm::Tensor<T>::from({out_c, in_c, k, k}, std::move(w), true));
    st.add(name + ".b", nm::Tensor<T>::zeros({out_c}, true));
  };
  const int m = config.multiplier();
  conv_init(state, "enc.patchify", config.base_width * m, 3, config.patch_size);
  conv_init(state, "enc.conv1", config.feature_channels(), config.base_width * m, 3);
  conv_init(state, "enc.conv2", config.feature_channels(), config.feature_channels(), 3);
  if (config.tier == OracleConfig::Tier::large)
    conv_init(state, "enc.conv3", config.feature_channels(), config.feature_channels(), 3);
  return state;
}

template <std::floating_point T>
numerics::Tensor<T> encode_patches(numerics::Tape<T>* tape, const OracleConfig& config,
                                   const numerics::ModelState<T>& params,
                                   const numerics::Tensor<T>& images) {
  namespace nm = datforge::numerics;
  if (images.rank() != 4 || images.dim(1) != 3)
    raise(ErrorKind::shape, "encode_patches: expected [N,3,H,W], got ",
          nm::shape_str(images.shape()));
  if (images.dim(2) % config.patch_size != 0 || images.dim(3) % config.patch_size != 0)
    raise(ErrorKind::shape, "encode_patches: image size ", images.dim(2), "x", images.dim(3),
          " not divisible by patch size ", config.patch_size);
  nm::Tensor<T> x = nm::conv2d(tape, images, params.at("enc.patchify.w"),
                               params.at("enc.patchify.b"), config.patch_size, 0);
  x = nm::relu(tape, x);
  x = nm::conv2d(tape, x, params.at("enc.conv1.w"), params.at("enc.conv1.b"), 1, 1);
  x = nm::relu(tape, x);
  x = nm::conv2d(tape, x, params.at("enc.conv2.w"), params.at("enc.conv2.b"), 1, 1);
  x = nm::relu(tape, x);
  if (params.contains("enc.conv3.w")) {
    x = nm::conv2d(tape, x, params.at("enc.conv3.w"), params.at("enc.conv3.b"), 1, 1);
    x = nm::relu(tape, x);
  }
  return x;
}

}  // namespace datforge::oracle
