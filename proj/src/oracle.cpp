#include "datforge/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "datforge/checkpoint.hpp"
#include "datforge/sgd.hpp"

namespace datforge::oracle {

namespace nm = datforge::numerics;

void OracleConfig::validate() const {
  if (patch_size < 1 || image_size % patch_size != 0)
    raise(ErrorKind::config, "oracle: image_size ", image_size, " not divisible by patch size ",
          patch_size);
  if (base_width < 1 || feature_width < 1)
    raise(ErrorKind::config, "oracle: channel widths must be positive");
  if (pretrain_iterations < 0 || pretrain_batch < 1)
    raise(ErrorKind::config, "oracle: bad pretrain schedule");
}

namespace {

nm::Tensor<float> stack_images(const std::vector<const scene::LabeledImage*>& images) {
  const int N = static_cast<int>(images.size());
  const int S = images[0]->image.dim(1);
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(N) * 3 * S * S);
  for (const auto* img : images)
    data.insert(data.end(), img->image.values().begin(), img->image.values().end());
  return nm::Tensor<float>::from({N, 3, S, S}, std::move(data));
}

nm::ModelState<float> strip_pretrain_head(const nm::ModelState<float>& params) {
  nm::ModelState<float> out;
  for (const auto& [name, t] : params)
    if (name.rfind("enc.", 0) == 0) out.add(name, t.clone());
  return out;
}

}  // namespace

PretrainResult pretrain_oracle(const OracleConfig& config,
                               const std::vector<const scene::Dataset*>& world_train,
                               const std::vector<const scene::Dataset*>& world_val,
                               std::uint64_t seed) {
  config.validate();
  if (world_train.size() < 4)
    raise(ErrorKind::argument, "pretrain_oracle: need at least 4 world domains, got ",
          world_train.size());

  // flat pool over all domains
  struct Entry {
    const scene::LabeledImage* image;
    std::vector<int> patch_labels;
  };
  std::vector<Entry> pool;
  int class_count = 0;
  for (const auto* ds : world_train) {
    class_count = static_cast<int>(ds->manifest.classes.size());
    for (const auto& img : ds->images)
      pool.push_back({&img, scene::patch_class_map(img.boxes, config.image_size,
                                                   config.patch_size, class_count)});
  }
  if (pool.empty()) raise(ErrorKind::argument, "pretrain_oracle: empty world datasets");

  Rng rng(seed_mix(seed, fnv1a64("oracle-pretrain")));
  auto params = init_encoder_params<float>(config, rng);
  // patch-content classification head, discarded after pretraining
  {
    const float stddev = std::sqrt(2.f / static_cast<float>(config.feature_channels()));
    std::vector<float> w(static_cast<std::size_t>(class_count + 1) * config.feature_channels());
    for (auto& v : w) v = rng.normal_f(0.f, stddev);
    params.add("pre.cls.w", nm::Tensor<float>::from(
                                {class_count + 1, config.feature_channels(), 1, 1}, std::move(w),
                                true));
    params.add("pre.cls.b", nm::Tensor<float>::zeros({class_count + 1}, true));
  }

  nm::SgdOptimizer<float> opt(config.momentum);
  PretrainResult result;
  const int G = config.patch_grid();
  for (int iter = 0; iter < config.pretrain_iterations; ++iter) {
    std::vector<const scene::LabeledImage*> batch;
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(config.pretrain_batch) * G * G);
    for (int b = 0; b < config.pretrain_batch; ++b) {
      const auto& entry = pool[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(pool.size())))];
      batch.push_back(entry.image);
      labels.insert(labels.end(), entry.patch_labels.begin(), entry.patch_labels.end());
    }
    auto images = stack_images(batch);
    nm::Tape<float> tape;
    auto features = encode_patches(&tape, config, params, images);
    auto logits = nm::conv2d(&tape, features, params.at("pre.cls.w"), params.at("pre.cls.b"), 1, 0);
    auto loss = nm::cross_entropy_masked(
        &tape, logits, nm::const_buffer(std::move(labels)),
        static_cast<float>(config.pretrain_batch * G * G));
    const float loss_v = loss.scalar();
    if (!std::isfinite(loss_v))
      raise(ErrorKind::numeric, "pretrain_oracle: non-finite loss at iteration ", iter);
    result.loss_curve.push_back(loss_v);
    for (auto& [name, t] : params) t.drop_grad();
    tape.backward(loss);
    opt.step(params, config.lr);
  }

  // held-out patch accuracy
  std::int64_t correct = 0, total = 0;
  for (const auto* ds : world_val) {
    for (const auto& img : ds->images) {
      const auto labels = scene::patch_class_map(img.boxes, config.image_size, config.patch_size,
                                                 class_count);
      std::vector<const scene::LabeledImage*> one = {&img};
      auto features = encode_patches<float>(nullptr, config, params, stack_images(one));
      auto logits =
          nm::conv2d<float>(nullptr, features, params.at("pre.cls.w"), params.at("pre.cls.b"), 1, 0);
      const std::size_t plane = static_cast<std::size_t>(G) * G;
      for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        float best_v = logits.data()[p];
        for (int k = 1; k <= class_count; ++k) {
          const float v = logits.data()[static_cast<std::size_t>(k) * plane + p];
          if (v > best_v) {
            best_v = v;
            best = k;
          }
        }
        correct += best == labels[p] ? 1 : 0;
        ++total;
      }
    }
  }
  result.holdout_patch_accuracy =
      total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

  result.encoder = strip_pretrain_head(params);
  result.encoder.set_requires_grad(false);
  return result;
}

detector::DetectorConfig labeller_head_config(const OracleConfig& oracle, int class_count,
                                              int grid_stride) {
  detector::DetectorConfig cfg;
  cfg.backbone_channels = {oracle.feature_channels()};  // informational; head-only model
  cfg.head_channels = 64;
  cfg.class_count = class_count;
  cfg.image_size = oracle.image_size;
  cfg.feature_stride = oracle.patch_size;
  cfg.grid_stride = grid_stride;
  return cfg;
}

LabellerModel train_labeller_head(const OracleConfig& oracle_config,
                                  const nm::ModelState<float>& encoder,
                                  const scene::Dataset& source_train,
                                  const LabellerTrainConfig& config, std::uint64_t seed,
                                  std::vector<float>* loss_curve) {
  if (source_train.images.empty())
    raise(ErrorKind::argument, "train_labeller_head: empty source dataset");
  config.aug.validate();

  LabellerModel model;
  model.oracle_config = oracle_config;
  model.head_config = labeller_head_config(
      oracle_config, static_cast<int>(source_train.manifest.classes.size()));
  model.encoder = encoder.clone();
  model.encoder.set_requires_grad(config.unfreeze_backbone);

  Rng rng(seed_mix(seed, fnv1a64("labeller-head")));
  model.head = detector::init_head_params<float>(model.head_config,
                                                 oracle_config.feature_channels(), rng);

  nm::SgdOptimizer<float> head_opt(config.momentum);
  nm::SgdOptimizer<float> encoder_opt(config.momentum);
  const int stem_stride = model.head_config.grid_stride / model.head_config.feature_stride;

  for (int iter = 0; iter < config.iterations; ++iter) {
    std::vector<augment::AugmentedPair> pairs;
    for (int b = 0; b < config.batch; ++b) {
      const auto& img = source_train.images[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(source_train.images.size())))];
      pairs.push_back(augment::make_pair(img, config.aug, rng));
    }
    // weak views then strong views, sharing geometry and labels
    std::vector<float> data;
    std::vector<std::vector<scene::BoxLabel>> boxes;
    const int S = oracle_config.image_size;
    data.reserve(static_cast<std::size_t>(2 * config.batch) * 3 * S * S);
    for (const auto& p : pairs) {
      data.insert(data.end(), p.weak.image.values().begin(), p.weak.image.values().end());
      boxes.push_back(p.weak.boxes);
    }
    for (const auto& p : pairs) {
      data.insert(data.end(), p.strong.image.values().begin(), p.strong.image.values().end());
      boxes.push_back(p.strong.boxes);
    }
    auto views = nm::Tensor<float>::from({2 * config.batch, 3, S, S}, std::move(data));
    auto targets = detector::assign_targets(boxes, model.head_config.grid(),
                                            model.head_config.grid_stride,
                                            model.head_config.class_count);
    nm::Tape<float> tape;
    auto features = encode_patches(&tape, oracle_config, model.encoder, views);
    auto output = detector::head_forward(&tape, model.head_config, model.head, features,
                                         stem_stride);
    auto loss = detector::detection_loss(&tape, output, targets);
    const float loss_v = loss.total.scalar();
    if (!std::isfinite(loss_v))
      raise(ErrorKind::numeric, "train_labeller_head: non-finite loss at iteration ", iter);
    if (loss_curve) loss_curve->push_back(loss_v);
    model.head.zero_grads();
    model.encoder.zero_grads();
    tape.backward(loss.total);
    head_opt.step(model.head, config.lr);
    if (config.unfreeze_backbone && config.backbone_lr_scale > 0.f)
      encoder_opt.step(model.encoder, config.lr * config.backbone_lr_scale);
  }
  model.encoder.set_requires_grad(false);
  return model;
}

std::vector<std::vector<detector::Detection>> labeller_detect(
    const LabellerModel& model, const nm::Tensor<float>& images) {
  auto features = encode_patches<float>(nullptr, model.oracle_config, model.encoder, images);
  const int stem_stride = model.head_config.grid_stride / model.head_config.feature_stride;
  auto output =
      detector::head_forward<float>(nullptr, model.head_config, model.head, features, stem_stride);
  return detector::postprocess(output, model.head_config);
}

plabel::PseudoLabels generate_pseudo_labels(const LabellerModel& model,
                                            const scene::Dataset& target_train, float delta,
                                            const std::filesystem::path& out_path) {
  if (delta < 0.f || delta > 1.f)
    raise(ErrorKind::argument, "generate_pseudo_labels: delta outside [0,1]");
  plabel::PseudoLabels labels;
  labels.delta = delta;
  labels.labeller = std::string("labeller-") + model.oracle_config.tier_name();

  const int batch = 16;
  const int S = model.oracle_config.image_size;
  for (int begin = 0; begin < target_train.size(); begin += batch) {
    const int n = std::min(batch, target_train.size() - begin);
    std::vector<const scene::LabeledImage*> ptrs;
    for (int i = 0; i < n; ++i)
      ptrs.push_back(&target_train.images[static_cast<std::size_t>(begin + i)]);
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(n) * 3 * S * S);
    for (const auto* img : ptrs)
      data.insert(data.end(), img->image.values().begin(), img->image.values().end());
    auto images = nm::Tensor<float>::from({n, 3, S, S}, std::move(data));
    auto dets = labeller_detect(model, images);
    for (auto& d : dets)
      labels.images.push_back(detector::threshold_detections(d, delta));
  }
  if (!out_path.empty()) plabel::save(out_path, labels);
  return labels;
}

evalkit::MapResult evaluate_labeller(const LabellerModel& model, const scene::Dataset& dataset) {
  std::vector<evalkit::EvalInstance> instances;
  const int batch = 16;
  const int S = model.oracle_config.image_size;
  for (int begin = 0; begin < dataset.size(); begin += batch) {
    const int n = std::min(batch, dataset.size() - begin);
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(n) * 3 * S * S);
    for (int i = 0; i < n; ++i) {
      const auto& img = dataset.images[static_cast<std::size_t>(begin + i)];
      data.insert(data.end(), img.image.values().begin(), img.image.values().end());
    }
    auto images = nm::Tensor<float>::from({n, 3, S, S}, std::move(data));
    auto dets = labeller_detect(model, images);
    for (int i = 0; i < n; ++i) {
      evalkit::EvalInstance inst;
      inst.detections = std::move(dets[static_cast<std::size_t>(i)]);
      inst.ground_truth = dataset.images[static_cast<std::size_t>(begin + i)].boxes;
      instances.push_back(std::move(inst));
    }
  }
  return evalkit::map50(instances, static_cast<int>(dataset.manifest.classes.size()));
}



nlohmann::ordered_json oracle_config_to_json(const OracleConfig& c) {
  return {{"tier", c.tier_name()},
          {"patch_size", c.patch_size},
          {"image_size", c.image_size},
          {"base_width", c.base_width},
          {"feature_width", c.feature_width},
          {"pretrain_iterations", c.pretrain_iterations},
          {"pretrain_batch", c.pretrain_batch},
          {"lr", static_cast<double>(c.lr)},
          {"momentum", static_cast<double>(c.momentum)}};
}

OracleConfig oracle_config_from_json(const nlohmann::ordered_json& j) {
  OracleConfig c;
  const std::string tier = j.at("tier").get<std::string>();
  if (tier == "large") {
    c.tier = OracleConfig::Tier::large;
  } else if (tier == "small") {
    c.tier = OracleConfig::Tier::small;
  } else {
    raise(ErrorKind::config, "oracle: unknown tier '", tier, "'");
  }
  c.patch_size = j.at("patch_size").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.pretrain_iterations = j.at("pretrain_iterations").get<int>();
  c.pretrain_batch = j.at("pretrain_batch").get<int>();
  c.lr = static_cast<float>(j.at("lr").get<double>());
  c.momentum = static_cast<float>(j.at("momentum").get<double>());
  c.validate();
  return c;
}

void save_labeller(const std::filesystem::path& dir, const LabellerModel& model) {
  checkpoint::Checkpoint ckpt;
  ckpt.meta = {{"kind", "labeller"},
               {"oracle", oracle_config_to_json(model.oracle_config)},
               {"head_config", detector::config_to_json(model.head_config)}};
  checkpoint::add_prefixed(ckpt.tensors, model.encoder, "encoder/");
  checkpoint::add_prefixed(ckpt.tensors, model.head, "head/");
  checkpoint::save(dir, ckpt);
}

LabellerModel load_labeller(const std::filesystem::path& dir) {
  auto ckpt = checkpoint::load(dir);
  if (ckpt.meta.value("kind", "") != "labeller")
    raise(ErrorKind::format, "checkpoint at ", dir.string(), " is not a labeller");
  LabellerModel model;
  model.oracle_config = oracle_config_from_json(ckpt.meta.at("oracle"));
  model.head_config = detector::config_from_json(ckpt.meta.at("head_config"));
  model.encoder = checkpoint::extract_prefixed(ckpt.tensors, "encoder/");
  model.head = checkpoint::extract_prefixed(ckpt.tensors, "head/");
  model.encoder.set_requires_grad(false);
  if (model.encoder.size() == 0 || model.head.size() == 0)
    raise(ErrorKind::format, "labeller checkpoint at ", dir.string(), " is incomplete");
  return model;
}

}  // namespace datforge::oracle
