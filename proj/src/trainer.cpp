#include "datforge/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "datforge/checkpoint.hpp"

namespace datforge::trainer {

namespace nm = datforge::numerics;
using json = nlohmann::ordered_json;

void TrainSchedule::validate() const {
  if (n_init_sim < 0 || n_init_pl < n_init_sim || n_max < n_init_pl)
    raise(ErrorKind::config, "schedule: need 0 <= n_init_sim <= n_init_pl <= n_max, got ",
          n_init_sim, " / ", n_init_pl, " / ", n_max);
  if (n_init_ema.has_value() && *n_init_ema < n_init_pl)
    raise(ErrorKind::config, "schedule: n_init_ema ", *n_init_ema, " must be >= n_init_pl ",
          n_init_pl);
}

void LossWeights::validate() const {
  if (lambda_unsup < 0.f || lambda_sim < 0.f)
    raise(ErrorKind::config, "loss weights must be non-negative");
}

void TrainerConfig::validate() const {
  det.validate();
  align_oracle.validate();
  schedule.validate();
  weights.validate();
  aug.validate();
  if (alpha < 0.f || alpha >= 1.f) raise(ErrorKind::config, "trainer: alpha outside [0,1)");
  if (lr <= 0.f) raise(ErrorKind::config, "trainer: lr must be > 0");
  if (batch_source < 1 || batch_target < 1)
    raise(ErrorKind::config, "trainer: batch sizes must be >= 1");
  if (projection_hidden < 1) raise(ErrorKind::config, "trainer: projection_hidden must be >= 1");
  if (delta < 0.f || delta > 1.f) raise(ErrorKind::config, "trainer: delta outside [0,1]");
  if (det.image_size != align_oracle.image_size)
    raise(ErrorKind::config, "trainer: detector image size ", det.image_size,
          " != alignment encoder image size ", align_oracle.image_size);
  if ((label_mode == LabelMode::ema_only || label_mode == LabelMode::ema_mixed) &&
      !schedule.n_init_ema.has_value())
    raise(ErrorKind::config, "trainer: label mode '", label_mode_name(label_mode),
          "' requires n_init_ema");
}

PhaseFlags phase_flags(int iter, const TrainSchedule& schedule) {
  schedule.validate();
  if (iter < 0 || iter >= schedule.n_max)
    raise(ErrorKind::argument, "phase_flags: iteration ", iter, " outside [0,", schedule.n_max,
          ")");
  PhaseFlags flags;
  flags.align_source = true;
  flags.align_target = iter >= schedule.n_init_sim;
  flags.use_pseudo_labels = iter >= schedule.n_init_pl;
  return flags;
}

const char* label_mode_name(LabelMode mode) {
  switch (mode) {
    case LabelMode::dino: return "dino";
    case LabelMode::mean_teacher: return "mean_teacher";
    case LabelMode::ema_only: return "ema_only";
    case LabelMode::ema_mixed: return "ema_mixed";
  }
  return "?";
}

LabelMode label_mode_from_name(const std::string& name) {
  if (name == "dino") return LabelMode::dino;
  if (name == "mean_teacher") return LabelMode::mean_teacher;
  if (name == "ema_only") return LabelMode::ema_only;
  if (name == "ema_mixed") return LabelMode::ema_mixed;
  raise(ErrorKind::config, "unknown label mode '", name, "'");
}

namespace {

std::string format_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) raise(ErrorKind::numeric, "cannot format float");
  return std::string(buf, ptr);
}

std::vector<scene::BoxLabel> detections_to_boxes(std::span<const detector::Detection> dets) {
  std::vector<scene::BoxLabel> boxes;
  boxes.reserve(dets.size());
  for (const auto& d : dets) boxes.push_back(d.box);
  return boxes;
}

}  // namespace

LabelSelection select_label_source(int iter, LabelMode mode, std::optional<int> n_init_ema,
                                   const plabel::PseudoLabels* dino_labels,
                                   const detector::DetectorConfig& det,
                                   const numerics::ModelState<float>& teacher,
                                   const numerics::Tensor<float>& target_weak_views,
                                   std::span<const int> image_ids,
                                   std::span<const augment::GeometricRecord> geometry,
                                   float delta) {
  bool use_ema = false;
  switch (mode) {
    case LabelMode::dino:
      use_ema = false;
      break;
    case LabelMode::mean_teacher:
      use_ema = true;
      break;
    case LabelMode::ema_only:
      if (!n_init_ema.has_value())
        raise(ErrorKind::config, "ema_only label mode requires n_init_ema");
      use_ema = iter >= *n_init_ema;
      break;
    case LabelMode::ema_mixed:
      if (!n_init_ema.has_value())
        raise(ErrorKind::config, "ema_mixed label mode requires n_init_ema");
      use_ema = iter >= *n_init_ema && iter % 2 == 1;  // even: dino, odd: teacher
      break;
  }

  LabelSelection selection;
  if (use_ema) {
    selection.source = "ema";
    auto out = detector::forward<float>(nullptr, det, teacher, target_weak_views);
    auto dets = detector::postprocess(out, det);
    for (auto& d : dets) {
      auto kept = detector::threshold_detections(d, delta);
      selection.per_image.push_back(detections_to_boxes(kept));
    }
  } else {
    selection.source = "dino";
    if (!dino_labels)
      raise(ErrorKind::missing, "label mode '", label_mode_name(mode),
            "' needs a pseudo-label file at iteration ", iter);
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
      const auto& dets = dino_labels->for_image(image_ids[i]);
      auto boxes = detections_to_boxes(dets);
      selection.per_image.push_back(augment::transform_boxes(boxes, geometry[i]));
    }
  }
  return selection;
}

Trainer::Trainer(TrainerConfig config, std::shared_ptr<const scene::Dataset> source_train,
                 std::shared_ptr<const scene::Dataset> target_train,
                 numerics::ModelState<float> align_encoder,
                 std::shared_ptr<const plabel::PseudoLabels> dino_labels, std::uint64_t seed)
    : config_(std::move(config)),
      source_(std::move(source_train)),
      target_(std::move(target_train)),
      align_encoder_(std::move(align_encoder)),
      dino_labels_(std::move(dino_labels)),
      opt_(config_.momentum),
      data_rng_(seed_mix(seed, fnv1a64("train-data"))) {
  config_.validate();
  if (!source_ || source_->images.empty())
    raise(ErrorKind::argument, "trainer: empty source dataset");
  if (!target_ || target_->images.empty())
    raise(ErrorKind::argument, "trainer: empty target dataset");
  const bool needs_dino = config_.label_mode != LabelMode::mean_teacher;
  if (needs_dino && !dino_labels_)
    raise(ErrorKind::missing, "trainer: label mode '", label_mode_name(config_.label_mode),
          "' requires a pseudo-label file");

  Rng init_rng(seed_mix(seed, fnv1a64("student-init")));
  student_ = detector::init_params<float>(config_.det, init_rng);
  teacher_ = student_.clone();
  teacher_.set_requires_grad(false);
  Rng proj_rng(seed_mix(seed, fnv1a64("projection-init")));
  projection_ = init_projection<float>(config_.det.feature_channels(), config_.projection_hidden,
                                       config_.align_oracle.feature_channels(), proj_rng);
  align_encoder_.set_requires_grad(false);
}

StepStats Trainer::step() {
  const PhaseFlags flags = phase_flags(iter_, config_.schedule);
  const int S = config_.det.image_size;
  const int bs = config_.batch_source;
  const int bt = config_.batch_target;

  // sample and augment: weak views first, then the strong views
  std::vector<augment::AugmentedPair> src_pairs, tgt_pairs;
  std::vector<int> tgt_ids;
  for (int b = 0; b < bs; ++b) {
    const auto idx = data_rng_.uniform_int(static_cast<std::int64_t>(source_->images.size()));
    src_pairs.push_back(
        augment::make_pair(source_->images[static_cast<std::size_t>(idx)], config_.aug,
                           data_rng_));
  }
  for (int b = 0; b < bt; ++b) {
    const auto idx = data_rng_.uniform_int(static_cast<std::int64_t>(target_->images.size()));
    tgt_ids.push_back(static_cast<int>(idx));
    tgt_pairs.push_back(
        augment::make_pair(target_->images[static_cast<std::size_t>(idx)], config_.aug,
                           data_rng_));
  }

  auto stack_views = [S](const std::vector<augment::AugmentedPair>& pairs) {
    const int n = static_cast<int>(pairs.size());
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(2 * n) * 3 * S * S);
    for (const auto& p : pairs)
      data.insert(data.end(), p.weak.image.values().begin(), p.weak.image.values().end());
    for (const auto& p : pairs)
      data.insert(data.end(), p.strong.image.values().begin(), p.strong.image.values().end());
    return nm::Tensor<float>::from({2 * n, 3, S, S}, std::move(data));
  };

  nm::Tape<float> tape;
  StepStats stats;
  stats.iter = iter_;
  stats.flags = flags;

  // source detection loss on both views with ground-truth boxes
  auto src_views = stack_views(src_pairs);
  std::vector<std::vector<scene::BoxLabel>> src_boxes;
  for (const auto& p : src_pairs) src_boxes.push_back(p.weak.boxes);
  for (const auto& p : src_pairs) src_boxes.push_back(p.weak.boxes);
  auto src_targets = detector::assign_targets(src_boxes, config_.det.grid(),
                                              config_.det.grid_stride, config_.det.class_count);
  auto src_out = detector::forward(&tape, config_.det, student_, src_views);
  auto l_det_s = detector::detection_loss(&tape, src_out, src_targets).total;

  // alignment on the identical augmented views
  const bool sim_active = config_.weights.lambda_sim > 0.f;
  nm::Tensor<float> l_sim = nm::Tensor<float>::scalar_of(0.f);
  nm::Tensor<float> sim_src, sim_tgt;
  if (sim_active) {
    auto oracle_src =
        oracle::encode_patches<float>(nullptr, config_.align_oracle, align_encoder_, src_views);
    sim_src = alignment_loss(&tape, src_out.features, oracle_src, projection_,
                             config_.cosine_epsilon);
  }

  // target forward only once the target enters the objective
  const bool need_target = flags.align_target || flags.use_pseudo_labels;
  nm::Tensor<float> l_det_t = nm::Tensor<float>::scalar_of(0.f);
  if (need_target) {
    auto tgt_views = stack_views(tgt_pairs);
    const auto mode = flags.use_pseudo_labels ? detector::ForwardMode::full
                                              : detector::ForwardMode::features_only;
    auto tgt_out = detector::forward(&tape, config_.det, student_, tgt_views, mode);
    if (sim_active && flags.align_target) {
      auto oracle_tgt =
          oracle::encode_patches<float>(nullptr, config_.align_oracle, align_encoder_, tgt_views);
      sim_tgt = alignment_loss(&tape, tgt_out.features, oracle_tgt, projection_,
                               config_.cosine_epsilon);
    }
    if (flags.use_pseudo_labels) {
      // teacher labels come from the weak views only
      std::vector<float> weak_data;
      weak_data.reserve(static_cast<std::size_t>(bt) * 3 * S * S);
      for (const auto& p : tgt_pairs)
        weak_data.insert(weak_data.end(), p.weak.image.values().begin(),
                         p.weak.image.values().end());
      auto weak_views = nm::Tensor<float>::from({bt, 3, S, S}, std::move(weak_data));
      std::vector<augment::GeometricRecord> geoms;
      for (const auto& p : tgt_pairs) geoms.push_back(p.geometry);
      auto selection = select_label_source(
          iter_, config_.label_mode, config_.schedule.n_init_ema, dino_labels_.get(), config_.det,
          teacher_, weak_views, tgt_ids, geoms, config_.delta);
      stats.label_source = selection.source;
      std::vector<std::vector<scene::BoxLabel>> tgt_boxes = selection.per_image;
      tgt_boxes.insert(tgt_boxes.end(), selection.per_image.begin(), selection.per_image.end());
      auto tgt_targets = detector::assign_targets(
          tgt_boxes, config_.det.grid(), config_.det.grid_stride, config_.det.class_count);
      l_det_t = detector::detection_loss(&tape, tgt_out, tgt_targets).total;
    }
  }

  if (sim_active) {
    if (sim_tgt.valid()) {
      // mean over all aligned views
      const float ws = static_cast<float>(2 * bs) / static_cast<float>(2 * bs + 2 * bt);
      const float wt = static_cast<float>(2 * bt) / static_cast<float>(2 * bs + 2 * bt);
      const std::array<nm::Tensor<float>, 2> terms{sim_src, sim_tgt};
      const std::array<float, 2> w{ws, wt};
      l_sim = nm::weighted_sum<float>(&tape, terms, w);
    } else {
      l_sim = sim_src;
    }
  }

  auto total = combined_loss(&tape, l_det_s, l_det_t, l_sim, config_.weights);
  stats.loss_total = total.scalar();
  stats.loss_det_s = l_det_s.scalar();
  stats.loss_det_t = l_det_t.scalar();
  stats.loss_sim = l_sim.scalar();
  if (!std::isfinite(stats.loss_total))
    raise(ErrorKind::numeric, "trainer: non-finite loss at iteration ", iter_);

  student_.zero_grads();
  projection_.zero_grads();
  tape.backward(total);
  opt_.step(student_, config_.lr);
  if (sim_active) opt_.step(projection_, config_.lr);
  ema_update(teacher_, student_, config_.alpha);
  ++iter_;
  return stats;
}

evalkit::MapResult Trainer::evaluate(const scene::Dataset& dataset) const {
  return evaluate_detector(config_.det, teacher_, dataset);
}

evalkit::MapResult evaluate_detector(const detector::DetectorConfig& config,
                                     const numerics::ModelState<float>& params,
                                     const scene::Dataset& dataset) {
  std::vector<evalkit::EvalInstance> instances;
  const int batch = 16;
  const int S = config.image_size;
  for (int begin = 0; begin < dataset.size(); begin += batch) {
    const int n = std::min(batch, dataset.size() - begin);
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(n) * 3 * S * S);
    for (int i = 0; i < n; ++i) {
      const auto& img = dataset.images[static_cast<std::size_t>(begin + i)];
      data.insert(data.end(), img.image.values().begin(), img.image.values().end());
    }
    auto images = nm::Tensor<float>::from({n, 3, S, S}, std::move(data));
    auto out = detector::forward<float>(nullptr, config, params, images);
    auto dets = detector::postprocess(out, config);
    for (int i = 0; i < n; ++i) {
      evalkit::EvalInstance inst;
      inst.detections = std::move(dets[static_cast<std::size_t>(i)]);
      inst.ground_truth = dataset.images[static_cast<std::size_t>(begin + i)].boxes;
      instances.push_back(std::move(inst));
    }
  }
  return evalkit::map50(instances, static_cast<int>(dataset.manifest.classes.size()));
}

plabel::PseudoLabels student_pseudo_labels(const detector::DetectorConfig& config,
                                           const numerics::ModelState<float>& params,
                                           const scene::Dataset& target_train, float delta,
                                           const std::filesystem::path& out_path,
                                           const std::string& tag) {
  plabel::PseudoLabels labels;
  labels.delta = delta;
  labels.labeller = tag;
  const int batch = 16;
  const int S = config.image_size;
  for (int begin = 0; begin < target_train.size(); begin += batch) {
    const int n = std::min(batch, target_train.size() - begin);
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(n) * 3 * S * S);
    for (int i = 0; i < n; ++i) {
      const auto& img = target_train.images[static_cast<std::size_t>(begin + i)];
      data.insert(data.end(), img.image.values().begin(), img.image.values().end());
    }
    auto images = nm::Tensor<float>::from({n, 3, S, S}, std::move(data));
    auto out = detector::forward<float>(nullptr, config, params, images);
    auto dets = detector::postprocess(out, config);
    for (auto& d : dets) labels.images.push_back(detector::threshold_detections(d, delta));
  }
  if (!out_path.empty()) plabel::save(out_path, labels);
  return labels;
}

namespace {

std::array<std::uint64_t, 4> rng_state_from_json(const json& j) {
  std::array<std::uint64_t, 4> state{};
  for (std::size_t i = 0; i < 4; ++i)
    state[i] = std::stoull(j.at(i).get<std::string>(), nullptr, 16);
  return state;
}

json rng_state_to_json(const std::array<std::uint64_t, 4>& state) {
  json j = json::array();
  for (auto w : state) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(w));
    j.push_back(std::string(buf));
  }
  return j;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
  checkpoint::Checkpoint ckpt;
  ckpt.meta = {{"kind", "student"},
               {"iter", iter_},
               {"alpha", static_cast<double>(config_.alpha)},
               {"label_mode", label_mode_name(config_.label_mode)},
               {"det", detector::config_to_json(config_.det)},
               {"rng", rng_state_to_json(data_rng_.state())}};
  checkpoint::add_prefixed(ckpt.tensors, student_, "student/");
  checkpoint::add_prefixed(ckpt.tensors, teacher_, "teacher/");
  checkpoint::add_prefixed(ckpt.tensors, projection_, "proj/");
  // optimizer momentum buffers
  for (const auto& [name, t] : student_) {
    if (opt_.has_velocity(name)) {
      const auto& v = opt_.velocity(name);
      ckpt.tensors.add("opt/" + name, nm::Tensor<float>::from(t.shape(), v));
    }
  }
  for (const auto& [name, t] : projection_) {
    if (opt_.has_velocity(name)) {
      const auto& v = opt_.velocity(name);
      ckpt.tensors.add("opt/" + name, nm::Tensor<float>::from(t.shape(), v));
    }
  }
  checkpoint::save(dir, ckpt);
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
  auto ckpt = checkpoint::load(dir);
  if (ckpt.meta.value("kind", "") != "student")
    raise(ErrorKind::format, "checkpoint at ", dir.string(), " is not a student checkpoint");
  checkpoint::restore_into(student_, ckpt.tensors, "student/");
  checkpoint::restore_into(teacher_, ckpt.tensors, "teacher/");
  checkpoint::restore_into(projection_, ckpt.tensors, "proj/");
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("opt/", 0) == 0) {
      opt_.set_velocity(name.substr(4),
                        std::vector<float>(t.values().begin(), t.values().end()));
    }
  }
  iter_ = ckpt.meta.at("iter").get<int>();
  data_rng_.set_state(rng_state_from_json(ckpt.meta.at("rng")));
}

RunResult run_training(Trainer& trainer, const scene::Dataset* eval_dataset,
                       const std::filesystem::path& run_dir) {
  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  if (ec) raise(ErrorKind::io, "cannot create run directory ", run_dir.string());
  std::ofstream train_log(run_dir / "train_log.csv", std::ios::app);
  std::ofstream source_log(run_dir / "label_sources.csv", std::ios::app);
  std::ofstream eval_log(run_dir / "eval_log.csv", std::ios::app);
  if (!train_log || !source_log || !eval_log)
    raise(ErrorKind::io, "cannot open training logs under ", run_dir.string());
  if (trainer.iter() == 0) {
    train_log << "iter,loss_total,loss_det_s,loss_det_t,loss_sim,phase_flags\n";
    source_log << "iter,source\n";
    eval_log << "iter,map50\n";
  }

  const auto& cfg = trainer.config();
  auto eval_due = [&](int it) {
    if (it == 0) return false;
    if (it == cfg.schedule.n_init_pl || it == cfg.schedule.n_max) return true;
    return cfg.eval_every > 0 && it % cfg.eval_every == 0;
  };

  RunResult result;
  auto run_eval = [&](int it) {
    if (!eval_dataset) return;
    EvalPoint point;
    point.iter = it;
    point.result = trainer.evaluate(*eval_dataset);
    eval_log << it << "," << evalkit::format_double(point.result.map) << "\n";
    eval_log.flush();
    result.evals.push_back(std::move(point));
  };

  while (trainer.iter() < cfg.schedule.n_max) {
    if (eval_due(trainer.iter())) run_eval(trainer.iter());
    StepStats stats = trainer.step();
    result.last = stats;
    train_log << stats.iter << "," << format_float(stats.loss_total) << ","
              << format_float(stats.loss_det_s) << "," << format_float(stats.loss_det_t) << ","
              << format_float(stats.loss_sim) << "," << (stats.flags.align_source ? '1' : '0')
              << (stats.flags.align_target ? '1' : '0')
              << (stats.flags.use_pseudo_labels ? '1' : '0') << "\n";
    if (stats.flags.use_pseudo_labels) source_log << stats.iter << "," << stats.label_source << "\n";
  }
  if (eval_due(trainer.iter())) run_eval(trainer.iter());
  return result;
}

}  // namespace datforge::trainer
