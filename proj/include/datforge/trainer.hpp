// Student training: phase schedule, EMA teacher, patch-feature alignment
// against a frozen encoder, combined objective, and pluggable label sources.
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "datforge/augment.hpp"
#include "datforge/detector.hpp"
#include "datforge/evalkit.hpp"
#include "datforge/oracle.hpp"
#include "datforge/pseudo_labels.hpp"
#include "datforge/sgd.hpp"

namespace datforge::trainer {

struct TrainSchedule {
  int n_init_sim = 500;
  int n_init_pl = 2000;
  std::optional<int> n_init_ema;
  int n_max = 6000;

  void validate() const;
};

struct LossWeights {
  float lambda_unsup = 1.f;
  float lambda_sim = 1.f;

  void validate() const;
};

struct PhaseFlags {
  bool align_source = true;
  bool align_target = false;
  bool use_pseudo_labels = false;
};

// Source alignment runs from the start; target alignment from n_init_sim;
// pseudo-labels from n_init_pl (>= convention at both boundaries).
PhaseFlags phase_flags(int iter, const TrainSchedule& schedule);

enum class LabelMode { dino, mean_teacher, ema_only, ema_mixed };
const char* label_mode_name(LabelMode mode);
LabelMode label_mode_from_name(const std::string& name);

struct TrainerConfig {
  detector::DetectorConfig det;
  oracle::OracleConfig align_oracle;  // alignment encoder geometry
  TrainSchedule schedule;
  LossWeights weights;
  LabelMode label_mode = LabelMode::dino;
  float alpha = 0.999f;
  float lr = 0.01f;
  float momentum = 0.9f;
  int batch_source = 4;
  int batch_target = 4;
  int projection_hidden = 128;
  float delta = 0.8f;
  float cosine_epsilon = 1e-8f;
  augment::Params aug;
  int eval_every = 500;

  void validate() const;
};

// theta_bar <- alpha * theta_bar + (1 - alpha) * theta for every tensor.
template <std::floating_point T>
void ema_update(numerics::ModelState<T>& teacher, const numerics::ModelState<T>& student,
                T alpha);

// 2-layer projection MLP as 1x1 convs: in -> hidden -> out with a rectifier.
template <std::floating_point T>
numerics::ModelState<T> init_projection(int in_channels, int hidden, int out_channels, Rng& rng);

// Mean over batch and locations of 1 - cosine(projected+interpolated student
// features, frozen oracle features).
template <std::floating_point T>
numerics::Tensor<T> alignment_loss(numerics::Tape<T>* tape,
                                   const numerics::Tensor<T>& student_features,
                                   const numerics::Tensor<T>& oracle_features,
                                   const numerics::ModelState<T>& projection, T epsilon);

// L = L_det_source + lambda_unsup * L_det_target + lambda_sim * L_sim.
template <std::floating_point T>
numerics::Tensor<T> combined_loss(numerics::Tape<T>* tape, const numerics::Tensor<T>& l_det_s,
                                  const numerics::Tensor<T>& l_det_t,
                                  const numerics::Tensor<T>& l_sim, const LossWeights& weights);

struct LabelSelection {
  // view-coordinate boxes, one list per target image slot
  std::vector<std::vector<scene::BoxLabel>> per_image;
  std::string source;  // "dino" or "ema"
};

LabelSelection select_label_source(int iter, LabelMode mode, std::optional<int> n_init_ema,
                                   const plabel::PseudoLabels* dino_labels,
                                   const detector::DetectorConfig& det,
                                   const numerics::ModelState<float>& teacher,
                                   const numerics::Tensor<float>& target_weak_views,
                                   std::span<const int> image_ids,
                                   std::span<const augment::GeometricRecord> geometry,
                                   float delta);

struct StepStats {
  int iter = 0;
  float loss_total = 0, loss_det_s = 0, loss_det_t = 0, loss_sim = 0;
  PhaseFlags flags;
  std::string label_source = "none";
};

class Trainer {
 public:
  Trainer(TrainerConfig config, std::shared_ptr<const scene::Dataset> source_train,
          std::shared_ptr<const scene::Dataset> target_train,
          numerics::ModelState<float> align_encoder,
          std::shared_ptr<const plabel::PseudoLabels> dino_labels, std::uint64_t seed);

  StepStats step();
  int iter() const { return iter_; }
  const TrainerConfig& config() const { return config_; }

  const numerics::ModelState<float>& student() const { return student_; }
  const numerics::ModelState<float>& teacher() const { return teacher_; }
  const numerics::ModelState<float>& projection() const { return projection_; }
  const numerics::ModelState<float>& align_encoder() const { return align_encoder_; }

  // All reported metrics come from the EMA teacher.
  evalkit::MapResult evaluate(const scene::Dataset& dataset) const;

  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);

 private:
  TrainerConfig config_;
  std::shared_ptr<const scene::Dataset> source_;
  std::shared_ptr<const scene::Dataset> target_;
  numerics::ModelState<float> align_encoder_;
  std::shared_ptr<const plabel::PseudoLabels> dino_labels_;
  numerics::ModelState<float> student_, teacher_, projection_;
  numerics::SgdOptimizer<float> opt_;
  Rng data_rng_;
  int iter_ = 0;
};

struct EvalPoint {
  int iter = 0;
  evalkit::MapResult result;
};

struct RunResult {
  std::vector<EvalPoint> evals;
  StepStats last;
};

// Full loop with logging: train_log.csv (iter,loss_total,loss_det_s,
// loss_det_t,loss_sim,phase_flags), label_sources.csv, eval_log.csv.
RunResult run_training(Trainer& trainer, const scene::Dataset* eval_dataset,
                       const std::filesystem::path& run_dir);

// Evaluate an arbitrary detector parameter set on a dataset.
evalkit::MapResult evaluate_detector(const detector::DetectorConfig& config,
                                     const numerics::ModelState<float>& params,
                                     const scene::Dataset& dataset);

// Generate a pseudo-label file from a student-side model (EMA teacher),
// mirroring the offline labeller path.
plabel::PseudoLabels student_pseudo_labels(const detector::DetectorConfig& config,
                                           const numerics::ModelState<float>& params,
                                           const scene::Dataset& target_train, float delta,
                                           const std::filesystem::path& out_path,
                                           const std::string& tag);

// ---- template definitions ----

template <std::floating_point T>
void ema_update(numerics::ModelState<T>& teacher, const numerics::ModelState<T>& student,
                T alpha) {
  if (alpha < T(0) || alpha >= T(1))
    raise(ErrorKind::argument, "ema_update: alpha outside [0,1)");
  if (teacher.size() != student.size())
    raise(ErrorKind::shape, "ema_update: teacher has ", teacher.size(), " tensors, student ",
          student.size());
  for (auto& [name, t] : teacher) {
    if (!student.contains(name))
      raise(ErrorKind::missing, "ema_update: student is missing tensor '", name, "'");
    const auto& s = student.at(name);
    if (s.shape() != t.shape())
      raise(ErrorKind::shape, "ema_update: shape mismatch for '", name, "': ",
            numerics::shape_str(t.shape()), " vs ", numerics::shape_str(s.shape()));
    auto tv = t.values();
    auto sv = s.values();
    for (std::size_t i = 0; i < tv.size(); ++i)
      tv[i] = alpha * tv[i] + (T(1) - alpha) * sv[i];
  }
}

template <std::floating_point T>
numerics::ModelState<T> init_projection(int in_channels, int hidden, int out_channels, Rng& rng) {
  namespace nm = datforge::numerics;
  if (in_channels < 1 || hidden < 1 || out_channels < 1)
    raise(ErrorKind::config, "projection: channel counts must be positive");
  nm::ModelState<T> state;
  auto fc = [&rng](nm::ModelState<T>& st, const std::string& name, int out_c, int in_c) {
    const T stddev = std::sqrt(T(2) / static_cast<T>(in_c));
    std::vector<T> w(static_cast<std::size_t>(out_c) * in_c);
    for (auto& v : w) v = static_cast<T>(rng.normal()) * stddev;
    st.add(name + ".w", nm::Tensor<T>::from({out_c, in_c, 1, 1}, std::move(w), true));
    st.add(name + ".b", nm::Tensor<T>::zeros({out_c}, true));
  };
  fc(state, "proj.fc1", hidden, in_channels);
  fc(state, "proj.fc2", out_channels, hidden);
  return state;
}

template <std::floating_point T>
numerics::Tensor<T> alignment_loss(numerics::Tape<T>* tape,
                                   const numerics::Tensor<T>& student_features,
                                   const numerics::Tensor<T>& oracle_features,
                                   const numerics::ModelState<T>& projection, T epsilon) {
  namespace nm = datforge::numerics;
  if (student_features.dim(0) != oracle_features.dim(0))
    raise(ErrorKind::shape, "alignment_loss: batch mismatch ", student_features.dim(0), " vs ",
          oracle_features.dim(0));
  auto h = nm::conv2d(tape, student_features, projection.at("proj.fc1.w"),
                      projection.at("proj.fc1.b"), 1, 0);
  h = nm::relu(tape, h);
  auto projected = nm::conv2d(tape, h, projection.at("proj.fc2.w"), projection.at("proj.fc2.b"),
                              1, 0);
  if (projected.dim(1) != oracle_features.dim(1))
    raise(ErrorKind::shape, "alignment_loss: projected channels ", projected.dim(1),
          " do not match encoder channels ", oracle_features.dim(1));
  auto resized = nm::bilinear_interpolate(tape, projected, oracle_features.dim(2),
                                          oracle_features.dim(3));
  auto cos = nm::cosine_map(tape, resized, oracle_features, epsilon);
  auto dissim = nm::affine(tape, cos, T(-1), T(1));
  return nm::mean_all(tape, dissim);
}

template <std::floating_point T>
numerics::Tensor<T> combined_loss(numerics::Tape<T>* tape, const numerics::Tensor<T>& l_det_s,
                                  const numerics::Tensor<T>& l_det_t,
                                  const numerics::Tensor<T>& l_sim, const LossWeights& weights) {
  for (const auto* term : {&l_det_s, &l_det_t, &l_sim}) {
    if (!std::isfinite(static_cast<double>(term->scalar())))
      raise(ErrorKind::numeric, "combined_loss: non-finite loss term");
  }
  const std::array<numerics::Tensor<T>, 3> terms{l_det_s, l_det_t, l_sim};
  const std::array<T, 3> w{T(1), static_cast<T>(weights.lambda_unsup),
                           static_cast<T>(weights.lambda_sim)};
  return numerics::weighted_sum<T>(tape, terms, w);
}

}  // namespace datforge::trainer
