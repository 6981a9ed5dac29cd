// Procedural two-domain detection scenes and the on-disk dataset format.
//
// Datasets are directories holding meta.json, labels.json and one DTEN record
// per image under images/. Identical (spec, domain, seed, count) reproduce a
// byte-identical tree.
#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "datforge/rng.hpp"
#include "datforge/tensor.hpp"

namespace datforge::scene {

struct BoxLabel {
  int class_id = 0;
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  float width() const { return x_max - x_min; }
  float height() const { return y_max - y_min; }
  float area() const { return width() * height(); }
  float center_x() const { return 0.5f * (x_min + x_max); }
  float center_y() const { return 0.5f * (y_min + y_max); }
};

struct LabeledImage {
  numerics::Tensor<float> image;  // [3,H,W], values in [0,1]
  std::vector<BoxLabel> boxes;
};

// Intersection over union of two corner-convention boxes.
inline float box_iou(const BoxLabel& a, const BoxLabel& b) {
  const float ix = std::max(0.f, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const float iy = std::max(0.f, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const float inter = ix * iy;
  const float uni = a.area() + b.area() - inter;
  return uni > 0.f ? inter / uni : 0.f;
}

struct SceneSpec {
  int image_size = 64;
  int class_count = 3;
  int objects_min = 1;
  int objects_max = 4;
  std::vector<double> class_frequency = {0.45, 0.45, 0.10};
  bool rare_class_mode = true;
  int oracle_patch = 4;  // image_size must be divisible by this
  std::uint64_t seed = 1;

  void validate() const;
};

struct Corruption {
  enum class Kind { none, fog, dim, hue_shift, noise };
  Kind kind = Kind::none;
  float param = 0;  // fog strength, dim gamma, hue degrees, noise sigma
};

struct DomainSpec {
  std::string name = "clean";
  int texture_palette = 0;
  std::vector<Corruption> steps;  // applied in order

  void validate() const;
};

// Benchmark domains. The world family spans corruption grids around, but
// never exactly at, the target parameters.
DomainSpec source_domain();
DomainSpec target_domain();
std::vector<DomainSpec> world_domains();

LabeledImage render_scene(const SceneSpec& spec, Rng& rng, int texture_palette = 0);
LabeledImage apply_domain(const LabeledImage& input, const DomainSpec& domain, Rng& rng);

struct DatasetManifest {
  std::string name;
  int image_size = 0;
  std::vector<std::string> classes;
  DomainSpec domain;
  int count = 0;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> per_class_instances;  // not persisted in meta.json
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledImage> images;

  int size() const { return static_cast<int>(images.size()); }
};

DatasetManifest generate_dataset(const SceneSpec& spec, const DomainSpec& domain, int count,
                                 const std::string& split, const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<std::string> default_class_names(int class_count);

// Per-patch content labels: index of the smallest-area box whose rectangle
// contains the patch center, else `class_count` (background).
std::vector<int> patch_class_map(const std::vector<BoxLabel>& boxes, int image_size,
                                 int patch_size, int class_count);

}  // namespace datforge::scene
