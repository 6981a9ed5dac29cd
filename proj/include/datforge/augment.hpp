// Weak/strong augmentation pairs with shared geometry.
//
// The strong view is derived from the weak view, so both views of a pair are
// geometrically identical and labels transfer between them unchanged.
#pragma once

#include <span>

#include "datforge/rng.hpp"
#include "datforge/scene.hpp"

namespace datforge::augment {

struct Params {
  // weak: crop + flip
  float crop_min_scale = 0.7f;  // crop scale drawn from [crop_min_scale, 1]
  float flip_prob = 0.5f;
  // strong: photometric only, applied on top of the weak view
  float blur_prob = 0.5f;
  float blur_sigma_min = 0.1f;
  float blur_sigma_max = 1.5f;
  float jitter_prob = 0.8f;
  float jitter_min = 0.6f;
  float jitter_max = 1.4f;
  float grayscale_prob = 0.2f;
  float cutout_prob = 0.5f;
  int cutout_min_count = 1;
  int cutout_max_count = 3;
  float cutout_min_frac = 0.15f;
  float cutout_max_frac = 0.30f;

  void validate() const;
  static Params disabled();  // identity pipeline
};

// Flip is applied first, then the crop window (in flipped coordinates) is
// resampled back to the canonical size.
struct GeometricRecord {
  bool flip = false;
  float crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
  int image_size = 0;
};

std::pair<scene::LabeledImage, GeometricRecord> weak_augment(const scene::LabeledImage& input,
                                                             const Params& params, Rng& rng);

scene::LabeledImage strong_augment(const scene::LabeledImage& weak, const Params& params,
                                   Rng& rng);

std::vector<scene::BoxLabel> transform_boxes(std::span<const scene::BoxLabel> boxes,
                                             const GeometricRecord& record);

struct AugmentedPair {
  scene::LabeledImage weak;
  scene::LabeledImage strong;
  GeometricRecord geometry;
};

AugmentedPair make_pair(const scene::LabeledImage& input, const Params& params, Rng& rng);

}  // namespace datforge::augment
