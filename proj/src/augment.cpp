#include "datforge/augment.hpp"

#include <algorithm>
#include <cmath>

namespace datforge::augment {

void Params::validate() const {
  if (crop_min_scale <= 0.f || crop_min_scale > 1.f)
    raise(ErrorKind::argument, "augment: crop_min_scale ", crop_min_scale, " outside (0,1]");
  auto prob = [](float p, const char* name) {
    if (p < 0.f || p > 1.f) raise(ErrorKind::argument, "augment: ", name, " outside [0,1]");
  };
  prob(flip_prob, "flip_prob");
  prob(blur_prob, "blur_prob");
  prob(jitter_prob, "jitter_prob");
  prob(grayscale_prob, "grayscale_prob");
  prob(cutout_prob, "cutout_prob");
  if (cutout_min_count < 1 || cutout_max_count < cutout_min_count)
    raise(ErrorKind::argument, "augment: bad cutout count range");
  if (cutout_min_frac <= 0.f || cutout_max_frac < cutout_min_frac || cutout_max_frac > 0.9f)
    raise(ErrorKind::argument, "augment: bad cutout size range");
}

Params Params::disabled() {
  Params p;
  p.crop_min_scale = 1.f;
  p.flip_prob = 0.f;
  p.blur_prob = 0.f;
  p.jitter_prob = 0.f;
  p.grayscale_prob = 0.f;
  p.cutout_prob = 0.f;
  return p;
}

namespace {

// Half-pixel-convention bilinear resample of the crop window (x0,y0,w,h) back
// to size S. Matches the pure affine map used for boxes.
numerics::Tensor<float> resample_crop(const numerics::Tensor<float>& image, float x0, float y0,
                                      float w, float h, int out_size) {
  const int H = image.dim(1), W = image.dim(2);
  std::vector<float> out(static_cast<std::size_t>(3) * out_size * out_size);
  const float sx = w / static_cast<float>(out_size);
  const float sy = h / static_cast<float>(out_size);
  for (int oy = 0; oy < out_size; ++oy) {
    const float fy = y0 + (static_cast<float>(oy) + 0.5f) * sy - 0.5f;
    const int y_lo = std::clamp(static_cast<int>(std::floor(fy)), 0, H - 1);
    const int y_hi = std::min(y_lo + 1, H - 1);
    const float wy = std::clamp(fy - static_cast<float>(y_lo), 0.f, 1.f);
    for (int ox = 0; ox < out_size; ++ox) {
      const float fx = x0 + (static_cast<float>(ox) + 0.5f) * sx - 0.5f;
      const int x_lo = std::clamp(static_cast<int>(std::floor(fx)), 0, W - 1);
      const int x_hi = std::min(x_lo + 1, W - 1);
      const float wx = std::clamp(fx - static_cast<float>(x_lo), 0.f, 1.f);
      for (int c = 0; c < 3; ++c) {
        const float* plane = image.data() + static_cast<std::size_t>(c) * H * W;
        const float v00 = plane[y_lo * W + x_lo], v01 = plane[y_lo * W + x_hi];
        const float v10 = plane[y_hi * W + x_lo], v11 = plane[y_hi * W + x_hi];
        out[(static_cast<std::size_t>(c) * out_size + oy) * out_size + ox] =
            (1.f - wy) * ((1.f - wx) * v00 + wx * v01) + wy * ((1.f - wx) * v10 + wx * v11);
      }
    }
  }
  return numerics::Tensor<float>::from({3, out_size, out_size}, std::move(out));
}

numerics::Tensor<float> flip_horizontal(const numerics::Tensor<float>& image) {
  const int H = image.dim(1), W = image.dim(2);
  std::vector<float> out(static_cast<std::size_t>(image.size()));
  for (int c = 0; c < 3; ++c) {
    const float* src = image.data() + static_cast<std::size_t>(c) * H * W;
    float* dst = out.data() + static_cast<std::size_t>(c) * H * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) dst[y * W + x] = src[y * W + (W - 1 - x)];
  }
  return numerics::Tensor<float>::from(image.shape(), std::move(out));
}

void gaussian_blur(std::vector<float>& px, int S, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.f * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : kernel) v /= sum;

  std::vector<float> tmp(px.size());
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (int c = 0; c < 3; ++c) {
    float* p = px.data() + static_cast<std::size_t>(c) * plane;
    float* t = tmp.data() + static_cast<std::size_t>(c) * plane;
    for (int y = 0; y < S; ++y) {  // horizontal
      for (int x = 0; x < S; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, S - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * p[y * S + xx];
        }
        t[y * S + x] = acc;
      }
    }
    for (int y = 0; y < S; ++y) {  // vertical
      for (int x = 0; x < S; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, S - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * t[yy * S + x];
        }
        p[y * S + x] = acc;
      }
    }
  }
}

float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace

std::vector<scene::BoxLabel> transform_boxes(std::span<const scene::BoxLabel> boxes,
                                             const GeometricRecord& rec) {
  std::vector<scene::BoxLabel> out;
  const float S = static_cast<float>(rec.image_size);
  const float sx = S / rec.crop_w;
  const float sy = S / rec.crop_h;
  for (const auto& b : boxes) {
    scene::BoxLabel t = b;
    if (rec.flip) {
      const float x0 = t.x_min, x1 = t.x_max;
      t.x_min = S - x1;
      t.x_max = S - x0;
    }
    t.x_min = (t.x_min - rec.crop_x) * sx;
    t.x_max = (t.x_max - rec.crop_x) * sx;
    t.y_min = (t.y_min - rec.crop_y) * sy;
    t.y_max = (t.y_max - rec.crop_y) * sy;
    t.x_min = std::clamp(t.x_min, 0.f, S);
    t.x_max = std::clamp(t.x_max, 0.f, S);
    t.y_min = std::clamp(t.y_min, 0.f, S);
    t.y_max = std::clamp(t.y_max, 0.f, S);
    if (t.x_max - t.x_min >= 1.f && t.y_max - t.y_min >= 1.f) out.push_back(t);
  }
  return out;
}

std::pair<scene::LabeledImage, GeometricRecord> weak_augment(const scene::LabeledImage& input,
                                                             const Params& params, Rng& rng) {
  params.validate();
  const int S = input.image.dim(1);
  GeometricRecord rec;
  rec.image_size = S;
  rec.flip = rng.bernoulli(params.flip_prob);
  const float scale = rng.uniform_f(params.crop_min_scale, 1.f);
  rec.crop_w = scale * static_cast<float>(S);
  rec.crop_h = scale * static_cast<float>(S);
  rec.crop_x = rng.uniform_f(0.f, static_cast<float>(S) - rec.crop_w);
  rec.crop_y = rng.uniform_f(0.f, static_cast<float>(S) - rec.crop_h);

  scene::LabeledImage out;
  const bool identity_crop = rec.crop_w == static_cast<float>(S) &&
                             rec.crop_h == static_cast<float>(S) && rec.crop_x == 0.f &&
                             rec.crop_y == 0.f;
  numerics::Tensor<float> base = rec.flip ? flip_horizontal(input.image) : input.image.clone();
  out.image = identity_crop ? std::move(base)
                            : resample_crop(base, rec.crop_x, rec.crop_y, rec.crop_w, rec.crop_h, S);
  out.boxes = transform_boxes(input.boxes, rec);
  return {std::move(out), rec};
}

scene::LabeledImage strong_augment(const scene::LabeledImage& weak, const Params& params,
                                   Rng& rng) {
  params.validate();
  const int S = weak.image.dim(1);
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  scene::LabeledImage out;
  out.boxes = weak.boxes;
  std::vector<float> px(weak.image.values().begin(), weak.image.values().end());

  if (params.blur_prob > 0.f && rng.bernoulli(params.blur_prob)) {
    gaussian_blur(px, S, rng.uniform_f(params.blur_sigma_min, params.blur_sigma_max));
  }
  if (params.jitter_prob > 0.f && rng.bernoulli(params.jitter_prob)) {
    const float fb = rng.uniform_f(params.jitter_min, params.jitter_max);
    const float fc = rng.uniform_f(params.jitter_min, params.jitter_max);
    const float fs = rng.uniform_f(params.jitter_min, params.jitter_max);
    float mean = 0.f;
    for (std::size_t p = 0; p < plane; ++p)
      mean += luminance(px[p], px[plane + p], px[2 * plane + p]);
    mean /= static_cast<float>(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      float r = px[p] * fb, g = px[plane + p] * fb, b = px[2 * plane + p] * fb;
      r = (r - mean) * fc + mean;
      g = (g - mean) * fc + mean;
      b = (b - mean) * fc + mean;
      const float gray = luminance(r, g, b);
      px[p] = std::clamp(gray + (r - gray) * fs, 0.f, 1.f);
      px[plane + p] = std::clamp(gray + (g - gray) * fs, 0.f, 1.f);
      px[2 * plane + p] = std::clamp(gray + (b - gray) * fs, 0.f, 1.f);
    }
  }
  if (params.grayscale_prob > 0.f && rng.bernoulli(params.grayscale_prob)) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float gray = luminance(px[p], px[plane + p], px[2 * plane + p]);
      px[p] = px[plane + p] = px[2 * plane + p] = gray;
    }
  }
  if (params.cutout_prob > 0.f && rng.bernoulli(params.cutout_prob)) {
    const int rects =
        static_cast<int>(rng.uniform_int(params.cutout_min_count, params.cutout_max_count));
    for (int r = 0; r < rects; ++r) {
      const int cw = std::max(1, static_cast<int>(std::round(
                                     rng.uniform_f(params.cutout_min_frac, params.cutout_max_frac) *
                                     static_cast<float>(S))));
      const int ch = std::max(1, static_cast<int>(std::round(
                                     rng.uniform_f(params.cutout_min_frac, params.cutout_max_frac) *
                                     static_cast<float>(S))));
      const int x0 = static_cast<int>(rng.uniform_int(S - cw + 1));
      const int y0 = static_cast<int>(rng.uniform_int(S - ch + 1));
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + ch; ++y)
          std::fill(px.begin() + static_cast<std::ptrdiff_t>(c * plane + static_cast<std::size_t>(y) * S + x0),
                    px.begin() + static_cast<std::ptrdiff_t>(c * plane + static_cast<std::size_t>(y) * S + x0 + cw),
                    0.f);
    }
  }
  out.image = numerics::Tensor<float>::from({3, S, S}, std::move(px));
  return out;
}

AugmentedPair make_pair(const scene::LabeledImage& input, const Params& params, Rng& rng) {
  AugmentedPair pair;
  auto [weak, rec] = weak_augment(input, params, rng);
  pair.weak = std::move(weak);
  pair.geometry = rec;
  pair.strong = strong_augment(pair.weak, params, rng);
  return pair;
}

}  // namespace datforge::augment
