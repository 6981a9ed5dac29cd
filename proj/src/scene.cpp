#include "datforge/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "datforge/dten.hpp"

namespace datforge::scene {

using json = nlohmann::ordered_json;

void SceneSpec::validate() const {
  if (image_size < 8) raise(ErrorKind::argument, "scene: image_size ", image_size, " too small");
  if (oracle_patch < 1 || image_size % oracle_patch != 0)
    raise(ErrorKind::argument, "scene: image_size ", image_size,
          " not divisible by oracle patch size ", oracle_patch);
  if (class_count < 1) raise(ErrorKind::argument, "scene: class_count must be >= 1");
  if (objects_min < 0 || objects_max < objects_min)
    raise(ErrorKind::argument, "scene: bad objects_per_image range [", objects_min, ",",
          objects_max, "]");
  if (static_cast<int>(class_frequency.size()) != class_count)
    raise(ErrorKind::argument, "scene: class_frequency size ", class_frequency.size(),
          " != class_count ", class_count);
  double sum = 0;
  for (double f : class_frequency) {
    if (f < 0) raise(ErrorKind::argument, "scene: negative class frequency");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    raise(ErrorKind::argument, "scene: class_frequency sums to ", sum, ", expected 1");
  if (rare_class_mode) {
    const double half_uniform = 0.5 / class_count;
    bool has_rare = false;
    for (double f : class_frequency) has_rare = has_rare || f <= half_uniform;
    if (!has_rare)
      raise(ErrorKind::argument,
            "scene: rare_class_mode requires a class with frequency <= half uniform");
  }
}

void DomainSpec::validate() const {
  if (texture_palette < 0 || texture_palette > 2)
    raise(ErrorKind::argument, "domain: palette ", texture_palette, " out of range [0,2]");
  for (const auto& step : steps) {
    switch (step.kind) {
      case Corruption::Kind::none:
        break;
      case Corruption::Kind::fog:
        if (step.param < 0.f || step.param > 1.f)
          raise(ErrorKind::argument, "domain: fog strength ", step.param, " outside [0,1]");
        break;
      case Corruption::Kind::dim:
        if (step.param <= 0.f || step.param > 8.f)
          raise(ErrorKind::argument, "domain: dim gamma ", step.param, " outside (0,8]");
        break;
      case Corruption::Kind::hue_shift:
        if (step.param < -180.f || step.param > 180.f)
          raise(ErrorKind::argument, "domain: hue shift ", step.param, " outside [-180,180]");
        break;
      case Corruption::Kind::noise:
        if (step.param < 0.f || step.param > 0.5f)
          raise(ErrorKind::argument, "domain: noise sigma ", step.param, " outside [0,0.5]");
        break;
    }
  }
}

DomainSpec source_domain() { return DomainSpec{"source", 0, {}}; }

DomainSpec target_domain() {
  return DomainSpec{"target",
                    0,
                    {{Corruption::Kind::fog, 0.6f}, {Corruption::Kind::hue_shift, 30.f}}};
}

std::vector<DomainSpec> world_domains() {
  using K = Corruption::Kind;
  return {
      DomainSpec{"world-clean", 0, {}},
      DomainSpec{"world-fog-light", 1, {{K::fog, 0.35f}}},
      DomainSpec{"world-fog-heavy", 0, {{K::fog, 0.85f}}},
      DomainSpec{"world-hue-neg", 2, {{K::hue_shift, -35.f}}},
      DomainSpec{"world-hue-pos", 0, {{K::hue_shift, 55.f}}},
      DomainSpec{"world-dim", 1, {{K::dim, 1.8f}}},
      DomainSpec{"world-noise", 2, {{K::noise, 0.06f}}},
      DomainSpec{"world-fog-hue", 1, {{K::fog, 0.45f}, {K::hue_shift, -25.f}}},
  };
}

std::vector<std::string> default_class_names(int class_count) {
  static const std::array<const char*, 3> trio = {"disc", "slab", "wedge"};
  std::vector<std::string> names;
  for (int i = 0; i < class_count; ++i) {
    if (class_count <= 3) {
      names.emplace_back(trio[static_cast<std::size_t>(i)]);
    } else {
      names.emplace_back("class" + std::to_string(i));
    }
  }
  return names;
}

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.f;
  const float x = c * (1.f - std::abs(std::fmod(hp, 2.f) - 1.f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

struct Canvas {
  int size;
  std::vector<float> rgb;  // [3,S,S]

  float& at(int c, int y, int x) {
    return rgb[static_cast<std::size_t>((c * size + y)) * size + x];
  }
  void blend(int y, int x, const Rgb& color, float alpha) {
    if (alpha <= 0.f) return;
    at(0, y, x) = (1.f - alpha) * at(0, y, x) + alpha * color.r;
    at(1, y, x) = (1.f - alpha) * at(1, y, x) + alpha * color.g;
    at(2, y, x) = (1.f - alpha) * at(2, y, x) + alpha * color.b;
  }
};

struct Palette {
  Rgb sky, ground, accent;
};

Palette palette_colors(int id) {
  switch (id) {
    case 1:
      return {{0.58f, 0.66f, 0.60f}, {0.36f, 0.42f, 0.33f}, {0.55f, 0.52f, 0.40f}};
    case 2:
      return {{0.70f, 0.65f, 0.55f}, {0.48f, 0.40f, 0.30f}, {0.60f, 0.50f, 0.45f}};
    default:
      return {{0.55f, 0.62f, 0.70f}, {0.45f, 0.42f, 0.38f}, {0.52f, 0.50f, 0.55f}};
  }
}

float smoothstep(float e0, float e1, float x) {
  const float t = std::clamp((x - e0) / (e1 - e0), 0.f, 1.f);
  return t * t * (3.f - 2.f * t);
}

void draw_background(Canvas& canvas, int palette_id, Rng& rng) {
  const Palette pal = palette_colors(palette_id);
  const float jr = rng.uniform_f(-0.04f, 0.04f);
  const float jg = rng.uniform_f(-0.04f, 0.04f);
  const float jb = rng.uniform_f(-0.04f, 0.04f);
  const float horizon = rng.uniform_f(0.55f, 0.75f) * static_cast<float>(canvas.size);
  const float band = 0.12f * static_cast<float>(canvas.size);
  for (int y = 0; y < canvas.size; ++y) {
    const float t = smoothstep(horizon - band, horizon + band, static_cast<float>(y));
    const float shade = 1.f - 0.15f * static_cast<float>(y) / static_cast<float>(canvas.size);
    const Rgb c = {std::clamp((pal.sky.r + t * (pal.ground.r - pal.sky.r)) * shade + jr, 0.f, 1.f),
                   std::clamp((pal.sky.g + t * (pal.ground.g - pal.sky.g)) * shade + jg, 0.f, 1.f),
                   std::clamp((pal.sky.b + t * (pal.ground.b - pal.sky.b)) * shade + jb, 0.f, 1.f)};
    for (int x = 0; x < canvas.size; ++x) {
      canvas.at(0, y, x) = c.r;
      canvas.at(1, y, x) = c.g;
      canvas.at(2, y, x) = c.b;
    }
  }
  // soft low-contrast blobs as clutter
  const int blobs = 3;
  for (int i = 0; i < blobs; ++i) {
    const float cx = rng.uniform_f(0.f, static_cast<float>(canvas.size));
    const float cy = rng.uniform_f(0.f, static_cast<float>(canvas.size));
    const float radius = rng.uniform_f(8.f, 20.f);
    const float dv = rng.uniform_f(-0.10f, 0.10f);
    const Rgb c = {std::clamp(palette_colors(palette_id).accent.r + dv, 0.f, 1.f),
                   std::clamp(palette_colors(palette_id).accent.g + dv, 0.f, 1.f),
                   std::clamp(palette_colors(palette_id).accent.b + dv, 0.f, 1.f)};
    const int y0 = std::max(0, static_cast<int>(cy - radius));
    const int y1 = std::min(canvas.size - 1, static_cast<int>(cy + radius));
    const int x0 = std::max(0, static_cast<int>(cx - radius));
    const int x1 = std::min(canvas.size - 1, static_cast<int>(cx + radius));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const float dx = static_cast<float>(x) + 0.5f - cx;
        const float dy = static_cast<float>(y) + 0.5f - cy;
        const float d = std::sqrt(dx * dx + dy * dy) / radius;
        if (d < 1.f) canvas.blend(y, x, c, 0.12f * (1.f - d * d));
      }
    }
  }
}

struct ShapeParams {
  int class_id;
  float cx, cy;
  float ext_x, ext_y;  // half extents of the tight box
  Rgb color_a, color_b;
  float stripe_period;
};

// Signed containment test per class archetype; 2x2 subsample coverage.
bool inside_shape(const ShapeParams& p, float x, float y) {
  const float dx = x - p.cx;
  const float dy = y - p.cy;
  switch (p.class_id) {
    case 0: {  // disc
      const float r = p.ext_x;
      return dx * dx + dy * dy <= r * r;
    }
    case 1:  // slab
      return std::abs(dx) <= p.ext_x && std::abs(dy) <= p.ext_y;
    default: {  // wedge: apex-up isoceles triangle
      if (dy < -p.ext_y || dy > p.ext_y) return false;
      const float t = (dy + p.ext_y) / (2.f * p.ext_y);  // 0 at apex, 1 at base
      return std::abs(dx) <= p.ext_x * t;
    }
  }
}

Rgb shape_color(const ShapeParams& p, float x, float y) {
  const float dx = x - p.cx;
  const float dy = y - p.cy;
  switch (p.class_id) {
    case 0: {
      const float d = std::sqrt(dx * dx + dy * dy);
      const bool ring = d >= 0.55f * p.ext_x && d <= 0.78f * p.ext_x;
      return ring ? p.color_b : p.color_a;
    }
    case 1: {
      const int band = static_cast<int>(std::floor((dx + dy) / p.stripe_period));
      return (band % 2 == 0) ? p.color_a : p.color_b;
    }
    default: {
      return dy > 0.25f * p.ext_y ? p.color_b : p.color_a;
    }
  }
}

ShapeParams sample_shape(int class_id, const SceneSpec& spec, Rng& rng) {
  ShapeParams p;
  p.class_id = class_id;
  float hue, sat, val;
  switch (class_id) {
    case 0: {
      const float r = rng.uniform_f(5.f, 12.f);
      p.ext_x = p.ext_y = r;
      hue = rng.uniform_f(0.96f, 1.04f);
      break;
    }
    case 1: {
      p.ext_x = rng.uniform_f(5.f, 12.f);
      p.ext_y = std::clamp(p.ext_x * rng.uniform_f(0.7f, 1.4f), 4.f, 12.f);
      hue = rng.uniform_f(0.55f, 0.63f);
      break;
    }
    default: {
      p.ext_x = rng.uniform_f(6.f, 12.f);
      p.ext_y = std::clamp(p.ext_x * rng.uniform_f(0.8f, 1.1f), 5.f, 12.f);
      hue = rng.uniform_f(0.28f, 0.34f);
      break;
    }
  }
  sat = rng.uniform_f(0.60f, 0.85f);
  val = rng.uniform_f(0.70f, 0.95f);
  p.color_a = hsv_to_rgb(hue, sat, val);
  p.color_b = hsv_to_rgb(hue + 0.03f, sat, val * 0.55f);
  p.stripe_period = rng.uniform_f(3.f, 6.f);
  const float margin_x = p.ext_x + 1.f;
  const float margin_y = p.ext_y + 1.f;
  p.cx = rng.uniform_f(margin_x, static_cast<float>(spec.image_size) - margin_x);
  p.cy = rng.uniform_f(margin_y, static_cast<float>(spec.image_size) - margin_y);
  return p;
}

void draw_shape(Canvas& canvas, const ShapeParams& p) {
  const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.ext_y - 1)));
  const int y1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(p.cy + p.ext_y + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.ext_x - 1)));
  const int x1 = std::min(canvas.size - 1, static_cast<int>(std::ceil(p.cx + p.ext_x + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (float sy : {0.25f, 0.75f})
        for (float sx : {0.25f, 0.75f})
          if (inside_shape(p, static_cast<float>(x) + sx, static_cast<float>(y) + sy)) ++hits;
      if (hits == 0) continue;
      const Rgb c = shape_color(p, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f);
      canvas.blend(y, x, c, static_cast<float>(hits) / 4.f);
    }
  }
}

int sample_class(const SceneSpec& spec, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (int c = 0; c < spec.class_count; ++c) {
    acc += spec.class_frequency[static_cast<std::size_t>(c)];
    if (u < acc) return c;
  }
  return spec.class_count - 1;
}

}  // namespace

LabeledImage render_scene(const SceneSpec& spec, Rng& rng, int texture_palette) {
  spec.validate();
  const int S = spec.image_size;
  Canvas canvas{S, std::vector<float>(static_cast<std::size_t>(3) * S * S, 0.f)};
  draw_background(canvas, texture_palette, rng);

  LabeledImage out;
  const int count =
      static_cast<int>(rng.uniform_int(spec.objects_min, spec.objects_max));
  std::vector<std::pair<float, float>> centers;
  for (int i = 0; i < count; ++i) {
    const int cls = sample_class(spec, rng);
    ShapeParams p = sample_shape(cls, spec, rng);
    // keep object centers apart so no object is fully buried
    bool placed = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      bool clear = true;
      for (auto [ox, oy] : centers) {
        const float dx = p.cx - ox, dy = p.cy - oy;
        if (dx * dx + dy * dy < 36.f) {
          clear = false;
          break;
        }
      }
      if (clear) {
        placed = true;
        break;
      }
      const float margin_x = p.ext_x + 1.f, margin_y = p.ext_y + 1.f;
      p.cx = rng.uniform_f(margin_x, static_cast<float>(S) - margin_x);
      p.cy = rng.uniform_f(margin_y, static_cast<float>(S) - margin_y);
    }
    if (!placed) continue;
    centers.emplace_back(p.cx, p.cy);
    draw_shape(canvas, p);
    BoxLabel box;
    box.class_id = p.class_id;
    box.x_min = std::max(0.f, p.cx - p.ext_x);
    box.y_min = std::max(0.f, p.cy - p.ext_y);
    box.x_max = std::min(static_cast<float>(S), p.cx + p.ext_x);
    box.y_max = std::min(static_cast<float>(S), p.cy + p.ext_y);
    out.boxes.push_back(box);
  }
  out.image = numerics::Tensor<float>::from({3, S, S}, std::move(canvas.rgb));
  return out;
}

LabeledImage apply_domain(const LabeledImage& input, const DomainSpec& domain, Rng& rng) {
  domain.validate();
  const int S = input.image.dim(1);
  LabeledImage out;
  out.boxes = input.boxes;
  std::vector<float> px(input.image.values().begin(), input.image.values().end());
  const std::size_t plane = static_cast<std::size_t>(S) * S;

  for (const auto& step : domain.steps) {
    switch (step.kind) {
      case Corruption::Kind::none:
        break;
      case Corruption::Kind::fog: {
        const float cx = 0.5f * static_cast<float>(S);
        const float cy = 0.5f * static_cast<float>(S);
        const float half_diag = std::sqrt(cx * cx + cy * cy);
        for (int y = 0; y < S; ++y) {
          for (int x = 0; x < S; ++x) {
            const float dx = static_cast<float>(x) + 0.5f - cx;
            const float dy = static_cast<float>(y) + 0.5f - cy;
            const float depth = 0.15f + 0.85f * std::sqrt(dx * dx + dy * dy) / half_diag;
            const float a = step.param * std::min(depth, 1.f);
            for (int c = 0; c < 3; ++c) {
              float& v = px[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * S + x];
              v = (1.f - a) * v + a;
            }
          }
        }
        break;
      }
      case Corruption::Kind::dim:
        for (auto& v : px) v = std::pow(std::max(v, 0.f), step.param);
        break;
      case Corruption::Kind::hue_shift: {
        const float theta = step.param * std::numbers::pi_v<float> / 180.f;
        const float c = std::cos(theta), s = std::sin(theta);
        const float oc = (1.f - c) / 3.f;
        const float sq = s / std::sqrt(3.f);
        const float m[3][3] = {{c + oc, oc - sq, oc + sq},
                               {oc + sq, c + oc, oc - sq},
                               {oc - sq, oc + sq, c + oc}};
        for (std::size_t p = 0; p < plane; ++p) {
          const float r = px[p], g = px[plane + p], b = px[2 * plane + p];
          px[p] = std::clamp(m[0][0] * r + m[0][1] * g + m[0][2] * b, 0.f, 1.f);
          px[plane + p] = std::clamp(m[1][0] * r + m[1][1] * g + m[1][2] * b, 0.f, 1.f);
          px[2 * plane + p] = std::clamp(m[2][0] * r + m[2][1] * g + m[2][2] * b, 0.f, 1.f);
        }
        break;
      }
      case Corruption::Kind::noise:
        for (auto& v : px) v = std::clamp(v + rng.normal_f(0.f, step.param), 0.f, 1.f);
        break;
    }
  }
  out.image = numerics::Tensor<float>::from({3, S, S}, std::move(px));
  return out;
}

namespace {

json domain_to_json(const DomainSpec& d) {
  json steps = json::array();
  for (const auto& s : d.steps) {
    const char* kind = "none";
    switch (s.kind) {
      case Corruption::Kind::none: kind = "none"; break;
      case Corruption::Kind::fog: kind = "fog"; break;
      case Corruption::Kind::dim: kind = "dim"; break;
      case Corruption::Kind::hue_shift: kind = "hue_shift"; break;
      case Corruption::Kind::noise: kind = "noise"; break;
    }
    steps.push_back({{"kind", kind}, {"param", static_cast<double>(s.param)}});
  }
  return {{"name", d.name}, {"palette", d.texture_palette}, {"steps", steps}};
}

DomainSpec domain_from_json(const json& j) {
  DomainSpec d;
  d.name = j.at("name").get<std::string>();
  d.texture_palette = j.at("palette").get<int>();
  for (const auto& s : j.at("steps")) {
    Corruption c;
    const std::string kind = s.at("kind").get<std::string>();
    if (kind == "none") c.kind = Corruption::Kind::none;
    else if (kind == "fog") c.kind = Corruption::Kind::fog;
    else if (kind == "dim") c.kind = Corruption::Kind::dim;
    else if (kind == "hue_shift") c.kind = Corruption::Kind::hue_shift;
    else if (kind == "noise") c.kind = Corruption::Kind::noise;
    else raise(ErrorKind::format, "unknown corruption kind '", kind, "'");
    c.param = static_cast<float>(s.at("param").get<double>());
    d.steps.push_back(c);
  }
  return d;
}

std::string image_file_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.dten", index);
  return buf;
}

}  // namespace

DatasetManifest generate_dataset(const SceneSpec& spec, const DomainSpec& domain, int count,
                                 const std::string& split,
                                 const std::filesystem::path& out_dir) {
  spec.validate();
  domain.validate();
  if (count < 0) raise(ErrorKind::argument, "generate_dataset: negative count");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) raise(ErrorKind::io, "cannot create dataset directory ", out_dir.string());

  DatasetManifest manifest;
  manifest.name = domain.name + "-" + split;
  manifest.image_size = spec.image_size;
  manifest.classes = default_class_names(spec.class_count);
  manifest.domain = domain;
  manifest.count = count;
  manifest.seed = spec.seed;
  manifest.per_class_instances.assign(static_cast<std::size_t>(spec.class_count), 0);

  json labels;
  labels["images"] = json::array();
  for (int i = 0; i < count; ++i) {
    Rng rng(seed_mix(spec.seed, static_cast<std::uint64_t>(i)));
    LabeledImage scene = render_scene(spec, rng, domain.texture_palette);
    LabeledImage img = apply_domain(scene, domain, rng);
    const std::string file = image_file_name(i);
    numerics::save_dten_file(out_dir / "images" / file, img.image);
    json boxes = json::array();
    for (const auto& b : img.boxes) {
      manifest.per_class_instances[static_cast<std::size_t>(b.class_id)]++;
      boxes.push_back({{"class_id", b.class_id},
                       {"x_min", static_cast<double>(b.x_min)},
                       {"y_min", static_cast<double>(b.y_min)},
                       {"x_max", static_cast<double>(b.x_max)},
                       {"y_max", static_cast<double>(b.y_max)}});
    }
    labels["images"].push_back({{"id", i}, {"file", file}, {"boxes", boxes}});
  }

  {
    std::ofstream out(out_dir / "labels.json");
    if (!out) raise(ErrorKind::io, "cannot write ", (out_dir / "labels.json").string());
    out << labels.dump(2) << "\n";
  }
  {
    json meta = {{"name", manifest.name},
                 {"image_size", manifest.image_size},
                 {"classes", manifest.classes},
                 {"domain", domain_to_json(domain)},
                 {"count", count},
                 {"seed", manifest.seed}};
    std::ofstream out(out_dir / "meta.json");
    if (!out) raise(ErrorKind::io, "cannot write ", (out_dir / "meta.json").string());
    out << meta.dump(2) << "\n";
  }
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto read_json = [](const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::io, "cannot open ", path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      raise(ErrorKind::format, "malformed JSON in ", path.string(), ": ", e.what());
    }
    return j;
  };

  Dataset ds;
  const json meta = read_json(dir / "meta.json");
  ds.manifest.name = meta.at("name").get<std::string>();
  ds.manifest.image_size = meta.at("image_size").get<int>();
  ds.manifest.classes = meta.at("classes").get<std::vector<std::string>>();
  ds.manifest.domain = domain_from_json(meta.at("domain"));
  ds.manifest.count = meta.at("count").get<int>();
  ds.manifest.seed = meta.at("seed").get<std::uint64_t>();
  ds.manifest.per_class_instances.assign(ds.manifest.classes.size(), 0);

  const json labels = read_json(dir / "labels.json");
  const auto& entries = labels.at("images");
  if (static_cast<int>(entries.size()) != ds.manifest.count)
    raise(ErrorKind::format, "dataset ", dir.string(), ": labels.json has ", entries.size(),
          " entries, meta.json declares ", ds.manifest.count);

  int expected_id = 0;
  for (const auto& entry : entries) {
    const int id = entry.at("id").get<int>();
    if (id != expected_id)
      raise(ErrorKind::format, "dataset ", dir.string(), ": unexpected image id ", id,
            " (expected ", expected_id, ")");
    ++expected_id;
    const std::string file = entry.at("file").get<std::string>();
    const auto path = dir / "images" / file;
    if (!std::filesystem::exists(path))
      raise(ErrorKind::format, "dataset ", dir.string(), ": labels.json references missing image ",
            file);
    LabeledImage img;
    img.image = numerics::load_dten_file<float>(path);
    if (img.image.rank() != 3 || img.image.dim(0) != 3 ||
        img.image.dim(1) != ds.manifest.image_size || img.image.dim(2) != ds.manifest.image_size)
      raise(ErrorKind::format, "dataset image ", file, " has shape ",
            numerics::shape_str(img.image.shape()));
    for (const auto& jb : entry.at("boxes")) {
      BoxLabel b;
      b.class_id = jb.at("class_id").get<int>();
      b.x_min = static_cast<float>(jb.at("x_min").get<double>());
      b.y_min = static_cast<float>(jb.at("y_min").get<double>());
      b.x_max = static_cast<float>(jb.at("x_max").get<double>());
      b.y_max = static_cast<float>(jb.at("y_max").get<double>());
      if (b.class_id < 0 || b.class_id >= static_cast<int>(ds.manifest.classes.size()))
        raise(ErrorKind::format, "dataset box in ", file, " has class id ", b.class_id,
              " outside [0,", ds.manifest.classes.size(), ")");
      if (!(b.x_min >= 0 && b.x_min < b.x_max &&
            b.x_max <= static_cast<float>(ds.manifest.image_size) && b.y_min >= 0 &&
            b.y_min < b.y_max && b.y_max <= static_cast<float>(ds.manifest.image_size)))
        raise(ErrorKind::format, "dataset box in ", file, " violates bounds");
      ds.manifest.per_class_instances[static_cast<std::size_t>(b.class_id)]++;
      img.boxes.push_back(b);
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

std::vector<int> patch_class_map(const std::vector<BoxLabel>& boxes, int image_size,
                                 int patch_size, int class_count) {
  const int grid = image_size / patch_size;
  std::vector<int> labels(static_cast<std::size_t>(grid) * grid, class_count);
  std::vector<float> best_area(static_cast<std::size_t>(grid) * grid,
                               std::numeric_limits<float>::max());
  for (const auto& b : boxes) {
    const float area = b.area();
    for (int py = 0; py < grid; ++py) {
      const float cy = (static_cast<float>(py) + 0.5f) * static_cast<float>(patch_size);
      if (cy < b.y_min || cy >= b.y_max) continue;
      for (int px = 0; px < grid; ++px) {
        const float cx = (static_cast<float>(px) + 0.5f) * static_cast<float>(patch_size);
        if (cx < b.x_min || cx >= b.x_max) continue;
        const std::size_t idx = static_cast<std::size_t>(py) * grid + px;
        if (area < best_area[idx]) {
          best_area[idx] = area;
          labels[idx] = b.class_id;
        }
      }
    }
  }
  return labels;
}

}  // namespace datforge::scene
