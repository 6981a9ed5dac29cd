#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "datforge/augment.hpp"

using namespace datforge;
using namespace datforge::augment;

namespace {

scene::LabeledImage sample_image(std::uint64_t seed = 11) {
  scene::SceneSpec spec;
  spec.image_size = 64;
  spec.seed = seed;
  Rng rng(seed);
  return scene::render_scene(spec, rng);
}

}  // namespace

TEST_CASE("flip applied twice restores the original") {
  auto img = sample_image();
  Params p = Params::disabled();
  p.flip_prob = 1.f;
  Rng r1(3);
  auto [once, rec1] = weak_augment(img, p, r1);
  CHECK(rec1.flip);
  Rng r2(3);
  auto [twice, rec2] = weak_augment(once, p, r2);
  CHECK(twice.image.content_hash() == img.image.content_hash());
  REQUIRE(twice.boxes.size() == img.boxes.size());
  for (std::size_t i = 0; i < img.boxes.size(); ++i) {
    CHECK(twice.boxes[i].x_min == doctest::Approx(img.boxes[i].x_min));
    CHECK(twice.boxes[i].x_max == doctest::Approx(img.boxes[i].x_max));
  }
}

TEST_CASE("full crop without flip is the identity") {
  auto img = sample_image(21);
  Params p = Params::disabled();
  Rng rng(5);
  auto [weak, rec] = weak_augment(img, p, rng);
  CHECK_FALSE(rec.flip);
  CHECK(weak.image.content_hash() == img.image.content_hash());
  REQUIRE(weak.boxes.size() == img.boxes.size());
  for (std::size_t i = 0; i < img.boxes.size(); ++i)
    CHECK(weak.boxes[i].x_min == img.boxes[i].x_min);
}

TEST_CASE("flip mirrors boxes in width-64 image") {
  std::vector<scene::BoxLabel> boxes = {{0, 10.f, 0.f, 20.f, 8.f}};
  GeometricRecord rec;
  rec.flip = true;
  rec.crop_x = rec.crop_y = 0.f;
  rec.crop_w = rec.crop_h = 64.f;
  rec.image_size = 64;
  auto out = transform_boxes(boxes, rec);
  REQUIRE(out.size() == 1);
  CHECK(out[0].x_min == doctest::Approx(44.f));
  CHECK(out[0].y_min == doctest::Approx(0.f));
  CHECK(out[0].x_max == doctest::Approx(54.f));
  CHECK(out[0].y_max == doctest::Approx(8.f));
}

TEST_CASE("crop transform shifts and scales contained boxes") {
  std::vector<scene::BoxLabel> boxes = {{1, 20.f, 24.f, 30.f, 32.f}};
  GeometricRecord rec;
  rec.flip = false;
  rec.crop_x = 16.f;
  rec.crop_y = 16.f;
  rec.crop_w = 32.f;
  rec.crop_h = 32.f;
  rec.image_size = 64;
  auto out = transform_boxes(boxes, rec);
  REQUIRE(out.size() == 1);
  CHECK(out[0].x_min == doctest::Approx((20.f - 16.f) * 2.f));
  CHECK(out[0].y_min == doctest::Approx((24.f - 16.f) * 2.f));
  CHECK(out[0].x_max == doctest::Approx((30.f - 16.f) * 2.f));
  CHECK(out[0].y_max == doctest::Approx((32.f - 16.f) * 2.f));

  // a box fully outside the crop disappears
  std::vector<scene::BoxLabel> outside = {{1, 0.f, 0.f, 10.f, 10.f}};
  CHECK(transform_boxes(outside, rec).empty());

  // identity record leaves boxes unchanged
  GeometricRecord ident;
  ident.crop_w = ident.crop_h = 64.f;
  ident.image_size = 64;
  auto same = transform_boxes(boxes, ident);
  REQUIRE(same.size() == 1);
  CHECK(same[0].x_min == boxes[0].x_min);
}

TEST_CASE("disabled strong pipeline is the identity") {
  auto img = sample_image(31);
  Rng rng(7);
  auto out = strong_augment(img, Params::disabled(), rng);
  CHECK(out.image.content_hash() == img.image.content_hash());
}

TEST_CASE("grayscale forces equal channels") {
  auto img = sample_image(41);
  Params p = Params::disabled();
  p.grayscale_prob = 1.f;
  Rng rng(9);
  auto out = strong_augment(img, p, rng);
  const int S = out.image.dim(1);
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK(out.image.data()[i] == out.image.data()[plane + i]);
    CHECK(out.image.data()[i] == out.image.data()[2 * plane + i]);
  }
}

TEST_CASE("single cutout zeroes exactly its area") {
  // strictly positive image
  scene::LabeledImage img;
  img.image = numerics::Tensor<float>::full({3, 64, 64}, 0.5f);
  Params p = Params::disabled();
  p.cutout_prob = 1.f;
  p.cutout_min_count = p.cutout_max_count = 1;
  Rng rng(13);
  auto out = strong_augment(img, p, rng);
  const std::size_t plane = 64 * 64;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < plane; ++i)
    if (out.image.data()[i] == 0.f) ++zeros;
  // count matches an integer rectangle within the configured size range
  const int lo = static_cast<int>(std::round(0.15f * 64));
  const int hi = static_cast<int>(std::round(0.30f * 64));
  CHECK(zeros >= static_cast<std::size_t>(lo * lo));
  CHECK(zeros <= static_cast<std::size_t>(hi * hi));
  // all three channels zeroed identically
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK((out.image.data()[i] == 0.f) == (out.image.data()[plane + i] == 0.f));
    CHECK((out.image.data()[i] == 0.f) == (out.image.data()[2 * plane + i] == 0.f));
  }
}

TEST_CASE("weak and strong views share geometry and stay in range") {
  Params p;  // defaults: everything enabled
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    auto img = sample_image(100 + static_cast<std::uint64_t>(trial));
    auto pair = make_pair(img, p, rng);
    REQUIRE(pair.weak.boxes.size() == pair.strong.boxes.size());
    for (std::size_t i = 0; i < pair.weak.boxes.size(); ++i) {
      CHECK(pair.weak.boxes[i].class_id == pair.strong.boxes[i].class_id);
      CHECK(pair.weak.boxes[i].x_min == pair.strong.boxes[i].x_min);
      CHECK(pair.weak.boxes[i].y_min == pair.strong.boxes[i].y_min);
      CHECK(pair.weak.boxes[i].x_max == pair.strong.boxes[i].x_max);
      CHECK(pair.weak.boxes[i].y_max == pair.strong.boxes[i].y_max);
    }
    for (std::int64_t i = 0; i < pair.strong.image.size(); ++i) {
      CHECK(pair.strong.image.data()[i] >= 0.f);
      CHECK(pair.strong.image.data()[i] <= 1.f);
      CHECK(pair.weak.image.data()[i] >= 0.f);
      CHECK(pair.weak.image.data()[i] <= 1.f);
    }
  }
}

TEST_CASE("augmentation is deterministic in the rng state") {
  auto img = sample_image(55);
  Params p;
  Rng a(42), b(42);
  auto pa = make_pair(img, p, a);
  auto pb = make_pair(img, p, b);
  CHECK(pa.weak.image.content_hash() == pb.weak.image.content_hash());
  CHECK(pa.strong.image.content_hash() == pb.strong.image.content_hash());
  CHECK(pa.geometry.crop_x == pb.geometry.crop_x);
}
