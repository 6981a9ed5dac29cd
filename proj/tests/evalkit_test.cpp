#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "datforge/evalkit.hpp"
#include "datforge/rng.hpp"
#include "support/brute_force_ap.hpp"
#include "support/xml_lint.hpp"

using namespace datforge;
using namespace datforge::evalkit;
using detector::Detection;
using scene::BoxLabel;
namespace fs = std::filesystem;

namespace {

Detection det(int cls, float x0, float y0, float x1, float y1, float conf) {
  return Detection{{cls, x0, y0, x1, y1}, conf};
}

EvalInstance random_instance(Rng& rng, int class_count) {
  EvalInstance inst;
  const int gts = static_cast<int>(rng.uniform_int(0, 5));
  for (int i = 0; i < gts; ++i) {
    BoxLabel b;
    b.class_id = static_cast<int>(rng.uniform_int(class_count));
    const float w = rng.uniform_f(4.f, 20.f), h = rng.uniform_f(4.f, 20.f);
    b.x_min = rng.uniform_f(0.f, 44.f);
    b.y_min = rng.uniform_f(0.f, 44.f);
    b.x_max = b.x_min + w;
    b.y_max = b.y_min + h;
    inst.ground_truth.push_back(b);
  }
  const int dets = static_cast<int>(rng.uniform_int(0, 5));
  for (int i = 0; i < dets; ++i) {
    // near a ground truth half the time, random otherwise
    BoxLabel b;
    if (!inst.ground_truth.empty() && rng.bernoulli(0.5)) {
      const auto& g =
          inst.ground_truth[static_cast<std::size_t>(rng.uniform_int(
              static_cast<std::int64_t>(inst.ground_truth.size())))];
      b = g;
      b.x_min += rng.uniform_f(-3.f, 3.f);
      b.y_min += rng.uniform_f(-3.f, 3.f);
      b.x_max += rng.uniform_f(-3.f, 3.f);
      b.y_max += rng.uniform_f(-3.f, 3.f);
      if (b.x_max <= b.x_min) b.x_max = b.x_min + 1.f;
      if (b.y_max <= b.y_min) b.y_max = b.y_min + 1.f;
      b.class_id = rng.bernoulli(0.8)
                       ? g.class_id
                       : static_cast<int>(rng.uniform_int(class_count));
    } else {
      b.class_id = static_cast<int>(rng.uniform_int(class_count));
      const float w = rng.uniform_f(4.f, 20.f), h = rng.uniform_f(4.f, 20.f);
      b.x_min = rng.uniform_f(0.f, 44.f);
      b.y_min = rng.uniform_f(0.f, 44.f);
      b.x_max = b.x_min + w;
      b.y_max = b.y_min + h;
    }
    inst.detections.push_back({b, rng.uniform_f(0.05f, 1.f)});
  }
  return inst;
}

}  // namespace

TEST_CASE("iou hand values") {
  BoxLabel a{0, 0.f, 0.f, 2.f, 2.f};
  CHECK(iou(a, a) == doctest::Approx(1.0f));
  BoxLabel far{0, 10.f, 10.f, 12.f, 12.f};
  CHECK(iou(a, far) == doctest::Approx(0.0f));
  BoxLabel b{0, 1.f, 1.f, 3.f, 3.f};
  CHECK(iou(a, b) == doctest::Approx(1.f / 7.f));
}

TEST_CASE("greedy matching rules") {
  std::vector<BoxLabel> gts = {{0, 10.f, 10.f, 20.f, 20.f}};
  {
    std::vector<Detection> dets = {det(0, 10.f, 10.f, 20.f, 20.f, 0.9f)};
    auto m = match_detections(dets, gts, 0.5f);
    CHECK(m.detections[0].matched_gt == 0);
    CHECK(m.gt_covered[0]);
  }
  {
    // two detections on one gt: the confident one wins, the other is FP
    std::vector<Detection> dets = {det(0, 10.f, 10.f, 20.f, 20.f, 0.6f),
                                   det(0, 11.f, 11.f, 21.f, 21.f, 0.8f)};
    auto m = match_detections(dets, gts, 0.5f);
    CHECK(m.detections[1].matched_gt == 0);
    CHECK(m.detections[0].matched_gt == -1);
  }
  {
    // IoU below threshold is an FP even when unique:
    // box (10,10,16.9,16.9) inside the 10x10 gt gives 6.9^2/100 = 0.476
    std::vector<Detection> dets = {det(0, 10.f, 10.f, 16.9f, 16.9f, 0.9f)};
    const float v = iou(dets[0].box, gts[0]);
    CHECK(v < 0.5f);
    CHECK(v > 0.4f);
    auto m = match_detections(dets, gts, 0.5f);
    CHECK(m.detections[0].matched_gt == -1);
  }
  {
    // wrong class never matches
    std::vector<Detection> dets = {det(1, 10.f, 10.f, 20.f, 20.f, 0.9f)};
    auto m = match_detections(dets, gts, 0.5f);
    CHECK(m.detections[0].matched_gt == -1);
  }
}

TEST_CASE("average precision hand cases") {
  {
    // one gt, one perfect detection
    EvalInstance inst;
    inst.ground_truth = {{0, 10.f, 10.f, 20.f, 20.f}};
    inst.detections = {det(0, 10.f, 10.f, 20.f, 20.f, 0.9f)};
    std::vector<EvalInstance> v{inst};
    CHECK(*average_precision(v, 0, 0.5f) == doctest::Approx(1.0));
  }
  {
    // ranked [FP 0.9, TP 0.8]: precision at full recall is 1/2
    EvalInstance inst;
    inst.ground_truth = {{0, 10.f, 10.f, 20.f, 20.f}};
    inst.detections = {det(0, 40.f, 40.f, 50.f, 50.f, 0.9f),
                       det(0, 10.f, 10.f, 20.f, 20.f, 0.8f)};
    std::vector<EvalInstance> v{inst};
    CHECK(*average_precision(v, 0, 0.5f) == doctest::Approx(0.5));
    CHECK(*testsupport::brute_force_ap(v, 0, 0.5f) == doctest::Approx(0.5));
  }
  {
    // two gts, only one found: precision 1 up to recall 0.5
    EvalInstance inst;
    inst.ground_truth = {{0, 10.f, 10.f, 20.f, 20.f}, {0, 40.f, 40.f, 50.f, 50.f}};
    inst.detections = {det(0, 10.f, 10.f, 20.f, 20.f, 0.9f)};
    std::vector<EvalInstance> v{inst};
    CHECK(*average_precision(v, 0, 0.5f) == doctest::Approx(0.5));
  }
  {
    // undefined vs zero AP
    EvalInstance inst;  // nothing at all
    std::vector<EvalInstance> v{inst};
    CHECK_FALSE(average_precision(v, 0, 0.5f).has_value());
    inst.detections = {det(0, 1.f, 1.f, 5.f, 5.f, 0.7f)};
    std::vector<EvalInstance> v2{inst};
    CHECK(*average_precision(v2, 0, 0.5f) == doctest::Approx(0.0));
  }
}

TEST_CASE("map50 mean and exclusion rule") {
  EvalInstance inst;
  inst.ground_truth = {{0, 10.f, 10.f, 20.f, 20.f}, {1, 30.f, 30.f, 40.f, 40.f}};
  inst.detections = {det(0, 10.f, 10.f, 20.f, 20.f, 0.9f),
                     det(1, 0.f, 0.f, 5.f, 5.f, 0.8f)};
  std::vector<EvalInstance> v{inst};
  auto result = map50(v, 3);
  CHECK(*result.per_class_ap[0] == doctest::Approx(1.0));
  CHECK(*result.per_class_ap[1] == doctest::Approx(0.0));
  CHECK_FALSE(result.per_class_ap[2].has_value());  // class 2 absent everywhere
  CHECK(result.defined_classes == 2);
  CHECK(result.map == doctest::Approx(0.5));
}

TEST_CASE("evaluator equals brute-force oracle on random instances") {
  Rng rng(2029);
  int compared = 0;
  for (int trial = 0; trial < 250; ++trial) {
    std::vector<EvalInstance> instances;
    const int count = static_cast<int>(rng.uniform_int(1, 4));
    for (int i = 0; i < count; ++i) instances.push_back(random_instance(rng, 3));
    for (int c = 0; c < 3; ++c) {
      auto fast = average_precision(instances, c, 0.5f);
      auto slow = testsupport::brute_force_ap(instances, c, 0.5f);
      REQUIRE(fast.has_value() == slow.has_value());
      if (fast.has_value()) {
        CHECK(std::abs(*fast - *slow) < 1e-9);
        ++compared;
      }
    }
  }
  CHECK(compared > 300);
}

TEST_CASE("AP invariances") {
  Rng rng(31337);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<EvalInstance> instances = {random_instance(rng, 2), random_instance(rng, 2)};
    auto base = average_precision(instances, 0, 0.5f);
    // strictly monotone transform of confidences preserves AP
    auto transformed = instances;
    for (auto& inst : transformed)
      for (auto& d : inst.detections)
        d.confidence = 1.f / (1.f + std::exp(-4.f * d.confidence));  // monotone
    auto after = average_precision(transformed, 0, 0.5f);
    REQUIRE(base.has_value() == after.has_value());
    if (base.has_value()) CHECK(*base == doctest::Approx(*after).epsilon(1e-12));

    // appending a low-confidence FP never increases AP
    auto appended = instances;
    appended[0].detections.push_back(det(0, 0.f, 0.f, 3.f, 3.f, 0.001f));
    auto worse = average_precision(appended, 0, 0.5f);
    if (base.has_value()) CHECK(*worse <= *base + 1e-12);
    if (base.has_value()) CHECK(*worse >= 0.0);
    if (base.has_value()) CHECK(*base <= 1.0);
  }
}

TEST_CASE("audit bookkeeping") {
  std::vector<std::vector<BoxLabel>> gt(1);
  gt[0] = {{2, 10.f, 10.f, 20.f, 20.f}};  // one truck-like rare instance

  {
    plabel::PseudoLabels empty;
    empty.images.resize(1);
    auto rows = audit_pseudo_labels(empty, gt, 0.5f, 0.8f, 3);
    for (const auto& r : rows) CHECK(r.ratio == 0.0);
  }
  {
    // pseudo-labels identical to gt at high confidence
    plabel::PseudoLabels pl;
    pl.images = {{det(2, 10.f, 10.f, 20.f, 20.f, 0.9f)}};
    auto rows = audit_pseudo_labels(pl, gt, 0.5f, 0.8f, 3);
    CHECK(rows[2].ratio == doctest::Approx(1.0));
    CHECK(rows[2].correct == 1);
    CHECK(rows[2].wrong_class == 0);
    CHECK(rows[2].unmatched == 0);
  }
  {
    // a wrong-class label on the rare gt counts under the label's class
    plabel::PseudoLabels pl;
    pl.images = {{det(1, 10.f, 10.f, 20.f, 20.f, 0.9f)}};
    auto rows = audit_pseudo_labels(pl, gt, 0.5f, 0.8f, 3);
    CHECK(rows[2].ratio == 0.0);
    CHECK(rows[2].confident == 0);
    CHECK(rows[1].wrong_class == 1);
    CHECK(rows[1].confident == 1);
    CHECK(rows[1].gt_count == 0);
  }
  {
    // low-confidence labels are filtered by delta
    plabel::PseudoLabels pl;
    pl.images = {{det(2, 10.f, 10.f, 20.f, 20.f, 0.5f)}};
    auto rows = audit_pseudo_labels(pl, gt, 0.5f, 0.8f, 3);
    CHECK(rows[2].confident == 0);
  }
  // counts reconcile on random data
  Rng rng(8);
  std::vector<std::vector<BoxLabel>> gts;
  plabel::PseudoLabels pl;
  for (int i = 0; i < 30; ++i) {
    auto inst = random_instance(rng, 3);
    gts.push_back(inst.ground_truth);
    pl.images.push_back(inst.detections);
  }
  auto rows = audit_pseudo_labels(pl, gts, 0.5f, 0.3f, 3);
  for (const auto& r : rows)
    CHECK(r.confident == r.correct + r.wrong_class + r.unmatched);
}

TEST_CASE("report emission is deterministic and well-formed") {
  auto dir = fs::temp_directory_path() / "datforge-evalkit-report";
  fs::remove_all(dir);

  ReportInputs inputs;
  inputs.class_names = {"disc", "slab", "wedge"};
  inputs.metrics = {{"run-a", 2000, "disc", 0.85, 0.7}, {"run-a", 2000, "slab", 0.75, 0.7},
                    {"run-a", 2000, "wedge", std::nullopt, 0.7}};
  inputs.audit = {{0, 100, 90, 80, 5, 5, 0.9}, {1, 80, 60, 50, 5, 5, 0.75},
                  {2, 10, 2, 1, 1, 0, 0.2}};
  emit_report(inputs, dir);

  auto read = [](const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string metrics1 = read(dir / "metrics.csv");
  CHECK(metrics1.starts_with("run_id,iter,class,ap50,map50\n"));
  CHECK(metrics1.find("run-a,2000,disc,0.85,0.7") != std::string::npos);
  CHECK(metrics1.find("run-a,2000,wedge,,0.7") != std::string::npos);

  emit_report(inputs, dir);  // rerun: byte-identical
  CHECK(read(dir / "metrics.csv") == metrics1);

  CHECK(testsupport::xml_file_well_formed((dir / "metrics.svg").string()));
  CHECK(testsupport::xml_file_well_formed((dir / "audit.svg").string()));

  // empty metric set still yields a header-only CSV
  ReportInputs empty;
  empty.class_names = inputs.class_names;
  auto dir2 = fs::temp_directory_path() / "datforge-evalkit-empty";
  fs::remove_all(dir2);
  emit_report(empty, dir2);
  CHECK(read(dir2 / "metrics.csv") == "run_id,iter,class,ap50,map50\n");
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("pseudo-label file round trip") {
  auto path = fs::temp_directory_path() / "datforge-pl.json";
  plabel::PseudoLabels pl;
  pl.delta = 0.8f;
  pl.labeller = "labeller-large";
  pl.images = {{det(0, 1.25f, 2.5f, 10.75f, 12.f, 0.9375f)}, {}};
  plabel::save(path, pl);
  auto back = plabel::load(path);
  CHECK(back.delta == 0.8f);
  CHECK(back.labeller == "labeller-large");
  REQUIRE(back.images.size() == 2);
  REQUIRE(back.images[0].size() == 1);
  CHECK(back.images[0][0].box.x_min == 1.25f);
  CHECK(back.images[0][0].confidence == 0.9375f);
  CHECK(back.images[1].empty());
  CHECK_THROWS_WITH_AS(back.for_image(5), doctest::Contains("5"), Error);
  fs::remove(path);
}
