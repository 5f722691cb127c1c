#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fssd/eval.hpp"
#include "fssd/postprocess.hpp"
#include "fssd/rng.hpp"
#include "oracles.hpp"

using namespace fssd;

namespace {

Box random_box(Rng& rng) {
  const double x0 = rng.uniform(0.0, 0.7), y0 = rng.uniform(0.0, 0.7);
  return {x0, y0, x0 + rng.uniform(0.05, 0.3), y0 + rng.uniform(0.05, 0.3)};
}

}  // namespace

TEST_CASE("iou: identical 1, disjoint 0, hand case 1/3") {
  Box a{0.1, 0.1, 0.3, 0.3};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {0.5, 0.5, 0.7, 0.7}) == 0.0);
  // (0,0,2,2) vs (1,0,3,2) on a 10x10 canvas: inter 2, union 6
  Box u{0.0, 0.0, 0.2, 0.2}, v{0.1, 0.0, 0.3, 0.2};
  CHECK(iou(u, v) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // degenerate boxes have IoU 0
  CHECK(iou({0.2, 0.2, 0.2, 0.4}, a) == 0.0);
}

TEST_CASE("nms: single box kept, disjoint boxes all kept") {
  CHECK(nms({{0, 0, 1, 1}}, {0.9}, 0.5, 10) == std::vector<int>{0});
  auto kept = nms({{0, 0, 0.2, 0.2}, {0.5, 0.5, 0.7, 0.7}}, {0.3, 0.8}, 0.1, 10);
  CHECK(kept == std::vector<int>{1, 0});
  CHECK(nms({}, {}, 0.5, 10).empty());
}

TEST_CASE("nms: 1000 random 200-box cases equal the brute-force oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 200;
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(random_box(rng));
      scores.push_back(rng.next_double());
    }
    const double thr = rng.uniform(0.2, 0.7);
    const int top_k = 1 + static_cast<int>(rng.next_u64() % n);
    auto kept = nms(boxes, scores, thr, top_k);

    std::vector<oracle::Box> oboxes;
    for (const auto& b : boxes) oboxes.push_back({b.x0, b.y0, b.x1, b.y1});
    auto expect = oracle::nms(oboxes, scores, thr, top_k);
    REQUIRE(kept.size() == expect.size());
    for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i] == expect[i]);
  }
}

TEST_CASE("nms: kept scores non-increasing; idempotent on its own output") {
  Rng rng(7);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) {
    boxes.push_back(random_box(rng));
    scores.push_back(rng.next_double());
  }
  auto kept = nms(boxes, scores, 0.45, 100);
  for (std::size_t i = 1; i < kept.size(); ++i) CHECK(scores[kept[i - 1]] >= scores[kept[i]]);

  std::vector<Box> kept_boxes;
  std::vector<double> kept_scores;
  for (int idx : kept) {
    kept_boxes.push_back(boxes[idx]);
    kept_scores.push_back(scores[idx]);
  }
  auto again = nms(kept_boxes, kept_scores, 0.45, 100);
  REQUIRE(again.size() == kept.size());
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i] == static_cast<int>(i));
}

TEST_CASE("assemble_detections: background-only logits give nothing; a saturated prior "
          "reproduces itself") {
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({2, 1}, pcfg));
  const int P = priors.total();
  const int classes = 4;
  PostprocessConfig cfg;

  Tensor loc = Tensor::zeros({P, 4, 1, 1});
  Tensor conf = Tensor::zeros({P, classes, 1, 1});
  for (int p = 0; p < P; ++p) conf.data_mut()[p * classes] = 50.0;
  CHECK(assemble_detections(loc, conf, priors, pcfg.variances, cfg).empty());

  conf.data_mut()[3 * classes] = 0.0;
  conf.data_mut()[3 * classes + 2] = 100.0;
  auto dets = assemble_detections(loc, conf, priors, pcfg.variances, cfg);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].label == 2);
  CHECK(dets[0].score == doctest::Approx(1.0).epsilon(1e-10));
  Box expect = priors.boxes[3].corner();
  expect.x0 = std::clamp(expect.x0, 0.0, 1.0);
  expect.y0 = std::clamp(expect.y0, 0.0, 1.0);
  expect.x1 = std::clamp(expect.x1, 0.0, 1.0);
  expect.y1 = std::clamp(expect.y1, 0.0, 1.0);
  CHECK(dets[0].box.x0 == doctest::Approx(expect.x0).epsilon(1e-12));
  CHECK(dets[0].box.y1 == doctest::Approx(expect.y1).epsilon(1e-12));
}

TEST_CASE("assemble_detections: random fixture equals the composed oracle") {
  Rng rng(99);
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({3, 2}, pcfg));
  const int P = priors.total();
  const int classes = 3;
  PostprocessConfig cfg;
  cfg.conf_threshold = 0.05;
  cfg.nms_iou = 0.45;

  Tensor loc = Tensor::uniform({P, 4, 1, 1}, rng, -1.0, 1.0);
  Tensor conf = Tensor::uniform({P, classes, 1, 1}, rng, -2.0, 2.0);
  auto dets = assemble_detections(loc, conf, priors, pcfg.variances, cfg);

  // oracle: softmax -> threshold -> decode -> brute NMS, per class, then merge
  struct Cand {
    int label;
    double score;
    Box box;
    int prior;
  };
  std::vector<Cand> expect;
  for (int c = 1; c < classes; ++c) {
    std::vector<oracle::Box> boxes;
    std::vector<double> scores;
    std::vector<int> prior_of;
    for (int p = 0; p < P; ++p) {
      const double* row = conf.data().data() + p * classes;
      double m = std::max({row[0], row[1], row[2]});
      double z = 0.0;
      for (int k = 0; k < classes; ++k) z += std::exp(row[k] - m);
      const double s = std::exp(row[c] - m) / z;
      if (s < cfg.conf_threshold) continue;
      const double* t = loc.data().data() + p * 4;
      Box b = decode_box({t[0], t[1], t[2], t[3]}, priors.boxes[p], pcfg.variances);
      boxes.push_back({b.x0, b.y0, b.x1, b.y1});
      scores.push_back(s);
      prior_of.push_back(p);
    }
    for (int idx : oracle::nms(boxes, scores, cfg.nms_iou, cfg.top_k_per_class))
      expect.push_back({c, scores[idx],
                        Box{boxes[idx].x0, boxes[idx].y0, boxes[idx].x1, boxes[idx].y1},
                        prior_of[idx]});
  }
  std::stable_sort(expect.begin(), expect.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.label != b.label) return a.label < b.label;
    return a.prior < b.prior;
  });
  if (static_cast<int>(expect.size()) > cfg.max_total) expect.resize(cfg.max_total);

  REQUIRE(dets.size() == expect.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(dets[i].label == expect[i].label);
    CHECK(dets[i].score == doctest::Approx(expect[i].score).epsilon(1e-12));
    CHECK(dets[i].box.x0 == doctest::Approx(expect[i].box.x0).epsilon(1e-12));
  }
}

TEST_CASE("assemble_detections: raising the threshold never adds detections") {
  Rng rng(123);
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({3}, pcfg));
  const int P = priors.total();
  Tensor loc = Tensor::uniform({P, 4, 1, 1}, rng, -1, 1);
  Tensor conf = Tensor::uniform({P, 3, 1, 1}, rng, -2, 2);
  std::size_t prev = SIZE_MAX;
  for (double thr : {0.01, 0.05, 0.2, 0.5, 0.9}) {
    PostprocessConfig cfg;
    cfg.conf_threshold = thr;
    auto dets = assemble_detections(loc, conf, priors, pcfg.variances, cfg);
    CHECK(dets.size() <= prev);
    prev = dets.size();
  }
}

TEST_CASE("voc_ap: perfect detector gives AP 1, empty detector gives 0") {
  Rng rng(31);
  std::vector<EvalRecord> records(4);
  for (auto& rec : records) {
    for (int g = 0; g < 3; ++g) {
      Box b = random_box(rng);
      rec.ground_truths.push_back({b, 1});
      rec.detections.push_back({1, 0.9, b});
    }
  }
  auto perfect = voc_ap(records, 1, 0.5, ApInterpolation::kAllPoint);
  CHECK(perfect.ap == doctest::Approx(1.0).epsilon(1e-12));
  auto eleven = voc_ap(records, 1, 0.5, ApInterpolation::kElevenPoint);
  CHECK(eleven.ap == doctest::Approx(1.0).epsilon(1e-12));

  for (auto& rec : records) rec.detections.clear();
  CHECK(voc_ap(records, 1, 0.5, ApInterpolation::kAllPoint).ap == 0.0);
  CHECK(voc_ap(records, 1, 0.5, ApInterpolation::kElevenPoint).ap == 0.0);
}

TEST_CASE("voc_ap: the TP,FP,TP,TP,FP fixture integrates to 5/6") {
  // 3 GTs; five detections ranked by score with the stated TP/FP pattern
  std::vector<EvalRecord> records(1);
  auto& rec = records[0];
  rec.ground_truths = {{{0.0, 0.0, 0.1, 0.1}, 1},
                       {{0.3, 0.3, 0.4, 0.4}, 1},
                       {{0.6, 0.6, 0.7, 0.7}, 1}};
  rec.detections = {{1, 0.95, {0.0, 0.0, 0.1, 0.1}},    // TP
                    {1, 0.90, {0.8, 0.8, 0.9, 0.9}},    // FP (no GT there)
                    {1, 0.85, {0.3, 0.3, 0.4, 0.4}},    // TP
                    {1, 0.80, {0.6, 0.6, 0.7, 0.7}},    // TP
                    {1, 0.75, {0.0, 0.0, 0.1, 0.1}}};   // FP (duplicate)
  auto ap = voc_ap(records, 1, 0.5, ApInterpolation::kAllPoint);
  // envelope: 1 up to recall 1/3, then 3/4 up to recall 1 -> 1/3 + (2/3)(3/4) = 5/6
  CHECK(ap.ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(ap.ap ==
        doctest::Approx(oracle::average_precision({true, false, true, true, false}, 3))
            .epsilon(1e-12));
}

TEST_CASE("voc_ap: AP invariant under monotone score rescaling; no GT claimed twice") {
  Rng rng(67);
  std::vector<EvalRecord> records(6);
  for (auto& rec : records) {
    const int gts = static_cast<int>(rng.next_u64() % 4);
    for (int g = 0; g < gts; ++g) rec.ground_truths.push_back({random_box(rng), 1});
    const int dets = static_cast<int>(rng.next_u64() % 6);
    for (int d = 0; d < dets; ++d)
      rec.detections.push_back({1, rng.next_double(), random_box(rng)});
  }
  bool any_gt = false;
  for (const auto& rec : records) any_gt = any_gt || !rec.ground_truths.empty();
  if (!any_gt) records[0].ground_truths.push_back({random_box(rng), 1});

  auto base = voc_ap(records, 1, 0.5, ApInterpolation::kAllPoint);
  auto rescaled_records = records;
  for (auto& rec : rescaled_records)
    for (auto& d : rec.detections) d.score = 0.1 + 0.5 * d.score;  // strictly monotone
  auto rescaled = voc_ap(rescaled_records, 1, 0.5, ApInterpolation::kAllPoint);
  CHECK(base.ap == doctest::Approx(rescaled.ap).epsilon(1e-12));
  CHECK(base.ap >= 0.0);
  CHECK(base.ap <= 1.0);
}

TEST_CASE("mean_ap: averages defined classes, skips GT-free ones, errors when empty") {
  std::map<int, ClassAp> per_class;
  per_class[1] = {1.0, 5, 5};
  per_class[2] = {0.0, 3, 0};
  CHECK(mean_ap(per_class) == doctest::Approx(0.5).epsilon(1e-15));

  per_class[3] = ClassAp{};  // undefined: no GT
  CHECK(mean_ap(per_class) == doctest::Approx(0.5).epsilon(1e-15));

  std::map<int, ClassAp> single;
  single[1] = {0.7, 2, 4};
  CHECK(mean_ap(single) == doctest::Approx(0.7).epsilon(1e-15));

  std::map<int, ClassAp> none;
  none[1] = ClassAp{};
  CHECK_THROWS(mean_ap(none));
}

TEST_CASE("size buckets: small-only GTs score in the small bucket, ignored in large") {
  std::vector<EvalRecord> records(1);
  auto& rec = records[0];
  // 15 px at image_size 300 -> small; 90 px -> large
  Box small_box{0.1, 0.1, 0.1 + 15.0 / 300, 0.1 + 15.0 / 300};
  Box large_box{0.5, 0.5, 0.5 + 90.0 / 300, 0.5 + 90.0 / 300};
  rec.ground_truths = {{small_box, 1}, {large_box, 1}};
  rec.detections = {{1, 0.9, small_box}, {1, 0.8, large_box}};

  auto small_eval =
      evaluate_size_bucket(records, 2, 0.5, ApInterpolation::kAllPoint, 300, 32, true);
  auto large_eval =
      evaluate_size_bucket(records, 2, 0.5, ApInterpolation::kAllPoint, 300, 32, false);
  CHECK(small_eval.per_class[1].num_gt == 1);
  CHECK(large_eval.per_class[1].num_gt == 1);
  CHECK(small_eval.map == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(large_eval.map == doctest::Approx(1.0).epsilon(1e-12));
}
