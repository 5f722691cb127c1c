#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fssd/backbone.hpp"
#include "fssd/fusion.hpp"
#include "fssd/gradcheck.hpp"
#include "fssd/multibox.hpp"
#include "fssd/rng.hpp"
#include "oracles.hpp"

using namespace fssd;

namespace {

BackboneConfig tiny_backbone(int input_size = 80) {
  BackboneConfig cfg;
  cfg.input_size = input_size;
  cfg.stage_channels = {2, 3, 4, 5};
  cfg.extra_channels = 5;
  return cfg;
}

FusionConfig tiny_fusion() {
  FusionConfig cfg;
  cfg.projection_channels = {4};
  cfg.pyramid_channels = {6, 6, 6, 4};
  return cfg;
}

std::map<std::string, int> tap_channels_of(const Backbone& backbone) {
  std::map<std::string, int> out;
  for (const auto& [name, idx] : backbone.config().taps) out[name] = backbone.tap_channels(name);
  return out;
}

}  // namespace

TEST_CASE("backbone: default 300 preset emits taps at 75, 38, 19, 10") {
  BackboneConfig cfg;
  cfg.stage_channels = {2, 2, 2, 2};
  cfg.extra_channels = 2;
  Backbone backbone(cfg, 1);
  Tensor image = Tensor::zeros({1, 3, 300, 300});
  FeatureMapSet taps = backbone.forward(image);
  REQUIRE(taps.entries.size() == 4);
  CHECK(taps.entries[0].name == "conv3_3");
  CHECK(taps.entries[0].spatial_size == 75);
  CHECK(taps.entries[1].spatial_size == 38);
  CHECK(taps.entries[2].spatial_size == 19);
  CHECK(taps.entries[3].spatial_size == 10);
  for (const auto& e : taps.entries)
    for (double v : e.map.data()) CHECK(std::isfinite(v));
}

TEST_CASE("backbone: 512 preset puts the conv4_3 analog at 64") {
  BackboneConfig cfg;
  cfg.input_size = 512;
  cfg.stage_channels = {2, 2, 2, 2};
  cfg.extra_channels = 2;
  Backbone backbone(cfg, 1);
  FeatureMapSet taps = backbone.forward(Tensor::zeros({1, 3, 512, 512}));
  CHECK(taps.find("conv4_3").spatial_size == 64);
  CHECK(taps.find("conv7_2").spatial_size == 16);
}

TEST_CASE("backbone: same seed twice gives bitwise-identical parameters") {
  Backbone a(tiny_backbone(), 42), b(tiny_backbone(), 42);
  std::vector<ParamRef> pa, pb;
  a.collect_params(pa);
  b.collect_params(pb);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    REQUIRE(pa[i].tensor.numel() == pb[i].tensor.numel());
    for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j)
      CHECK(pa[i].tensor.data()[j] == pb[i].tensor.data()[j]);
  }
}

TEST_CASE("backbone: tap sizes follow the ceil-halving chain for sizes in [64, 600]") {
  for (int input : {64, 81, 100, 150, 224, 300, 320, 512, 600}) {
    BackboneConfig cfg = tiny_backbone(input);
    Backbone backbone(cfg, 3);
    FeatureMapSet taps = backbone.forward(Tensor::zeros({1, 3, input, input}));
    int size = input;
    std::vector<int> chain;
    for (int s = 0; s < cfg.stage_count(); ++s) {
      size = (size + 1) / 2;
      chain.push_back(size);
    }
    CHECK(taps.find("conv3_3").spatial_size == chain[1]);
    CHECK(taps.find("conv4_3").spatial_size == chain[2]);
    CHECK(taps.find("fc_7").spatial_size == chain[3]);
    CHECK(taps.find("conv7_2").spatial_size == chain[4]);
  }
}

TEST_CASE("backbone: widths do not change spatial sizes; bad inputs rejected") {
  BackboneConfig wide = tiny_backbone();
  for (auto& c : wide.stage_channels) c *= 2;
  Backbone a(tiny_backbone(), 1), b(wide, 1);
  auto ta = a.forward(Tensor::zeros({1, 3, 80, 80}));
  auto tb = b.forward(Tensor::zeros({1, 3, 80, 80}));
  for (std::size_t i = 0; i < ta.entries.size(); ++i)
    CHECK(ta.entries[i].spatial_size == tb.entries[i].spatial_size);

  CHECK_THROWS(a.forward(Tensor::zeros({1, 3, 64, 64})));
  BackboneConfig bad = tiny_backbone();
  bad.stage_channels[1] = 0;
  CHECK_THROWS(Backbone(bad, 1));
  BackboneConfig bad_tap = tiny_backbone();
  bad_tap.taps.push_back({"extra", 9});
  CHECK_THROWS(Backbone(bad_tap, 1));
}

TEST_CASE("fusion: default config on the paper-width backbone gives 768x38x38 + SSD sizes") {
  // paper-faithful widths; forward at batch 1 is cheap enough for a shape test
  Backbone backbone(BackboneConfig::vgg_like(300), 5);
  FusionConfig cfg;  // defaults: conv4_3/fc_7/conv7_2, 256 channels, concat, BN, variant B
  FusionModule fusion(cfg, tap_channels_of(backbone), 7);
  FeatureMapSet taps = backbone.forward(Tensor::zeros({1, 3, 300, 300}));

  const int base = taps.find("conv4_3").spatial_size;
  std::vector<Tensor> transformed;
  for (std::size_t i = 0; i < cfg.source_layers.size(); ++i)
    transformed.push_back(fusion.transform_source(taps.find(cfg.source_layers[i]).map, base, i));
  for (const auto& t : transformed) {
    CHECK(t.shape().c == 256);
    CHECK(t.shape().h == 38);
  }
  Tensor fused = fusion.fuse(transformed, true);
  CHECK(fused.shape().c == 768);
  CHECK(fused.shape().h == 38);

  PyramidFeatures pyr = fusion.generate_pyramid(fused);
  CHECK(pyr.sizes() == std::vector<int>{38, 19, 10, 5, 3, 1});
  CHECK(pyr.channels() == std::vector<int>{512, 512, 256, 256, 256, 256});
}

TEST_CASE("fusion: element-wise sum keeps the common width, concat order matters") {
  Backbone backbone(tiny_backbone(), 2);
  auto taps = backbone.forward(Tensor::zeros({1, 3, 80, 80}));

  FusionConfig sum_cfg = tiny_fusion();
  sum_cfg.fusion_op = FusionOp::kElementSum;
  FusionModule sum_fusion(sum_cfg, tap_channels_of(backbone), 3);
  PyramidFeatures pyr = sum_fusion.forward(taps, true);
  CHECK(pyr.maps[0].shape().c == 6);

  // concat channel blocks follow source order
  FusionConfig c1 = tiny_fusion();
  c1.source_layers = {"conv4_3", "fc_7", "conv7_2"};
  FusionConfig c2 = tiny_fusion();
  c2.source_layers = {"fc_7", "conv4_3", "conv7_2"};
  c2.base_layer = "conv4_3";
  FusionModule f1(c1, tap_channels_of(backbone), 11);
  FusionModule f2(c2, tap_channels_of(backbone), 11);
  CHECK(f1.config().fused_channels() == 12);
  CHECK(f2.config().fused_channels() == 12);

  FusionConfig bad = tiny_fusion();
  bad.fusion_op = FusionOp::kElementSum;
  bad.projection_channels = {4, 5, 4};
  CHECK_THROWS(FusionModule(bad, tap_channels_of(backbone), 1));
}

TEST_CASE("fusion: pyramid variants A, B, C") {
  Backbone backbone(tiny_backbone(), 2);
  Rng rng(3);
  auto taps = backbone.forward(Tensor::uniform({1, 3, 80, 80}, rng, 0, 1));
  auto channels = tap_channels_of(backbone);

  FusionConfig b_cfg = tiny_fusion();
  FusionModule b(b_cfg, channels, 5);
  auto pyr_b = b.forward(taps, true);
  CHECK(pyr_b.sizes() == std::vector<int>{10, 5, 3, 1});

  FusionConfig a_cfg = tiny_fusion();
  a_cfg.pyramid_variant = PyramidVariant::kA;
  FusionModule a(a_cfg, channels, 5);
  auto pyr_a = a.forward(taps, true);
  CHECK(pyr_a.sizes() == std::vector<int>{10, 5, 3, 1});
  CHECK(pyr_a.maps[0].shape().c == a_cfg.fused_channels());  // the fused map itself

  FusionConfig c_cfg = tiny_fusion();
  c_cfg.pyramid_variant = PyramidVariant::kC;
  c_cfg.pyramid_channels = {8, 8, 6, 6};
  FusionModule c(c_cfg, channels, 5);
  auto pyr_c = c.forward(taps, true);
  CHECK(pyr_c.sizes() == std::vector<int>{10, 5, 3, 1});
  CHECK(pyr_c.channels() == std::vector<int>{8, 8, 6, 6});

  // bottleneck hidden width is half the output width: parameter-count check
  std::vector<ParamRef> params;
  c.collect_params(params, 1.0);
  for (std::size_t i = 0; i < c_cfg.pyramid_channels.size(); ++i) {
    const int out_c = c_cfg.pyramid_channels[i];
    for (const auto& p : params) {
      if (p.name == "fusion.pyramid" + std::to_string(i) + ".reduce.weight")
        CHECK(p.tensor.shape().n == out_c / 2);
      if (p.name == "fusion.pyramid" + std::to_string(i) + ".conv.weight")
        CHECK(p.tensor.shape().c == out_c / 2);
    }
  }
}

TEST_CASE("fusion: BN after concat normalizes the fused map in training mode") {
  // feed taps with healthy variance so epsilon is negligible next to it
  Rng rng(9);
  FusionConfig cfg = tiny_fusion();
  FusionModule fusion(cfg, {{"conv4_3", 3}, {"fc_7", 4}, {"conv7_2", 5}}, 5);
  FeatureMapSet taps;
  taps.entries.push_back({"conv4_3", Tensor::uniform({2, 3, 38, 38}, rng, -3, 3), 38});
  taps.entries.push_back({"fc_7", Tensor::uniform({2, 4, 19, 19}, rng, -3, 3), 19});
  taps.entries.push_back({"conv7_2", Tensor::uniform({2, 5, 10, 10}, rng, -3, 3), 10});

  const int base = 38;
  std::vector<Tensor> transformed;
  for (std::size_t i = 0; i < cfg.source_layers.size(); ++i)
    transformed.push_back(fusion.transform_source(taps.find(cfg.source_layers[i]).map, base, i));
  Tensor fused = fusion.fuse(transformed, true);

  const Shape s = fused.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int c = 0; c < s.c; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) mean += fused.data()[(n * s.c + c) * plane + i];
    mean /= s.n * plane;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        double d = fused.data()[(n * s.c + c) * plane + i] - mean;
        var += d * d;
      }
    var /= s.n * plane;
    CHECK(std::abs(mean) <= 1e-4);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("fusion: missing tap and base-not-in-sources are rejected") {
  Backbone backbone(tiny_backbone(), 2);
  FusionConfig cfg = tiny_fusion();
  cfg.source_layers = {"conv4_3", "nonexistent"};
  CHECK_THROWS(FusionModule(cfg, tap_channels_of(backbone), 1));

  FusionConfig no_base = tiny_fusion();
  no_base.source_layers = {"fc_7", "conv7_2"};
  no_base.base_layer = "conv4_3";
  CHECK_THROWS(no_base.validate());
}

TEST_CASE("fusion: gradients flow to every source map") {
  Backbone backbone(tiny_backbone(), 2);
  Rng rng(13);
  Rng check_rng(14);
  // leaf feature maps standing in for backbone taps
  Tensor conv4 = Tensor::uniform({1, 3, 10, 10}, rng, -1, 1, true);
  Tensor fc7 = Tensor::uniform({1, 4, 5, 5}, rng, -1, 1, true);
  Tensor conv72 = Tensor::uniform({1, 5, 3, 3}, rng, -1, 1, true);
  FusionConfig cfg;
  cfg.projection_channels = {3};
  cfg.pyramid_channels = {4, 4};
  FusionModule fusion(cfg, {{"conv4_3", 3}, {"fc_7", 4}, {"conv7_2", 5}}, 15);

  Tensor probe1 = Tensor::uniform({1, 4, 10, 10}, rng, -1, 1);
  Tensor probe2 = Tensor::uniform({1, 4, 5, 5}, rng, -1, 1);
  auto forward = [&] {
    FeatureMapSet taps;
    taps.entries.push_back({"conv4_3", conv4, 10});
    taps.entries.push_back({"fc_7", fc7, 5});
    taps.entries.push_back({"conv7_2", conv72, 3});
    auto pyr = fusion.forward(taps, false);  // inference BN: stats fixed across FD probes
    return ops::elementwise_add(
        {ops::weighted_sum(pyr.maps[0], probe1), ops::weighted_sum(pyr.maps[1], probe2)});
  };
  auto report = grad_check(forward, {{"conv4_3", conv4}, {"fc_7", fc7}, {"conv7_2", conv72}},
                           1e-5, check_rng, 12);
  CHECK_MESSAGE(report.passed(), "err ", report.max_rel_error, " at ", report.worst_input);
}

TEST_CASE("priors: 300 preset counts exactly 8732, 512 preset 24564") {
  PriorConfig cfg;
  auto set300 = generate_priors(make_level_specs({38, 19, 10, 5, 3, 1}, cfg));
  CHECK(set300.total() == 8732);
  CHECK(set300.level_counts == std::vector<int>{5776, 2166, 600, 150, 36, 4});

  auto set512 = generate_priors(make_level_specs({64, 32, 16, 8, 4, 2, 1}, cfg));
  CHECK(set512.total() == 24564);

  for (const auto& b : set300.boxes) {
    CHECK(b.cx > 0);
    CHECK(b.cx < 1);
    CHECK(b.cy > 0);
    CHECK(b.cy < 1);
    CHECK(b.w > 0);
    CHECK(b.h > 0);
  }
}

TEST_CASE("priors: single 1x1 level with ratios {1,2,1/2} gives 4 centered priors") {
  PriorConfig cfg;
  cfg.aspect_ratios = {{1.0, 2.0, 0.5}};
  auto set = generate_priors(make_level_specs({1}, cfg));
  REQUIRE(set.total() == 4);
  for (const auto& b : set.boxes) {
    CHECK(b.cx == 0.5);
    CHECK(b.cy == 0.5);
  }
}

TEST_CASE("encode/decode: identity, fixtures, and 1e4 round trips") {
  const std::array<double, 4> v{0.1, 0.1, 0.2, 0.2};

  PriorBox prior{0.5, 0.5, 0.2, 0.2, 0};
  auto offsets = encode_box({0.4, 0.4, 0.6, 0.6}, prior, v);
  for (double t : offsets) CHECK(t == doctest::Approx(0.0).epsilon(1e-12));

  Box same = decode_box({0, 0, 0, 0}, prior, v);
  CHECK(same.x0 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(same.y1 == doctest::Approx(0.6).epsilon(1e-12));

  // offsets (0,0, ln2/v2, 0) double the width
  Box wide = decode_box({0, 0, std::log(2.0) / v[2], 0}, prior, v);
  CHECK(wide.x1 - wide.x0 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(wide.y1 - wide.y0 == doctest::Approx(0.2).epsilon(1e-12));

  // clamped large offsets stay inside the unit square
  Box clamped = decode_box({1e6, -1e6, 1e6, 1e6}, prior, v);
  CHECK(clamped.x0 >= 0.0);
  CHECK(clamped.y0 >= 0.0);
  CHECK(clamped.x1 <= 1.0);
  CHECK(clamped.y1 <= 1.0);

  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    PriorBox p{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.02, 0.5),
               rng.uniform(0.02, 0.5), 0};
    const double x0 = rng.uniform(0.0, 0.8), y0 = rng.uniform(0.0, 0.8);
    Box gt{x0, y0, x0 + rng.uniform(0.01, 0.19), y0 + rng.uniform(0.01, 0.19)};
    Box back = decode_box(encode_box(gt, p, v), p, v);
    CHECK(std::abs(back.x0 - gt.x0) <= 1e-9);
    CHECK(std::abs(back.y0 - gt.y0) <= 1e-9);
    CHECK(std::abs(back.x1 - gt.x1) <= 1e-9);
    CHECK(std::abs(back.y1 - gt.y1) <= 1e-9);
  }
}

TEST_CASE("matching: identical prior matches at IoU 1; empty GT list has no positives") {
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({3, 1}, pcfg));
  const std::array<double, 4> v{0.1, 0.1, 0.2, 0.2};

  const PriorBox& target = priors.boxes[5];
  GroundTruth gt{target.corner(), 1};
  auto match = match_priors({gt}, priors, 0.5, v);
  CHECK(match.num_positives >= 1);
  CHECK(match.match[5] == 0);
  for (double t : match.loc_targets[5]) CHECK(t == doctest::Approx(0.0).epsilon(1e-9));

  auto empty = match_priors({}, priors, 0.5, v);
  CHECK(empty.num_positives == 0);
  for (int m : empty.match) CHECK(m == kBackground);
}

TEST_CASE("matching: 200 random cases agree with the IoU-matrix oracle") {
  Rng rng(111);
  const std::array<double, 4> v{0.1, 0.1, 0.2, 0.2};
  for (int trial = 0; trial < 200; ++trial) {
    PriorBoxSet priors;
    const int P = 50;
    for (int p = 0; p < P; ++p)
      priors.boxes.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                              rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4), 0});
    priors.level_counts = {P};
    std::vector<GroundTruth> gts;
    const int G = 1 + static_cast<int>(rng.next_u64() % 5);
    for (int g = 0; g < G; ++g) {
      const double x0 = rng.uniform(0.0, 0.7), y0 = rng.uniform(0.0, 0.7);
      gts.push_back({{x0, y0, x0 + rng.uniform(0.05, 0.3), y0 + rng.uniform(0.05, 0.3)},
                     1 + static_cast<int>(rng.next_u64() % 3)});
    }
    auto got = match_priors(gts, priors, 0.5, v);

    std::vector<oracle::Box> ogts, opriors;
    for (const auto& g : gts) ogts.push_back({g.box.x0, g.box.y0, g.box.x1, g.box.y1});
    for (const auto& p : priors.boxes) {
      Box c = p.corner();
      opriors.push_back({c.x0, c.y0, c.x1, c.y1});
    }
    auto expect = oracle::match_priors(ogts, opriors, 0.5);
    for (int p = 0; p < P; ++p) CHECK(got.match[p] == expect[p]);
  }
}

TEST_CASE("mining: ratio rule, all-positive edge, and full-sort oracle") {
  MatchResult match;
  match.match = std::vector<int>(20, kBackground);
  for (int i = 0; i < 4; ++i) match.match[i] = 0;
  match.num_positives = 4;
  std::vector<double> loss(20);
  Rng rng(5);
  for (auto& v : loss) v = rng.next_double();

  auto selected = hard_negative_mine(loss, match, 3.0);
  CHECK(selected.size() == 12);

  // equals a full sort of the background subset
  std::vector<int> backgrounds;
  for (int i = 4; i < 20; ++i) backgrounds.push_back(i);
  std::stable_sort(backgrounds.begin(), backgrounds.end(),
                   [&](int a, int b) { return loss[a] > loss[b]; });
  for (int i = 0; i < 12; ++i) CHECK(selected[i] == backgrounds[i]);

  MatchResult all_pos;
  all_pos.match = std::vector<int>(5, 0);
  all_pos.num_positives = 5;
  CHECK(hard_negative_mine(std::vector<double>(5, 1.0), all_pos, 3.0).empty());

  MatchResult no_pos;
  no_pos.match = std::vector<int>(5, kBackground);
  no_pos.num_positives = 0;
  auto one = hard_negative_mine({0.1, 0.9, 0.3, 0.9, 0.2}, no_pos, 3.0);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 1);  // highest loss, ties to the lowest index
}

TEST_CASE("multibox head: 8732 rows on the 300 geometry, zero features give zero output") {
  // head over externally supplied zero pyramid maps with paper level sizes
  std::vector<int> sizes{38, 19, 10, 5, 3, 1};
  std::vector<int> channels{8, 8, 8, 8, 8, 8};
  std::vector<int> a_per{4, 6, 6, 6, 4, 4};
  MultiboxHead head(channels, a_per, 4, 17);

  PyramidFeatures pyr;
  for (std::size_t i = 0; i < sizes.size(); ++i)
    pyr.maps.push_back(Tensor::zeros({2, channels[i], sizes[i], sizes[i]}));
  auto out = head.forward(pyr);
  CHECK(out.loc.shape() == Shape{2, 8732, 4, 1});
  CHECK(out.conf.shape() == Shape{2, 8732, 4, 1});
  for (double v : out.loc.data()) CHECK(v == 0.0);  // zero input, zero bias
  for (double v : out.conf.data()) CHECK(v == 0.0);
}

TEST_CASE("multibox head: gradients pass the finite-difference check") {
  Rng rng(19), check_rng(20);
  MultiboxHead head({3, 3}, {2, 2}, 3, 23);
  Tensor m0 = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1, true);
  Tensor m1 = Tensor::uniform({1, 3, 2, 2}, rng, -1, 1, true);
  std::vector<ParamRef> params;
  head.collect_params(params);

  Tensor probe_loc = Tensor::uniform({1, 40, 4, 1}, rng, -1, 1);
  Tensor probe_conf = Tensor::uniform({1, 40, 3, 1}, rng, -1, 1);
  auto forward = [&] {
    PyramidFeatures pyr;
    pyr.maps = {m0, m1};
    auto out = head.forward(pyr);
    return ops::elementwise_add(
        {ops::weighted_sum(out.loc, probe_loc), ops::weighted_sum(out.conf, probe_conf)});
  };
  std::vector<GradCheckInput> inputs{{"m0", m0}, {"m1", m1}};
  for (auto& p : params) inputs.push_back({p.name, p.tensor});
  auto report = grad_check(forward, inputs, 1e-3, check_rng, 8);
  CHECK_MESSAGE(report.passed(), "err ", report.max_rel_error, " at ", report.worst_input);
}

TEST_CASE("multibox loss: perfect localization and saturated confidence give zero terms") {
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({2}, pcfg));  // 2x2 cells, 4 per loc = 16
  const std::array<double, 4> v = pcfg.variances;
  const int P = priors.total();
  const int classes = 3;

  // one GT exactly equal to prior 0
  GroundTruth gt{priors.boxes[0].corner(), 1};
  auto match = match_priors({gt}, priors, 0.5, v);

  std::vector<double> loc_values(static_cast<std::size_t>(P) * 4, 0.0);
  std::vector<double> conf_values(static_cast<std::size_t>(P) * classes, 0.0);
  for (int p = 0; p < P; ++p) {
    if (match.match[p] != kBackground) {
      for (int j = 0; j < 4; ++j) loc_values[p * 4 + j] = match.loc_targets[p][j];
      conf_values[p * classes + 1] = 100.0;
    } else {
      conf_values[p * classes + 0] = 100.0;
    }
  }
  MultiboxHead::Output out;
  out.loc = Tensor::from_values({1, P, 4, 1}, loc_values, true);
  out.conf = Tensor::from_values({1, P, classes, 1}, conf_values, true);

  auto parts = multibox_loss(out, {{gt}}, priors, 0.5, 3.0, v);
  CHECK(parts.loc_loss_value == 0.0);
  CHECK(parts.conf_loss_value <= 1e-10);
  CHECK(parts.loss.data()[0] <= 1e-10);
  CHECK(parts.num_positives == match.num_positives);
}

TEST_CASE("multibox loss: 6-prior 1-GT fixture matches the composed oracle") {
  // hand-built prior set: 6 priors on one level
  PriorBoxSet priors;
  priors.boxes = {
      {0.25, 0.25, 0.3, 0.3, 0}, {0.75, 0.25, 0.3, 0.3, 0}, {0.25, 0.75, 0.3, 0.3, 0},
      {0.75, 0.75, 0.3, 0.3, 0}, {0.5, 0.5, 0.4, 0.4, 0},   {0.5, 0.5, 0.8, 0.8, 0}};
  priors.level_counts = {6};
  const std::array<double, 4> v{0.1, 0.1, 0.2, 0.2};
  const int classes = 3;

  GroundTruth gt{{0.3, 0.3, 0.7, 0.7}, 2};  // matches prior 4 well
  Rng rng(33);
  std::vector<double> loc_values(24), conf_values(18);
  for (auto& x : loc_values) x = rng.uniform(-0.5, 0.5);
  for (auto& x : conf_values) x = rng.uniform(-1.0, 1.0);
  MultiboxHead::Output out;
  out.loc = Tensor::from_values({1, 6, 4, 1}, loc_values, true);
  out.conf = Tensor::from_values({1, 6, classes, 1}, conf_values, true);

  auto parts = multibox_loss(out, {{gt}}, priors, 0.5, 3.0, v);

  // oracle: replay the documented procedure with the test-side pieces
  auto match = oracle::match_priors({{0.3, 0.3, 0.7, 0.7}},
                                    [&] {
                                      std::vector<oracle::Box> pb;
                                      for (const auto& p : priors.boxes) {
                                        Box c = p.corner();
                                        pb.push_back({c.x0, c.y0, c.x1, c.y1});
                                      }
                                      return pb;
                                    }(),
                                    0.5);
  int n_pos = 0;
  double ce_sum = 0.0, l1_sum = 0.0;
  std::vector<std::pair<double, int>> bg;
  for (int p = 0; p < 6; ++p) {
    std::vector<double> row(conf_values.begin() + p * classes,
                            conf_values.begin() + (p + 1) * classes);
    if (match[p] >= 0) {
      ++n_pos;
      ce_sum += oracle::cross_entropy_row(row, 2);
      auto t = encode_box(gt.box, priors.boxes[p], v);
      for (int j = 0; j < 4; ++j) {
        const double d = loc_values[p * 4 + j] - t[j];
        l1_sum += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
      }
    } else {
      bg.emplace_back(oracle::cross_entropy_row(row, 0), p);
    }
  }
  std::stable_sort(bg.begin(), bg.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const int want = std::min<int>(static_cast<int>(bg.size()), 3 * n_pos);
  for (int i = 0; i < want; ++i) ce_sum += bg[i].first;
  const double expect = (ce_sum + l1_sum) / std::max(n_pos, 1);

  CHECK(parts.loss.data()[0] == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("multibox loss: zero-GT image contributes a single mined negative") {
  PriorConfig pcfg;
  auto priors = generate_priors(make_level_specs({2}, pcfg));
  const int P = priors.total();
  Rng rng(44);
  MultiboxHead::Output out;
  out.loc = Tensor::uniform({1, P, 4, 1}, rng, -1, 1, true);
  out.conf = Tensor::uniform({1, P, 3, 1}, rng, -1, 1, true);
  auto parts = multibox_loss(out, {{}}, priors, 0.5, 3.0, pcfg.variances);
  CHECK(parts.num_positives == 0);
  CHECK(parts.num_negatives == 1);
  CHECK(parts.loss.data()[0] > 0.0);
  CHECK(parts.loc_loss_value == 0.0);
}
