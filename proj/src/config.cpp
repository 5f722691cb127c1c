#include "fssd/config.hpp"

#include <zlib.h>

#include <fstream>

#include "fssd/check.hpp"

namespace fssd {

using nlohmann::json;

FullConfig default_config() {
  FullConfig cfg;
  cfg.model.backbone.stage_channels = {6, 12, 24, 48};
  cfg.model.backbone.extra_channels = 48;
  cfg.model.fusion.projection_channels = {24};
  cfg.model.fusion.pyramid_channels = {48, 48, 48, 48, 48, 48};
  return cfg;
}

FullConfig paper_config(int input_size) {
  FullConfig cfg;
  cfg.model.backbone = BackboneConfig::vgg_like(input_size);
  cfg.model.fusion = FusionConfig{};
  if (input_size == 512) {
    // one more level so the chain 64,32,16,8,4,2,1 is covered
    cfg.model.fusion.pyramid_channels = {512, 512, 256, 256, 256, 256, 256};
  }
  cfg.dataset.spec.image_size = input_size;
  return cfg;
}

namespace {

std::string fusion_op_name(FusionOp op) {
  return op == FusionOp::kConcat ? "concat" : "ele-sum";
}

FusionOp fusion_op_from(const std::string& name) {
  if (name == "concat") return FusionOp::kConcat;
  if (name == "ele-sum" || name == "sum") return FusionOp::kElementSum;
  fail("config: unknown fusion_op '" + name + "'");
}

std::string variant_name(PyramidVariant v) {
  switch (v) {
    case PyramidVariant::kA: return "A";
    case PyramidVariant::kB: return "B";
    case PyramidVariant::kC: return "C";
  }
  return "B";
}

PyramidVariant variant_from(const std::string& name) {
  if (name == "A" || name == "a") return PyramidVariant::kA;
  if (name == "B" || name == "b") return PyramidVariant::kB;
  if (name == "C" || name == "c") return PyramidVariant::kC;
  fail("config: unknown pyramid_variant '" + name + "'");
}

template <typename T>
void maybe(const json& j, const char* key, T& value) {
  if (j.contains(key)) value = j.at(key).get<T>();
}

}  // namespace

json model_to_json(const DetectorConfig& model) {
  json backbone{{"input_size", model.backbone.input_size},
                {"input_channels", model.backbone.input_channels},
                {"stage_channels", model.backbone.stage_channels},
                {"extra_channels", model.backbone.extra_channels}};
  json taps = json::array();
  for (const auto& [name, idx] : model.backbone.taps) taps.push_back(json::array({name, idx}));
  backbone["taps"] = taps;

  json fusion{{"enabled", model.fusion_enabled},
              {"source_layers", model.fusion.source_layers},
              {"projection_channels", model.fusion.projection_channels},
              {"fusion_op", fusion_op_name(model.fusion.fusion_op)},
              {"normalize_after_fusion", model.fusion.normalize_after_fusion},
              {"base_layer", model.fusion.base_layer},
              {"pyramid_variant", variant_name(model.fusion.pyramid_variant)},
              {"pyramid_channels", model.fusion.pyramid_channels}};

  json priors{{"aspect_ratios", model.priors.aspect_ratios},
              {"first_scale", model.priors.first_scale},
              {"scale_min", model.priors.scale_min},
              {"scale_max", model.priors.scale_max},
              {"last_next_scale", model.priors.last_next_scale},
              {"variances", model.priors.variances}};

  return json{{"backbone", backbone},
              {"fusion", fusion},
              {"priors", priors},
              {"num_classes", model.num_classes}};
}

DetectorConfig model_from_json(const json& j) {
  DetectorConfig model = default_config().model;
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    maybe(b, "input_size", model.backbone.input_size);
    maybe(b, "input_channels", model.backbone.input_channels);
    maybe(b, "stage_channels", model.backbone.stage_channels);
    maybe(b, "extra_channels", model.backbone.extra_channels);
    if (b.contains("taps")) {
      model.backbone.taps.clear();
      for (const auto& t : b.at("taps"))
        model.backbone.taps.emplace_back(t.at(0).get<std::string>(), t.at(1).get<int>());
    }
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    maybe(f, "enabled", model.fusion_enabled);
    maybe(f, "source_layers", model.fusion.source_layers);
    if (f.contains("projection_channels")) {
      if (f.at("projection_channels").is_number())
        model.fusion.projection_channels = {f.at("projection_channels").get<int>()};
      else
        model.fusion.projection_channels =
            f.at("projection_channels").get<std::vector<int>>();
    }
    if (f.contains("fusion_op"))
      model.fusion.fusion_op = fusion_op_from(f.at("fusion_op").get<std::string>());
    maybe(f, "normalize_after_fusion", model.fusion.normalize_after_fusion);
    maybe(f, "base_layer", model.fusion.base_layer);
    if (f.contains("pyramid_variant"))
      model.fusion.pyramid_variant = variant_from(f.at("pyramid_variant").get<std::string>());
    maybe(f, "pyramid_channels", model.fusion.pyramid_channels);
  }
  if (j.contains("priors")) {
    const json& p = j.at("priors");
    maybe(p, "aspect_ratios", model.priors.aspect_ratios);
    maybe(p, "first_scale", model.priors.first_scale);
    maybe(p, "scale_min", model.priors.scale_min);
    maybe(p, "scale_max", model.priors.scale_max);
    maybe(p, "last_next_scale", model.priors.last_next_scale);
    if (p.contains("variances")) {
      auto v = p.at("variances").get<std::vector<double>>();
      FSSD_CHECK(v.size() == 4, "config: variances must have 4 entries");
      std::copy(v.begin(), v.end(), model.priors.variances.begin());
    }
  }
  maybe(j, "num_classes", model.num_classes);
  return model;
}

json to_json(const FullConfig& cfg) {
  json j = model_to_json(cfg.model);
  j["dataset"] = {{"seed", cfg.dataset.spec.seed},
                  {"image_size", cfg.dataset.spec.image_size},
                  {"num_train", cfg.dataset.num_train},
                  {"num_test", cfg.dataset.num_test},
                  {"min_objects", cfg.dataset.spec.min_objects},
                  {"max_objects", cfg.dataset.spec.max_objects},
                  {"small_fraction", cfg.dataset.spec.small_fraction},
                  {"small_side", json::array({cfg.dataset.spec.small_side_min,
                                              cfg.dataset.spec.small_side_max})},
                  {"large_side", json::array({cfg.dataset.spec.large_side_min,
                                              cfg.dataset.spec.large_side_max})},
                  {"max_gt_iou", cfg.dataset.spec.max_gt_iou}};
  j["train"] = {{"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"iterations", cfg.train.iterations},
                {"lr_steps", cfg.train.lr_steps},
                {"lr_decay", cfg.train.lr_decay},
                {"batch_size", cfg.train.batch_size},
                {"fusion_lr_multiplier", cfg.train.fusion_lr_multiplier},
                {"seed", cfg.train.seed},
                {"match_iou", cfg.train.match_iou},
                {"neg_pos_ratio", cfg.train.neg_pos_ratio},
                {"flip_augmentation", cfg.train.flip_augmentation},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"log_every", cfg.train.log_every}};
  j["eval"] = {{"conf_threshold", cfg.eval.post.conf_threshold},
               {"nms_iou", cfg.eval.post.nms_iou},
               {"top_k_per_class", cfg.eval.post.top_k_per_class},
               {"max_total", cfg.eval.post.max_total},
               {"iou_threshold", cfg.eval.iou_threshold},
               {"interpolation", cfg.eval.interpolation == ApInterpolation::kAllPoint
                                     ? "all_point"
                                     : "eleven_point"},
               {"batch_size", cfg.eval.batch_size},
               {"small_side_px", cfg.eval.small_side_px}};
  return j;
}

FullConfig config_from_json(const json& j) {
  FullConfig cfg = default_config();
  cfg.model = model_from_json(j);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    maybe(d, "seed", cfg.dataset.spec.seed);
    maybe(d, "image_size", cfg.dataset.spec.image_size);
    maybe(d, "num_train", cfg.dataset.num_train);
    maybe(d, "num_test", cfg.dataset.num_test);
    maybe(d, "min_objects", cfg.dataset.spec.min_objects);
    maybe(d, "max_objects", cfg.dataset.spec.max_objects);
    maybe(d, "small_fraction", cfg.dataset.spec.small_fraction);
    if (d.contains("small_side")) {
      cfg.dataset.spec.small_side_min = d.at("small_side").at(0).get<int>();
      cfg.dataset.spec.small_side_max = d.at("small_side").at(1).get<int>();
    }
    if (d.contains("large_side")) {
      cfg.dataset.spec.large_side_min = d.at("large_side").at(0).get<int>();
      cfg.dataset.spec.large_side_max = d.at("large_side").at(1).get<int>();
    }
    maybe(d, "max_gt_iou", cfg.dataset.spec.max_gt_iou);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    maybe(t, "lr", cfg.train.lr);
    maybe(t, "momentum", cfg.train.momentum);
    maybe(t, "weight_decay", cfg.train.weight_decay);
    maybe(t, "iterations", cfg.train.iterations);
    maybe(t, "lr_steps", cfg.train.lr_steps);
    maybe(t, "lr_decay", cfg.train.lr_decay);
    maybe(t, "batch_size", cfg.train.batch_size);
    maybe(t, "fusion_lr_multiplier", cfg.train.fusion_lr_multiplier);
    maybe(t, "seed", cfg.train.seed);
    maybe(t, "match_iou", cfg.train.match_iou);
    maybe(t, "neg_pos_ratio", cfg.train.neg_pos_ratio);
    maybe(t, "flip_augmentation", cfg.train.flip_augmentation);
    maybe(t, "checkpoint_every", cfg.train.checkpoint_every);
    maybe(t, "log_every", cfg.train.log_every);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    maybe(e, "conf_threshold", cfg.eval.post.conf_threshold);
    maybe(e, "nms_iou", cfg.eval.post.nms_iou);
    maybe(e, "top_k_per_class", cfg.eval.post.top_k_per_class);
    maybe(e, "max_total", cfg.eval.post.max_total);
    maybe(e, "iou_threshold", cfg.eval.iou_threshold);
    if (e.contains("interpolation"))
      cfg.eval.interpolation = e.at("interpolation").get<std::string>() == "eleven_point"
                                   ? ApInterpolation::kElevenPoint
                                   : ApInterpolation::kAllPoint;
    maybe(e, "batch_size", cfg.eval.batch_size);
    maybe(e, "small_side_px", cfg.eval.small_side_px);
  }
  // keep the dataset image size and the model input size in lockstep; an explicit
  // dataset.image_size wins, otherwise the backbone's input size carries over
  if (j.contains("dataset") && j.at("dataset").contains("image_size"))
    cfg.model.backbone.input_size = cfg.dataset.spec.image_size;
  else
    cfg.dataset.spec.image_size = cfg.model.backbone.input_size;
  return cfg;
}

FullConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  FSSD_CHECK(in, "config: cannot open '" << path << "'");
  json j;
  in >> j;
  return config_from_json(j);
}

std::uint32_t config_hash(const DetectorConfig& model) {
  const std::string canonical = model_to_json(model).dump();
  return static_cast<std::uint32_t>(crc32(
      0, reinterpret_cast<const Bytef*>(canonical.data()), static_cast<uInt>(canonical.size())));
}

}  // namespace fssd
