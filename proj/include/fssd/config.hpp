#pragma once

#include <string>

#include <json.hpp>

#include "fssd/backbone.hpp"
#include "fssd/dataset.hpp"
#include "fssd/eval.hpp"
#include "fssd/fusion.hpp"
#include "fssd/multibox.hpp"
#include "fssd/postprocess.hpp"

namespace fssd {

struct DetectorConfig {
  BackboneConfig backbone;
  bool fusion_enabled = true;
  FusionConfig fusion;
  PriorConfig priors;
  int num_classes = 1 + kNumShapeClasses;
};

struct TrainSettings {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iterations = 2000;
  std::vector<int> lr_steps = {1500};
  double lr_decay = 0.1;
  int batch_size = 8;
  double fusion_lr_multiplier = 2.0;
  std::uint64_t seed = 1;
  double match_iou = 0.5;
  double neg_pos_ratio = 3.0;
  bool flip_augmentation = true;
  int checkpoint_every = 0;  // 0: only the final save
  int log_every = 50;
};

struct EvalSettings {
  PostprocessConfig post;
  double iou_threshold = 0.5;
  ApInterpolation interpolation = ApInterpolation::kAllPoint;
  int batch_size = 8;
  int small_side_px = 32;
};

struct DatasetSettings {
  ShapeWorldSpec spec;
  int num_train = 500;
  int num_test = 100;
};

struct FullConfig {
  DetectorConfig model;
  DatasetSettings dataset;
  TrainSettings train;
  EvalSettings eval;
};

// Desk-scale defaults: the 300-input geometry (taps 75/38/19/10, pyramid
// 38/19/10/5/3/1, 8732 priors) at widths a 2-core CPU trains in minutes.
FullConfig default_config();
// Paper-faithful widths (256-channel projections, 512-wide pyramid); used for
// structural fixtures, far too heavy to train here.
FullConfig paper_config(int input_size);

nlohmann::json to_json(const FullConfig& cfg);
// Starts from default_config() and overrides whatever keys are present.
FullConfig config_from_json(const nlohmann::json& j);
FullConfig load_config_file(const std::string& path);

// CRC32 of the canonical model-section JSON; stamped into checkpoints.
std::uint32_t config_hash(const DetectorConfig& model);
nlohmann::json model_to_json(const DetectorConfig& model);
DetectorConfig model_from_json(const nlohmann::json& j);

}  // namespace fssd
