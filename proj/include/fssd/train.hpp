#pragma once

#include <functional>
#include <iosfwd>
#include <memory>

#include "fssd/checkpoint.hpp"
#include "fssd/detector.hpp"

namespace fssd {

// Materialized ShapeWorld split, generated once and cached.
struct DatasetCache {
  std::vector<SampleImage> train;
  std::vector<SampleImage> test;
  int image_size = 0;
  int placement_shortfalls = 0;
};

// Train split: stream indices [0, num_train); test split continues at num_train.
DatasetCache build_dataset(const DatasetSettings& settings);

struct TrainResult {
  std::vector<double> loss_log;  // one entry per iteration
  std::shared_ptr<Detector> model;
  Checkpoint final_checkpoint;
  int final_step = 0;
};

// Full training loop: deterministic batch sampling and flip augmentation, multibox
// loss, SGD with the fusion-module learning-rate multiplier, step-decay schedule.
// NaN loss aborts with the iteration and the first offending parameter. Saves to
// `out_ckpt` (and every train.checkpoint_every iterations when set); `init_ckpt`
// warm-starts by tensor name before training.
TrainResult train_model(const FullConfig& cfg, const DatasetCache& data,
                        const std::string& out_ckpt, const std::string& init_ckpt = "",
                        std::ostream* log = nullptr);

// Rebuild a detector from a checkpoint's embedded config and restore its tensors.
std::shared_ptr<Detector> detector_from_checkpoint(const Checkpoint& ckpt,
                                                   RestoreReport* report = nullptr);

}  // namespace fssd
