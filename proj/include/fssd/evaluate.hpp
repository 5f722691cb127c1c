#pragma once

#include <json.hpp>

#include "fssd/train.hpp"

namespace fssd {

struct EvalReport {
  EvalSummary overall;
  EvalSummary small_objects;
  EvalSummary large_objects;
  int num_images = 0;
  nlohmann::json to_json() const;
};

// Inference over a split, detection assembly per image, VOC AP per class plus the
// small/large breakdown (GT min side < eval.small_side_px counts as small).
EvalReport evaluate_model(Detector& model, const std::vector<SampleImage>& split,
                          const EvalSettings& eval, int image_size);

// Convenience: per-image detections for one sample (used by the detect CLI).
std::vector<Detection> detect_single(Detector& model, const SampleImage& sample,
                                     int image_size, const PostprocessConfig& post);

}  // namespace fssd
