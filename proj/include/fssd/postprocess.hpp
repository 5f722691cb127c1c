#pragma once

#include <vector>

#include "fssd/multibox.hpp"

namespace fssd {

struct Detection {
  int label = 0;       // in [1, num_classes)
  double score = 0.0;  // softmax probability
  Box box;             // normalized corner form, clipped to the unit square
};

// Greedy NMS: repeatedly keep the highest-scoring box (ties by lowest index) and
// suppress everything with IoU strictly above the threshold; stops after top_k.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold, int top_k);

struct PostprocessConfig {
  double conf_threshold = 0.01;
  double nms_iou = 0.45;
  int top_k_per_class = 200;
  int max_total = 200;
};

// Softmax over conf rows, then per non-background class: threshold, decode, clip,
// NMS, top-k; finally the best max_total detections overall, sorted by descending
// score (ties by class then prior index).
std::vector<Detection> assemble_detections(const Tensor& loc_rows, const Tensor& conf_rows,
                                           const PriorBoxSet& priors,
                                           const std::array<double, 4>& variances,
                                           const PostprocessConfig& cfg);

}  // namespace fssd
