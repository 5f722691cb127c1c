#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fssd/postprocess.hpp"

namespace fssd {

enum class ApInterpolation { kAllPoint, kElevenPoint };

// Per-image detections and ground truths for one evaluation pass.
struct EvalRecord {
  std::vector<Detection> detections;
  std::vector<GroundTruth> ground_truths;
};

struct ClassAp {
  double ap = std::numeric_limits<double>::quiet_NaN();  // NaN when the class has no GT
  int num_gt = 0;
  int num_detections = 0;
  bool defined() const { return num_gt > 0; }
};

// VOC-style AP for one class. Detections are ranked by descending score (ties by
// image order, then insertion order); each greedily claims the unmatched GT with
// the highest IoU >= threshold, duplicates count as false positives. GTs whose
// index appears in `ignored` neither count toward recall nor mark detections as
// FP (used for the small/large breakdown).
ClassAp voc_ap(const std::vector<EvalRecord>& records, int label, double iou_threshold,
               ApInterpolation interpolation,
               const std::vector<std::vector<bool>>* ignored = nullptr);

// Unweighted mean over classes with defined AP; throws when none is defined.
double mean_ap(const std::map<int, ClassAp>& per_class);

struct EvalSummary {
  std::map<int, ClassAp> per_class;
  double map = 0.0;
};

EvalSummary evaluate_records(const std::vector<EvalRecord>& records, int num_classes,
                             double iou_threshold, ApInterpolation interpolation);

// Same evaluation restricted to GTs whose min side (in pixels at `image_size`)
// is below / at-or-above `small_side_px`; the other bucket is ignored.
EvalSummary evaluate_size_bucket(const std::vector<EvalRecord>& records, int num_classes,
                                 double iou_threshold, ApInterpolation interpolation,
                                 int image_size, int small_side_px, bool small_bucket);

}  // namespace fssd
