#pragma once

#include <array>
#include <string>
#include <vector>

#include "fssd/fusion.hpp"
#include "fssd/optim.hpp"
#include "fssd/ops.hpp"

namespace fssd {

// Axis-aligned box, normalized corner form.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

struct GroundTruth {
  Box box;           // normalized, x0 < x1, y0 < y1
  int label = 0;     // in [1, num_classes); 0 is background
};

// Default box in normalized center form.
struct PriorBox {
  double cx, cy, w, h;
  int level;
  Box corner() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
};

struct PriorLevelSpec {
  int feature_size;
  double scale;       // s_k in (0, 1]
  double next_scale;  // s_{k+1}, for the extra sqrt(s_k * s_{k+1}) prior
  std::vector<double> aspect_ratios;  // includes 1; priors per location = size + 1
};

struct PriorBoxSet {
  std::vector<PriorBox> boxes;
  std::vector<int> level_counts;
  int total() const { return static_cast<int>(boxes.size()); }
};

struct PriorConfig {
  // Per level; empty means the SSD-style default for the level count (first and
  // last two levels get {1, 2, 1/2}, the middle ones add {3, 1/3}).
  std::vector<std::vector<double>> aspect_ratios;
  double first_scale = 0.1;
  double scale_min = 0.2;
  double scale_max = 0.9;
  double last_next_scale = 1.0;
  std::array<double, 4> variances{0.1, 0.1, 0.2, 0.2};
};

std::vector<std::vector<double>> default_aspect_ratios(int levels);
std::vector<PriorLevelSpec> make_level_specs(const std::vector<int>& feature_sizes,
                                             const PriorConfig& cfg);

// One prior per aspect ratio at (s_k sqrt(a), s_k / sqrt(a)) plus the extra ratio-1
// prior at sqrt(s_k * s_{k+1}); cell centers at ((j+0.5)/f, (i+0.5)/f). Priors are
// not clipped, which keeps encode/decode exactly invertible.
PriorBoxSet generate_priors(const std::vector<PriorLevelSpec>& levels);

// Center-code box encoding (t_cx, t_cy, t_w, t_h) against a prior with variances.
std::array<double, 4> encode_box(const Box& gt, const PriorBox& prior,
                                 const std::array<double, 4>& variances);
// Exact algebraic inverse, with offsets clamped to +-10 pre-exp and the output
// clipped to the unit square.
Box decode_box(const std::array<double, 4>& offsets, const PriorBox& prior,
               const std::array<double, 4>& variances);

double iou(const Box& a, const Box& b);

constexpr int kBackground = -1;

struct MatchResult {
  std::vector<int> match;  // per prior: GT index or kBackground
  std::vector<std::array<double, 4>> loc_targets;  // per prior; valid where matched
  int num_positives = 0;
};

// Step 1: every GT claims its best still-unclaimed prior (forced, in GT order).
// Step 2: each remaining prior takes the highest-IoU GT if IoU >= threshold,
// ties to the lowest GT index.
MatchResult match_priors(const std::vector<GroundTruth>& gts, const PriorBoxSet& priors,
                         double iou_threshold, const std::array<double, 4>& variances);

// Among background priors pick the ratio * num_positives highest-loss ones (stable,
// ties by lowest prior index); a positive-free image keeps the single hardest one.
std::vector<int> hard_negative_mine(const std::vector<double>& conf_loss,
                                    const MatchResult& match, double ratio);

// Two 3x3 convs per pyramid level (localization and confidence), flattened in
// (level, row, col, anchor) order and concatenated across levels.
class MultiboxHead {
 public:
  MultiboxHead(const std::vector<int>& level_channels, const std::vector<int>& priors_per_loc,
               int num_classes, std::uint64_t rng_seed);

  struct Output {
    Tensor loc;   // (n, total_priors, 4, 1)
    Tensor conf;  // (n, total_priors, num_classes, 1)
  };
  Output forward(const PyramidFeatures& pyramid) const;

  int num_classes() const { return num_classes_; }
  void collect_params(std::vector<ParamRef>& out) const;

 private:
  std::vector<ops::ConvParams> loc_convs_;
  std::vector<ops::ConvParams> conf_convs_;
  std::vector<int> priors_per_loc_;
  int num_classes_;
};

struct MultiboxLossParts {
  Tensor loss;  // scalar
  double conf_loss_value = 0;
  double loc_loss_value = 0;
  int num_positives = 0;
  int num_negatives = 0;
};

// The rows the loss runs over: positives plus mined negatives for the confidence
// term, positives with encoded targets for the localization term. Matching depends
// only on the ground truth; mining on the current confidence values.
struct LossSelection {
  std::vector<std::pair<int, int>> conf_rows;  // (image, prior)
  std::vector<int> conf_targets;
  std::vector<std::pair<int, int>> loc_rows;
  std::vector<double> loc_targets;  // 4 per loc row
  int num_positives = 0;
  int num_negatives = 0;
};

LossSelection select_loss_rows(const MultiboxHead::Output& pred,
                               const std::vector<std::vector<GroundTruth>>& batch_gts,
                               const PriorBoxSet& priors, double iou_threshold,
                               double neg_pos_ratio,
                               const std::array<double, 4>& variances);

// The differentiable part given a fixed selection (what finite differences probe).
MultiboxLossParts multibox_loss_for(const MultiboxHead::Output& pred,
                                    const LossSelection& selection);

// L = (1/N) * (sum CE over positives+mined negatives + sum SmoothL1 over positives),
// N = max(total positives, 1). Matching and mining are per image; the sums run over
// the whole batch.
MultiboxLossParts multibox_loss(const MultiboxHead::Output& pred,
                                const std::vector<std::vector<GroundTruth>>& batch_gts,
                                const PriorBoxSet& priors, double iou_threshold,
                                double neg_pos_ratio,
                                const std::array<double, 4>& variances);

}  // namespace fssd
