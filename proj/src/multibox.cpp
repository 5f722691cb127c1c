#include "fssd/multibox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

std::vector<std::vector<double>> default_aspect_ratios(int levels) {
  FSSD_CHECK(levels >= 1, "priors: need at least one level");
  std::vector<std::vector<double>> out;
  const std::vector<double> narrow{1.0, 2.0, 0.5};
  const std::vector<double> wide{1.0, 2.0, 0.5, 3.0, 1.0 / 3.0};
  for (int i = 0; i < levels; ++i) {
    const bool edge = i == 0 || i >= levels - 2;
    out.push_back(edge ? narrow : wide);
  }
  return out;
}

std::vector<PriorLevelSpec> make_level_specs(const std::vector<int>& feature_sizes,
                                             const PriorConfig& cfg) {
  const int levels = static_cast<int>(feature_sizes.size());
  auto ratios = cfg.aspect_ratios.empty() ? default_aspect_ratios(levels) : cfg.aspect_ratios;
  FSSD_CHECK(static_cast<int>(ratios.size()) == levels,
             "priors: aspect_ratios has " << ratios.size() << " levels, pyramid has " << levels);
  std::vector<double> scales(levels);
  for (int k = 0; k < levels; ++k) {
    if (k == 0)
      scales[k] = cfg.first_scale;
    else if (levels == 2)
      scales[k] = cfg.scale_min;
    else
      scales[k] = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * (k - 1) / (levels - 2);
  }
  std::vector<PriorLevelSpec> specs;
  for (int k = 0; k < levels; ++k) {
    PriorLevelSpec spec;
    spec.feature_size = feature_sizes[k];
    spec.scale = scales[k];
    spec.next_scale = k + 1 < levels ? scales[k + 1] : cfg.last_next_scale;
    spec.aspect_ratios = ratios[k];
    specs.push_back(std::move(spec));
  }
  return specs;
}

PriorBoxSet generate_priors(const std::vector<PriorLevelSpec>& levels) {
  PriorBoxSet set;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& spec = levels[k];
    FSSD_CHECK(spec.scale > 0 && spec.next_scale > 0, "priors: non-positive scale");
    FSSD_CHECK(spec.feature_size >= 1, "priors: non-positive feature size");
    const int before = set.total();
    const int f = spec.feature_size;
    for (int i = 0; i < f; ++i) {
      for (int j = 0; j < f; ++j) {
        const double cx = (j + 0.5) / f;
        const double cy = (i + 0.5) / f;
        for (double ratio : spec.aspect_ratios) {
          const double r = std::sqrt(ratio);
          set.boxes.push_back({cx, cy, spec.scale * r, spec.scale / r, static_cast<int>(k)});
        }
        const double extra = std::sqrt(spec.scale * spec.next_scale);
        set.boxes.push_back({cx, cy, extra, extra, static_cast<int>(k)});
      }
    }
    set.level_counts.push_back(set.total() - before);
  }
  return set;
}

std::array<double, 4> encode_box(const Box& gt, const PriorBox& prior,
                                 const std::array<double, 4>& variances) {
  FSSD_CHECK(prior.w > 0 && prior.h > 0, "encode: degenerate prior");
  const double bcx = (gt.x0 + gt.x1) / 2, bcy = (gt.y0 + gt.y1) / 2;
  const double bw = gt.x1 - gt.x0, bh = gt.y1 - gt.y0;
  FSSD_CHECK(bw > 0 && bh > 0, "encode: degenerate ground-truth box");
  return {(bcx - prior.cx) / (prior.w * variances[0]),
          (bcy - prior.cy) / (prior.h * variances[1]),
          std::log(bw / prior.w) / variances[2],
          std::log(bh / prior.h) / variances[3]};
}

Box decode_box(const std::array<double, 4>& offsets, const PriorBox& prior,
               const std::array<double, 4>& variances) {
  const double tx = offsets[0] * variances[0];
  const double ty = offsets[1] * variances[1];
  // only the exp arguments need the overflow guard
  const double tw = std::clamp(offsets[2] * variances[2], -10.0, 10.0);
  const double th = std::clamp(offsets[3] * variances[3], -10.0, 10.0);
  const double cx = prior.cx + tx * prior.w;
  const double cy = prior.cy + ty * prior.h;
  const double w = prior.w * std::exp(tw);
  const double h = prior.h * std::exp(th);
  Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  b.x0 = std::clamp(b.x0, 0.0, 1.0);
  b.y0 = std::clamp(b.y0, 0.0, 1.0);
  b.x1 = std::clamp(b.x1, 0.0, 1.0);
  b.y1 = std::clamp(b.y1, 0.0, 1.0);
  return b;
}

double iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

MatchResult match_priors(const std::vector<GroundTruth>& gts, const PriorBoxSet& priors,
                         double iou_threshold, const std::array<double, 4>& variances) {
  FSSD_CHECK(iou_threshold > 0 && iou_threshold < 1, "match: threshold must be in (0,1)");
  const int P = priors.total();
  MatchResult result;
  result.match.assign(P, kBackground);
  result.loc_targets.assign(P, {0, 0, 0, 0});
  if (gts.empty()) return result;

  std::vector<Box> prior_corners(P);
  for (int p = 0; p < P; ++p) prior_corners[p] = priors.boxes[p].corner();

  std::vector<std::vector<double>> overlap(gts.size(), std::vector<double>(P));
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (int p = 0; p < P; ++p) overlap[g][p] = iou(gts[g].box, prior_corners[p]);

  // step 1: forced best match per GT over still-unclaimed priors
  std::vector<bool> forced(P, false);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    int best = -1;
    double best_iou = -1.0;
    for (int p = 0; p < P; ++p) {
      if (forced[p]) continue;
      if (overlap[g][p] > best_iou) {
        best_iou = overlap[g][p];
        best = p;
      }
    }
    if (best >= 0) {
      forced[best] = true;
      result.match[best] = static_cast<int>(g);
    }
  }
  // step 2: remaining priors take their best GT above the threshold
  for (int p = 0; p < P; ++p) {
    if (forced[p]) continue;
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (overlap[g][p] > best_iou) {  // strict: ties resolve to the lowest GT index
        best_iou = overlap[g][p];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) result.match[p] = best;
  }
  for (int p = 0; p < P; ++p) {
    if (result.match[p] == kBackground) continue;
    ++result.num_positives;
    result.loc_targets[p] =
        encode_box(gts[result.match[p]].box, priors.boxes[p], variances);
  }
  return result;
}

std::vector<int> hard_negative_mine(const std::vector<double>& conf_loss,
                                    const MatchResult& match, double ratio) {
  FSSD_CHECK(ratio > 0, "mining: ratio must be positive");
  FSSD_CHECK(conf_loss.size() == match.match.size(), "mining: loss/match size mismatch");
  std::vector<int> negatives;
  for (std::size_t p = 0; p < match.match.size(); ++p)
    if (match.match[p] == kBackground) negatives.push_back(static_cast<int>(p));
  if (negatives.empty()) return {};

  const std::size_t want =
      match.num_positives == 0
          ? 1
          : std::min(negatives.size(),
                     static_cast<std::size_t>(ratio * match.num_positives + 0.5));
  std::stable_sort(negatives.begin(), negatives.end(), [&](int a, int b) {
    return conf_loss[a] > conf_loss[b];  // stable: ties keep the lower prior index first
  });
  negatives.resize(want);
  return negatives;
}

MultiboxHead::MultiboxHead(const std::vector<int>& level_channels,
                           const std::vector<int>& priors_per_loc, int num_classes,
                           std::uint64_t rng_seed)
    : priors_per_loc_(priors_per_loc), num_classes_(num_classes) {
  FSSD_CHECK(level_channels.size() == priors_per_loc.size(),
             "multibox head: level count mismatch (" << level_channels.size() << " vs "
                                                     << priors_per_loc.size() << ")");
  FSSD_CHECK(num_classes >= 2, "multibox head: need background plus at least one class");
  Rng rng(rng_seed);
  for (std::size_t i = 0; i < level_channels.size(); ++i) {
    const int in_c = level_channels[i];
    const int a = priors_per_loc[i];
    auto make = [&](int out_c) {
      ops::ConvParams p;
      p.weight = Tensor::xavier_uniform({out_c, in_c, 3, 3}, in_c * 9, out_c * 9, rng);
      p.bias = Tensor::zeros({out_c, 1, 1, 1}, true);
      p.stride = 1;
      p.padding = 1;
      return p;
    };
    loc_convs_.push_back(make(4 * a));
    conf_convs_.push_back(make(num_classes * a));
  }
}

MultiboxHead::Output MultiboxHead::forward(const PyramidFeatures& pyramid) const {
  FSSD_CHECK(pyramid.maps.size() == loc_convs_.size(),
             "multibox head: pyramid has " << pyramid.maps.size() << " levels, head expects "
                                           << loc_convs_.size());
  std::vector<Tensor> loc_rows, conf_rows;
  for (std::size_t i = 0; i < pyramid.maps.size(); ++i) {
    const Tensor& x = pyramid.maps[i];
    const int a = priors_per_loc_[i];
    loc_rows.push_back(ops::flatten_head(ops::conv2d(x, loc_convs_[i]), a, 4));
    conf_rows.push_back(ops::flatten_head(ops::conv2d(x, conf_convs_[i]), a, num_classes_));
  }
  return {ops::concat_channels(loc_rows), ops::concat_channels(conf_rows)};
}

void MultiboxHead::collect_params(std::vector<ParamRef>& out) const {
  for (std::size_t i = 0; i < loc_convs_.size(); ++i) {
    const auto n = std::to_string(i);
    out.push_back({"head.loc" + n + ".weight", loc_convs_[i].weight, 1.0});
    out.push_back({"head.loc" + n + ".bias", loc_convs_[i].bias, 1.0});
    out.push_back({"head.conf" + n + ".weight", conf_convs_[i].weight, 1.0});
    out.push_back({"head.conf" + n + ".bias", conf_convs_[i].bias, 1.0});
  }
}

namespace {

// Numeric (graph-free) cross-entropy against `target` for one row of logits.
double ce_row(const double* logits, int classes, int target) {
  double m = logits[0];
  for (int k = 1; k < classes; ++k) m = std::max(m, logits[k]);
  double z = 0.0;
  for (int k = 0; k < classes; ++k) z += std::exp(logits[k] - m);
  return std::log(z) - (logits[target] - m);
}

}  // namespace

LossSelection select_loss_rows(const MultiboxHead::Output& pred,
                               const std::vector<std::vector<GroundTruth>>& batch_gts,
                               const PriorBoxSet& priors, double iou_threshold,
                               double neg_pos_ratio,
                               const std::array<double, 4>& variances) {
  const Shape loc_shape = pred.loc.shape();
  const Shape conf_shape = pred.conf.shape();
  const int batch = loc_shape.n;
  const int P = priors.total();
  const int classes = conf_shape.h;
  FSSD_CHECK(loc_shape.c == P && conf_shape.c == P,
             "multibox loss: predictions cover " << loc_shape.c << " priors, set has " << P);
  FSSD_CHECK(static_cast<int>(batch_gts.size()) == batch,
             "multibox loss: " << batch_gts.size() << " GT lists for batch " << batch);

  LossSelection sel;
  const double* conf_data = pred.conf.data().data();
  for (int n = 0; n < batch; ++n) {
    MatchResult match = match_priors(batch_gts[n], priors, iou_threshold, variances);
    sel.num_positives += match.num_positives;

    std::vector<double> bg_loss(P, 0.0);
    for (int p = 0; p < P; ++p) {
      if (match.match[p] != kBackground) continue;
      bg_loss[p] = ce_row(conf_data + (static_cast<std::size_t>(n) * P + p) * classes, classes, 0);
    }
    const auto negatives = hard_negative_mine(bg_loss, match, neg_pos_ratio);
    sel.num_negatives += static_cast<int>(negatives.size());

    for (int p = 0; p < P; ++p) {
      if (match.match[p] == kBackground) continue;
      sel.conf_rows.emplace_back(n, p);
      sel.conf_targets.push_back(batch_gts[n][match.match[p]].label);
      sel.loc_rows.emplace_back(n, p);
      for (double v : match.loc_targets[p]) sel.loc_targets.push_back(v);
    }
    for (int p : negatives) {
      sel.conf_rows.emplace_back(n, p);
      sel.conf_targets.push_back(0);
    }
  }
  return sel;
}

MultiboxLossParts multibox_loss_for(const MultiboxHead::Output& pred,
                                    const LossSelection& sel) {
  MultiboxLossParts parts;
  parts.num_positives = sel.num_positives;
  parts.num_negatives = sel.num_negatives;
  const double norm = 1.0 / std::max(sel.num_positives, 1);

  std::vector<Tensor> terms;
  if (!sel.conf_rows.empty()) {
    Tensor selected = ops::gather_rows(pred.conf, sel.conf_rows);
    Tensor ce = ops::softmax_cross_entropy(selected, sel.conf_targets);
    Tensor ce_sum = ops::reduce_sum(ce);
    parts.conf_loss_value = ce_sum.data()[0] * norm;
    terms.push_back(ce_sum);
  }
  if (!sel.loc_rows.empty()) {
    Tensor pred_rows = ops::gather_rows(pred.loc, sel.loc_rows);
    Tensor targets = Tensor::from_values({static_cast<int>(sel.loc_rows.size()), 4, 1, 1},
                                         sel.loc_targets);
    Tensor l1_sum = ops::reduce_sum(ops::smooth_l1(pred_rows, targets));
    parts.loc_loss_value = l1_sum.data()[0] * norm;
    terms.push_back(l1_sum);
  }
  if (terms.empty()) {
    // no GTs and no priors mined (degenerate); a zero that still links the graph
    parts.loss = ops::scale(ops::reduce_sum(ops::gather_rows(pred.conf, {{0, 0}})), 0.0);
    return parts;
  }
  parts.loss = ops::scale(terms.size() == 1 ? terms[0] : ops::elementwise_add(terms), norm);
  return parts;
}

MultiboxLossParts multibox_loss(const MultiboxHead::Output& pred,
                                const std::vector<std::vector<GroundTruth>>& batch_gts,
                                const PriorBoxSet& priors, double iou_threshold,
                                double neg_pos_ratio,
                                const std::array<double, 4>& variances) {
  return multibox_loss_for(
      pred, select_loss_rows(pred, batch_gts, priors, iou_threshold, neg_pos_ratio, variances));
}

}  // namespace fssd
