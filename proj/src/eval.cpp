#include "fssd/eval.hpp"

#include <algorithm>
#include <numeric>

#include "fssd/check.hpp"

namespace fssd {

ClassAp voc_ap(const std::vector<EvalRecord>& records, int label, double iou_threshold,
               ApInterpolation interpolation, const std::vector<std::vector<bool>>* ignored) {
  struct Det {
    int image;
    int index;
    double score;
    Box box;
  };
  ClassAp result;
  std::vector<Det> dets;
  std::vector<std::vector<int>> gt_of_image(records.size());
  for (std::size_t img = 0; img < records.size(); ++img) {
    const auto& rec = records[img];
    for (std::size_t i = 0; i < rec.detections.size(); ++i)
      if (rec.detections[i].label == label)
        dets.push_back({static_cast<int>(img), static_cast<int>(i), rec.detections[i].score,
                        rec.detections[i].box});
    for (std::size_t g = 0; g < rec.ground_truths.size(); ++g) {
      if (rec.ground_truths[g].label != label) continue;
      gt_of_image[img].push_back(static_cast<int>(g));
      const bool is_ignored = ignored && (*ignored)[img][g];
      if (!is_ignored) ++result.num_gt;
    }
  }
  result.num_detections = static_cast<int>(dets.size());
  if (result.num_gt == 0) return result;  // AP undefined for this class

  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
    return a.score > b.score;  // stable: ties keep (image, index) order
  });

  std::vector<std::vector<bool>> claimed(records.size());
  for (std::size_t img = 0; img < records.size(); ++img)
    claimed[img].assign(records[img].ground_truths.size(), false);

  std::vector<bool> tp;
  int tp_count = 0;
  std::vector<double> precision, recall;
  for (const auto& det : dets) {
    const auto& gts = records[det.image].ground_truths;
    int best = -1;
    double best_iou = 0.0;
    for (int g : gt_of_image[det.image]) {
      if (claimed[det.image][g]) continue;
      if (ignored && (*ignored)[det.image][g]) continue;
      const double v = iou(det.box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      claimed[det.image][best] = true;
      tp.push_back(true);
      ++tp_count;
    } else if (ignored) {
      // detections landing on an ignored GT are dropped from the ranking
      double ign_iou = 0.0;
      for (int g : gt_of_image[det.image])
        if ((*ignored)[det.image][g]) ign_iou = std::max(ign_iou, iou(det.box, gts[g].box));
      if (ign_iou >= iou_threshold) continue;
      tp.push_back(false);
    } else {
      tp.push_back(false);
    }
    precision.push_back(static_cast<double>(tp_count) / static_cast<double>(tp.size()));
    recall.push_back(static_cast<double>(tp_count) / result.num_gt);
  }

  if (interpolation == ApInterpolation::kAllPoint) {
    // monotone envelope, integrated over recall
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
      precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      ap += (recall[i] - prev) * precision[i];
      prev = recall[i];
    }
    result.ap = ap;
  } else {
    double ap = 0.0;
    for (int step = 0; step <= 10; ++step) {
      const double r = step / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < precision.size(); ++i)
        if (recall[i] >= r) best = std::max(best, precision[i]);
      ap += best / 11.0;
    }
    result.ap = ap;
  }
  return result;
}

double mean_ap(const std::map<int, ClassAp>& per_class) {
  double sum = 0.0;
  int defined = 0;
  for (const auto& [label, ap] : per_class) {
    if (!ap.defined()) continue;
    sum += ap.ap;
    ++defined;
  }
  FSSD_CHECK(defined > 0, "mean_ap: no class has any ground truth");
  return sum / defined;
}

EvalSummary evaluate_records(const std::vector<EvalRecord>& records, int num_classes,
                             double iou_threshold, ApInterpolation interpolation) {
  EvalSummary summary;
  for (int label = 1; label < num_classes; ++label)
    summary.per_class[label] = voc_ap(records, label, iou_threshold, interpolation);
  summary.map = mean_ap(summary.per_class);
  return summary;
}

EvalSummary evaluate_size_bucket(const std::vector<EvalRecord>& records, int num_classes,
                                 double iou_threshold, ApInterpolation interpolation,
                                 int image_size, int small_side_px, bool small_bucket) {
  std::vector<std::vector<bool>> ignored(records.size());
  for (std::size_t img = 0; img < records.size(); ++img) {
    const auto& gts = records[img].ground_truths;
    ignored[img].resize(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double side = std::min(gts[g].box.x1 - gts[g].box.x0,
                                   gts[g].box.y1 - gts[g].box.y0) * image_size;
      const bool is_small = side < small_side_px;
      ignored[img][g] = small_bucket ? !is_small : is_small;
    }
  }
  EvalSummary summary;
  for (int label = 1; label < num_classes; ++label)
    summary.per_class[label] = voc_ap(records, label, iou_threshold, interpolation, &ignored);
  bool any = false;
  for (const auto& [label, ap] : summary.per_class) any = any || ap.defined();
  summary.map = any ? mean_ap(summary.per_class) : std::numeric_limits<double>::quiet_NaN();
  return summary;
}

}  // namespace fssd
