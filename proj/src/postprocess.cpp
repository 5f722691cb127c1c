#include "fssd/postprocess.hpp"

#include <algorithm>
#include <numeric>

#include "fssd/check.hpp"

namespace fssd {

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold, int top_k) {
  FSSD_CHECK(iou_threshold > 0 && iou_threshold < 1, "nms: threshold must be in (0,1)");
  FSSD_CHECK(boxes.size() == scores.size(), "nms: box/score count mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<int> kept;
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    if (static_cast<int>(kept.size()) >= top_k) break;
    for (int other : order) {
      if (suppressed[other] || other == idx) continue;
      if (iou(boxes[idx], boxes[other]) > iou_threshold) suppressed[other] = true;
    }
  }
  return kept;
}

std::vector<Detection> assemble_detections(const Tensor& loc_rows, const Tensor& conf_rows,
                                           const PriorBoxSet& priors,
                                           const std::array<double, 4>& variances,
                                           const PostprocessConfig& cfg) {
  const Shape ls = loc_rows.shape();
  const Shape cs = conf_rows.shape();
  const int P = priors.total();
  FSSD_CHECK(ls.n == P && ls.c == 4, "assemble: loc rows must be (" << P << ",4,1,1), got "
                                                                    << ls.str());
  FSSD_CHECK(cs.n == P, "assemble: conf rows must cover " << P << " priors, got " << cs.str());
  const int classes = cs.c;

  const auto probs = ops::softmax_rows(conf_rows);
  const double* loc = loc_rows.data().data();

  struct Candidate {
    int label;
    double score;
    Box box;
    int prior;
  };
  std::vector<Candidate> all;
  for (int c = 1; c < classes; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<int> prior_of;
    for (int p = 0; p < P; ++p) {
      const double s = probs[static_cast<std::size_t>(p) * classes + c];
      if (s < cfg.conf_threshold) continue;
      const double* t = loc + static_cast<std::size_t>(p) * 4;
      boxes.push_back(decode_box({t[0], t[1], t[2], t[3]}, priors.boxes[p], variances));
      scores.push_back(s);
      prior_of.push_back(p);
    }
    for (int idx : nms(boxes, scores, cfg.nms_iou, cfg.top_k_per_class))
      all.push_back({c, scores[idx], boxes[idx], prior_of[idx]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.label != b.label) return a.label < b.label;
    return a.prior < b.prior;
  });
  if (static_cast<int>(all.size()) > cfg.max_total) all.resize(cfg.max_total);

  std::vector<Detection> out;
  out.reserve(all.size());
  for (const auto& c : all) out.push_back({c.label, c.score, c.box});
  return out;
}

}  // namespace fssd
