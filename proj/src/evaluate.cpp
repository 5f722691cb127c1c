#include "fssd/evaluate.hpp"

#include <cmath>

#include "fssd/check.hpp"

namespace fssd {

using nlohmann::json;

namespace {

json summary_to_json(const EvalSummary& s) {
  json per_class = json::object();
  for (const auto& [label, ap] : s.per_class) {
    const std::string name = label >= 1 && label <= kNumShapeClasses
                                 ? shape_class_names()[label - 1]
                                 : std::to_string(label);
    per_class[name] = {{"ap", ap.defined() ? json(ap.ap) : json()},
                       {"num_gt", ap.num_gt},
                       {"num_detections", ap.num_detections}};
  }
  return json{{"mAP", std::isnan(s.map) ? json() : json(s.map)}, {"per_class", per_class}};
}

}  // namespace

json EvalReport::to_json() const {
  return json{{"num_images", num_images},
              {"overall", summary_to_json(overall)},
              {"small", summary_to_json(small_objects)},
              {"large", summary_to_json(large_objects)}};
}

EvalReport evaluate_model(Detector& model, const std::vector<SampleImage>& split,
                          const EvalSettings& eval, int image_size) {
  FSSD_CHECK(!split.empty(), "evaluate: empty split");
  std::vector<EvalRecord> records;
  records.reserve(split.size());

  const int B = std::max(1, eval.batch_size);
  for (std::size_t start = 0; start < split.size(); start += B) {
    const std::size_t end = std::min(split.size(), start + B);
    std::vector<const SampleImage*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&split[i]);
    Tensor images = to_input_tensor(batch, image_size);
    auto out = model.forward(images, /*training=*/false);

    const int P = model.priors().total();
    const int K = model.num_classes();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      // slice this image's rows out of the batched predictions
      Tensor loc = Tensor::zeros({P, 4, 1, 1});
      Tensor conf = Tensor::zeros({P, K, 1, 1});
      std::copy_n(out.loc.data().begin() + i * static_cast<std::size_t>(P) * 4,
                  static_cast<std::size_t>(P) * 4, loc.data_mut().begin());
      std::copy_n(out.conf.data().begin() + i * static_cast<std::size_t>(P) * K,
                  static_cast<std::size_t>(P) * K, conf.data_mut().begin());
      EvalRecord rec;
      rec.detections =
          assemble_detections(loc, conf, model.priors(), model.config().priors.variances,
                              eval.post);
      rec.ground_truths = to_ground_truths(*batch[i], image_size);
      records.push_back(std::move(rec));
    }
  }

  EvalReport report;
  report.num_images = static_cast<int>(records.size());
  report.overall = evaluate_records(records, model.num_classes(), eval.iou_threshold,
                                    eval.interpolation);
  report.small_objects =
      evaluate_size_bucket(records, model.num_classes(), eval.iou_threshold,
                           eval.interpolation, image_size, eval.small_side_px, true);
  report.large_objects =
      evaluate_size_bucket(records, model.num_classes(), eval.iou_threshold,
                           eval.interpolation, image_size, eval.small_side_px, false);
  return report;
}

std::vector<Detection> detect_single(Detector& model, const SampleImage& sample,
                                     int image_size, const PostprocessConfig& post) {
  std::vector<const SampleImage*> batch{&sample};
  Tensor images = to_input_tensor(batch, image_size);
  auto out = model.forward(images, /*training=*/false);
  const int P = model.priors().total();
  const int K = model.num_classes();
  Tensor loc = Tensor::zeros({P, 4, 1, 1});
  Tensor conf = Tensor::zeros({P, K, 1, 1});
  std::copy_n(out.loc.data().begin(), static_cast<std::size_t>(P) * 4, loc.data_mut().begin());
  std::copy_n(out.conf.data().begin(), static_cast<std::size_t>(P) * K,
              conf.data_mut().begin());
  return assemble_detections(loc, conf, model.priors(), model.config().priors.variances, post);
}

}  // namespace fssd
