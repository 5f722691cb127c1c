#include "fssd/train.hpp"

#include <cmath>
#include <ostream>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

DatasetCache build_dataset(const DatasetSettings& settings) {
  DatasetCache cache;
  cache.image_size = settings.spec.image_size;
  cache.train.reserve(settings.num_train);
  for (int i = 0; i < settings.num_train; ++i) {
    cache.train.push_back(generate_image(settings.spec, i));
    cache.placement_shortfalls += cache.train.back().placement_shortfalls;
  }
  cache.test.reserve(settings.num_test);
  for (int i = 0; i < settings.num_test; ++i) {
    cache.test.push_back(generate_image(settings.spec, settings.num_train + i));
    cache.placement_shortfalls += cache.test.back().placement_shortfalls;
  }
  return cache;
}

namespace {

double lr_at(const TrainSettings& t, int iteration) {
  double lr = t.lr;
  for (int step : t.lr_steps)
    if (iteration >= step) lr *= t.lr_decay;
  return lr;
}

void abort_on_nan(const std::vector<ParamRef>& params, int iteration) {
  for (const auto& p : params) {
    for (double v : p.tensor.data())
      if (!std::isfinite(v))
        fail("train: non-finite value in parameter '" + p.name + "' at iteration " +
             std::to_string(iteration));
    if (p.tensor.has_grad())
      for (double v : p.tensor.grad())
        if (!std::isfinite(v))
          fail("train: non-finite gradient in '" + p.name + "' at iteration " +
               std::to_string(iteration));
  }
  fail("train: non-finite loss at iteration " + std::to_string(iteration) +
       " (no offending parameter found; activations overflowed)");
}

}  // namespace

TrainResult train_model(const FullConfig& cfg, const DatasetCache& data,
                        const std::string& out_ckpt, const std::string& init_ckpt,
                        std::ostream* log) {
  FSSD_CHECK(cfg.train.lr > 0 && cfg.train.momentum >= 0 && cfg.train.weight_decay >= 0,
             "train: rates must be positive");
  FSSD_CHECK(!data.train.empty(), "train: empty training split");

  TrainResult result;
  result.model = std::make_shared<Detector>(cfg.model, Rng::mix(cfg.train.seed, 0x6D6F64656Cull));
  Detector& model = *result.model;

  auto params = model.params(cfg.train.fusion_lr_multiplier);
  auto buffers = model.buffers();
  SgdMomentum optimizer(cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);
  optimizer.ensure_initialized(params);

  int start_iteration = 0;
  if (!init_ckpt.empty()) {
    Checkpoint ckpt = load_checkpoint(init_ckpt);
    const bool same_model = ckpt.config_hash() == config_hash(cfg.model);
    RestoreReport report = restore_state(ckpt, params, buffers, &optimizer.velocities());
    if (same_model) start_iteration = ckpt.step();
    if (log) {
      *log << "init from " << init_ckpt << ": " << report.loaded.size() << " tensors loaded";
      if (!report.missing_in_checkpoint.empty())
        *log << ", " << report.missing_in_checkpoint.size() << " left at init";
      if (!report.shape_mismatch.empty())
        *log << ", " << report.shape_mismatch.size() << " shape-mismatched (skipped)";
      if (!same_model) *log << " [config hash differs: name-matched warm start]";
      *log << "\n";
    }
  }

  const int S = data.image_size;
  const auto& spec_hash = cfg.train.seed;
  const int batch_size = std::min<int>(cfg.train.batch_size,
                                       static_cast<int>(data.train.size()));

  Checkpoint last;
  auto save = [&](int step) {
    quantize_to_f32(params, &buffers, &optimizer.velocities());
    Checkpoint ckpt = snapshot_state(params, buffers, &optimizer.velocities());
    ckpt.set_step(step);
    ckpt.set_config_hash(config_hash(cfg.model));
    ckpt.set_config_json(model_to_json(cfg.model).dump());
    if (!out_ckpt.empty()) save_checkpoint(out_ckpt, ckpt);
    last = std::move(ckpt);
  };

  for (int iter = start_iteration; iter < cfg.train.iterations; ++iter) {
    // stateless per-iteration stream: resuming reproduces the batch sequence
    Rng batch_rng(Rng::mix(spec_hash, 0xB000000000ull + iter));
    std::vector<SampleImage> flipped;
    std::vector<const SampleImage*> batch;
    std::vector<std::vector<GroundTruth>> batch_gts;
    flipped.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b) {
      const auto& sample =
          data.train[batch_rng.uniform_int(0, static_cast<int>(data.train.size()) - 1)];
      const bool flip = cfg.train.flip_augmentation && batch_rng.bernoulli(0.5);
      if (flip) {
        flipped.push_back(sample);
        flip_horizontal(flipped.back(), S);
        batch.push_back(&flipped.back());
      } else {
        flipped.emplace_back();  // placeholder keeps pointers stable
        batch.push_back(&sample);
      }
      batch_gts.push_back(to_ground_truths(*batch.back(), S));
    }

    optimizer.set_lr(lr_at(cfg.train, iter));
    Tensor images = to_input_tensor(batch, S);
    auto head_out = model.forward(images, /*training=*/true);
    auto parts = multibox_loss(head_out, batch_gts, model.priors(), cfg.train.match_iou,
                               cfg.train.neg_pos_ratio, cfg.model.priors.variances);
    const double loss_value = parts.loss.data()[0];
    if (!std::isfinite(loss_value)) abort_on_nan(params, iter);

    SgdMomentum::zero_grad(params);
    backward(parts.loss);
    optimizer.step(params);

    result.loss_log.push_back(loss_value);
    if (log && cfg.train.log_every > 0 &&
        (iter % cfg.train.log_every == 0 || iter + 1 == cfg.train.iterations)) {
      *log << "iter " << iter << " lr " << optimizer.lr() << " loss " << loss_value << " (conf "
           << parts.conf_loss_value << ", loc " << parts.loc_loss_value << ", pos "
           << parts.num_positives << ")\n";
      log->flush();
    }
    if (cfg.train.checkpoint_every > 0 && (iter + 1) % cfg.train.checkpoint_every == 0 &&
        iter + 1 < cfg.train.iterations)
      save(iter + 1);
  }

  save(cfg.train.iterations);
  result.final_checkpoint = std::move(last);
  result.final_step = cfg.train.iterations;
  return result;
}

std::shared_ptr<Detector> detector_from_checkpoint(const Checkpoint& ckpt,
                                                   RestoreReport* report) {
  const std::string config_json = ckpt.config_json();
  FSSD_CHECK(!config_json.empty(), "checkpoint carries no embedded model config");
  DetectorConfig model_cfg = model_from_json(nlohmann::json::parse(config_json));
  auto model = std::make_shared<Detector>(model_cfg, /*rng_seed=*/0);
  auto params = model->params(1.0);
  auto buffers = model->buffers();
  RestoreReport local = restore_state(ckpt, params, buffers);
  FSSD_CHECK(local.shape_mismatch.empty() && local.missing_in_checkpoint.empty(),
             "checkpoint does not fully describe this model ("
                 << local.shape_mismatch.size() << " mismatched, "
                 << local.missing_in_checkpoint.size() << " missing)");
  if (report) *report = std::move(local);
  return model;
}

}  // namespace fssd
