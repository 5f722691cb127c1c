#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fssd/ablate.hpp"
#include "fssd/check.hpp"
#include "fssd/evaluate.hpp"
#include "fssd/gradcheck.hpp"
#include "fssd/png_io.hpp"
#include "fssd/train.hpp"

using namespace fssd;
using nlohmann::json;

namespace {

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& init_ckpt, std::int64_t seed_override) {
  FullConfig cfg = load_config_file(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed_override);
  std::cout << "building dataset (" << cfg.dataset.num_train << " train / "
            << cfg.dataset.num_test << " test images)\n";
  DatasetCache data = build_dataset(cfg.dataset);
  if (data.placement_shortfalls > 0)
    std::cout << "note: " << data.placement_shortfalls
              << " objects dropped after 100 placement retries\n";
  TrainResult result = train_model(cfg, data, out, init_ckpt, &std::cout);
  std::cout << "saved checkpoint to " << out << " (step " << result.final_step << ")\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& split, bool eleven_point) {
  FullConfig cfg = load_config_file(config_path);
  if (eleven_point) cfg.eval.interpolation = ApInterpolation::kElevenPoint;

  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto model = std::make_shared<Detector>(cfg.model, /*rng_seed=*/0);
  if (ckpt.config_hash() != config_hash(cfg.model))
    std::cerr << "warning: checkpoint config hash differs from --config; proceeding by "
                 "tensor-name matching\n";
  auto params = model->params(1.0);
  auto buffers = model->buffers();
  RestoreReport report = restore_state(ckpt, params, buffers);
  if (!report.shape_mismatch.empty() || !report.missing_in_checkpoint.empty())
    std::cerr << "warning: " << report.shape_mismatch.size() << " shape mismatches, "
              << report.missing_in_checkpoint.size() << " tensors left at init\n";

  DatasetCache data = build_dataset(cfg.dataset);
  const auto& images = split == "train" ? data.train : data.test;
  EvalReport eval = evaluate_model(*model, images, cfg.eval, data.image_size);
  json out = eval.to_json();
  out["split"] = split;
  out["checkpoint"] = ckpt_path;
  out["step"] = ckpt.step();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_detect(const std::string& ckpt_path, const std::string& image_path,
               double conf_threshold, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto model = detector_from_checkpoint(ckpt);
  const int S = model->config().backbone.input_size;

  ImageRgb image = read_png(image_path);
  FSSD_CHECK(image.width == S && image.height == S,
             "detect: model expects " << S << "x" << S << ", image is " << image.width << "x"
                                      << image.height);
  SampleImage sample;
  sample.rgb = std::move(image.rgb);

  PostprocessConfig post;
  post.conf_threshold = conf_threshold;
  auto detections = detect_single(*model, sample, S, post);

  json out = json::array();
  for (const auto& d : detections) {
    const std::string name = d.label >= 1 && d.label <= kNumShapeClasses
                                 ? shape_class_names()[d.label - 1]
                                 : std::to_string(d.label);
    out.push_back({{"label", d.label},
                   {"class", name},
                   {"score", d.score},
                   {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}});
  }
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(out_path);
    f << out.dump(2) << "\n";
    std::cout << "wrote " << detections.size() << " detections to " << out_path << "\n";
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& axes,
               const std::string& out_path) {
  FullConfig cfg = load_config_file(config_path);
  const std::string workdir = out_path + ".work";
  json report = run_ablation(cfg, axes, workdir, &std::cout);
  std::ofstream f(out_path);
  FSSD_CHECK(f, "ablate: cannot open '" << out_path << "'");
  f << report.dump(2) << "\n";

  std::cout << "\n" << std::string(64, '-') << "\n";
  for (const auto& row : report.at("cells")) {
    std::cout << row.at("name").get<std::string>() << "  mAP "
              << row.at("mAP").get<double>() << "\n";
  }
  std::cout << "report written to " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  const bool ok = run_gradcheck_suite(seed, tolerance, std::cout);
  return ok ? 0 : 1;
}

int cmd_priors(int input_size) {
  FullConfig cfg = paper_config(input_size);
  const int base = cfg.model.backbone.stage_output_size(2);
  auto sizes =
      pyramid_size_chain(base, static_cast<int>(cfg.model.fusion.pyramid_channels.size()));
  auto specs = make_level_specs(sizes, cfg.model.priors);
  PriorBoxSet priors = generate_priors(specs);
  std::cout << priors.total() << "\n";
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const int a = static_cast<int>(specs[i].aspect_ratios.size()) + 1;
    std::cout << "level " << i << ": " << specs[i].feature_size << "x" << specs[i].feature_size
              << " cells, " << a << " priors/cell = " << priors.level_counts[i] << "\n";
  }
  return 0;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  FullConfig cfg = load_config_file(spec_path);
  DatasetCache data = build_dataset(cfg.dataset);
  const int S = data.image_size;

  namespace fs = std::filesystem;
  for (const char* split : {"train", "test"}) {
    fs::create_directories(fs::path(out_dir) / "images" / split);
    const auto& images = std::string(split) == "train" ? data.train : data.test;
    std::ofstream annotations(fs::path(out_dir) / (std::string(split) + ".jsonl"));
    for (std::size_t i = 0; i < images.size(); ++i) {
      const int id = static_cast<int>(std::string(split) == "train"
                                          ? i
                                          : i + data.train.size());
      ImageRgb png{S, S, images[i].rgb};
      write_png((fs::path(out_dir) / "images" / split / (std::to_string(id) + ".png")).string(),
                png);
      json boxes = json::array();
      json labels = json::array();
      for (const auto& a : images[i].annotations) {
        Box b = a.normalized(S);
        boxes.push_back({b.x0, b.y0, b.x1, b.y1});
        labels.push_back(a.label);
      }
      annotations << json{{"id", id}, {"boxes", boxes}, {"labels", labels}}.dump() << "\n";
    }
  }
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test images to " << out_dir << "\n";
  if (data.placement_shortfalls > 0)
    std::cout << "note: " << data.placement_shortfalls
              << " objects dropped after 100 placement retries\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-fusion single-shot detector on synthetic shape data"};
  app.require_subcommand(1);

  std::string config_path, out_path, init_ckpt, ckpt_path, image_path, split = "test";
  std::string axes, spec_path, out_dir;
  std::int64_t seed_override = -1;
  std::uint64_t gc_seed = 1;
  double tolerance = 0.0, conf_threshold = 0.5;
  bool eleven_point = false;
  int input_size = 300;

  auto* train = app.add_subcommand("train", "train a detector");
  train->add_option("--config", config_path, "config JSON")->required();
  train->add_option("--out", out_path, "output checkpoint")->required();
  train->add_option("--init-ckpt", init_ckpt, "warm-start checkpoint (name-matched)");
  train->add_option("--seed", seed_override, "override train.seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (mAP report)");
  eval->add_option("--config", config_path, "config JSON")->required();
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));
  eval->add_flag("--eleven-point", eleven_point, "11-point AP interpolation");

  auto* detect = app.add_subcommand("detect", "run detection on a PNG");
  detect->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  detect->add_option("--image", image_path, "input PNG")->required();
  detect->add_option("--conf-threshold", conf_threshold, "score threshold");
  detect->add_option("--out", out_path, "write detections JSON here");

  auto* ablate = app.add_subcommand("ablate", "train/evaluate an ablation grid");
  ablate->add_option("--config", config_path, "base config JSON")->required();
  ablate->add_option("--axes", axes, "table1 | table2 | fusion-vs-none | JSON grid")
      ->required();
  ablate->add_option("--out", out_path, "report JSON path")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "base seed");
  gradcheck->add_option("--tolerance", tolerance, "override every per-check tolerance");

  auto* priors = app.add_subcommand("priors", "print prior counts per level");
  priors->add_option("--input-size", input_size, "300 or 512")
      ->check(CLI::IsMember({300, 512}));

  auto* gen = app.add_subcommand("gen-data", "write a ShapeWorld dataset to disk");
  gen->add_option("--spec", spec_path, "dataset spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_path, init_ckpt, seed_override);
    if (eval->parsed()) return cmd_eval(config_path, ckpt_path, split, eleven_point);
    if (detect->parsed()) return cmd_detect(ckpt_path, image_path, conf_threshold, out_path);
    if (ablate->parsed()) return cmd_ablate(config_path, axes, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, tolerance);
    if (priors->parsed()) return cmd_priors(input_size);
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
