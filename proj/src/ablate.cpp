#include "fssd/ablate.hpp"

#include <filesystem>
#include <ostream>

#include "fssd/check.hpp"

namespace fssd {

using nlohmann::json;

namespace {

std::vector<std::string> source_preset(const std::string& name) {
  if (name == "conv3-conv7") return {"conv3_3", "conv4_3", "fc_7", "conv7_2"};
  if (name == "conv4-conv7") return {"conv4_3", "fc_7", "conv7_2"};
  if (name == "conv4-fc7") return {"conv4_3", "fc_7"};
  fail("ablate: unknown source-layer preset '" + name + "'");
}

AblationCell make_cell(const FullConfig& base, std::string name) {
  AblationCell cell;
  cell.name = std::move(name);
  cell.config = base;
  return cell;
}

std::vector<AblationCell> table2(const FullConfig& base) {
  struct Row {
    const char* name;
    const char* sources;
    bool bn;
    const char* fusion_op;
    const char* init;
  };
  // mirrors the published ablation: BN, warm start, fusion op, fused layer range
  const Row rows[] = {
      {"concat conv3-conv7 +BN scratch", "conv3-conv7", true, "concat", ""},
      {"concat conv3-conv7 +BN ssd-init", "conv3-conv7", true, "concat", "ssd"},
      {"concat conv4-conv7 +BN ssd-init", "conv4-conv7", true, "concat", "ssd"},
      {"concat conv4-fc7 +BN ssd-init", "conv4-fc7", true, "concat", "ssd"},
      {"concat conv3-conv7 +BN backbone-init", "conv3-conv7", true, "concat", "backbone"},
      {"concat conv3-conv7 -BN ssd-init", "conv3-conv7", false, "concat", "ssd"},
      {"ele-sum conv3-conv7 +BN ssd-init", "conv3-conv7", true, "ele-sum", "ssd"},
  };
  std::vector<AblationCell> cells;
  for (const auto& row : rows) {
    AblationCell cell = make_cell(base, row.name);
    cell.config.model.fusion.source_layers = source_preset(row.sources);
    cell.config.model.fusion.normalize_after_fusion = row.bn;
    cell.config.model.fusion.fusion_op =
        std::string(row.fusion_op) == "concat" ? FusionOp::kConcat : FusionOp::kElementSum;
    cell.init = row.init;
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<AblationCell> table1(const FullConfig& base) {
  std::vector<AblationCell> cells;
  const std::pair<const char*, PyramidVariant> variants[] = {
      {"simple blocks incl. fused map (A)", PyramidVariant::kA},
      {"simple blocks after fused map (B)", PyramidVariant::kB},
      {"bottleneck blocks after fused map (C)", PyramidVariant::kC},
  };
  for (const auto& [name, variant] : variants) {
    AblationCell cell = make_cell(base, name);
    cell.config.model.fusion.pyramid_variant = variant;
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<AblationCell> fusion_vs_none(const FullConfig& base) {
  AblationCell fused = make_cell(base, "fusion");
  fused.config.model.fusion_enabled = true;
  AblationCell plain = make_cell(base, "no-fusion");
  plain.config.model.fusion_enabled = false;
  return {fused, plain};
}

void apply_axis(FullConfig& cfg, const std::string& axis, const json& value) {
  if (axis == "fusion_op") {
    cfg.model.fusion.fusion_op =
        value.get<std::string>() == "concat" ? FusionOp::kConcat : FusionOp::kElementSum;
  } else if (axis == "normalize_after_fusion") {
    cfg.model.fusion.normalize_after_fusion = value.get<bool>();
  } else if (axis == "source_layers") {
    if (value.is_string())
      cfg.model.fusion.source_layers = source_preset(value.get<std::string>());
    else
      cfg.model.fusion.source_layers = value.get<std::vector<std::string>>();
  } else if (axis == "pyramid_variant") {
    const auto v = value.get<std::string>();
    cfg.model.fusion.pyramid_variant = v == "A"   ? PyramidVariant::kA
                                       : v == "C" ? PyramidVariant::kC
                                                  : PyramidVariant::kB;
  } else if (axis == "fusion_enabled") {
    cfg.model.fusion_enabled = value.get<bool>();
  } else {
    fail("ablate: unknown axis '" + axis + "'");
  }
}

std::vector<AblationCell> grid_cells(const FullConfig& base, const json& grid) {
  FSSD_CHECK(grid.is_object(), "ablate: axes spec must be a JSON object or a preset name");
  std::vector<AblationCell> cells{make_cell(base, "")};
  for (const auto& [axis, values] : grid.items()) {
    FSSD_CHECK(values.is_array(), "ablate: axis '" << axis << "' must list its values");
    std::vector<AblationCell> next;
    for (const auto& cell : cells) {
      for (const auto& value : values) {
        AblationCell expanded = cell;
        apply_axis(expanded.config, axis, value);
        expanded.name += (expanded.name.empty() ? "" : " ") + axis + "=" + value.dump();
        next.push_back(std::move(expanded));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

}  // namespace

std::vector<AblationCell> ablation_cells(const FullConfig& base, const std::string& axes_spec) {
  if (axes_spec == "table2") return table2(base);
  if (axes_spec == "table1") return table1(base);
  if (axes_spec == "fusion-vs-none") return fusion_vs_none(base);
  return grid_cells(base, json::parse(axes_spec));
}

json run_ablation(const FullConfig& base, const std::string& axes_spec,
                  const std::string& workdir, std::ostream* log) {
  auto cells = ablation_cells(base, axes_spec);
  std::filesystem::create_directories(workdir);

  DatasetCache data = build_dataset(base.dataset);

  // warm-start source: a no-fusion baseline trained with the shared budget
  std::string baseline_ckpt;
  for (const auto& cell : cells) {
    if (cell.init.empty()) continue;
    baseline_ckpt = (std::filesystem::path(workdir) / "baseline.ckpt").string();
    if (log) *log << "training no-fusion baseline for warm starts\n";
    FullConfig baseline = base;
    baseline.model.fusion_enabled = false;
    train_model(baseline, data, baseline_ckpt, "", log);
    break;
  }

  json rows = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    if (log) *log << "cell " << i + 1 << "/" << cells.size() << ": " << cell.name << "\n";
    const std::string ckpt =
        (std::filesystem::path(workdir) / ("cell" + std::to_string(i) + ".ckpt")).string();

    std::string init;
    if (cell.init == "ssd") init = baseline_ckpt;
    if (cell.init == "backbone") {
      // materialize a backbone-only subset of the baseline
      Checkpoint full = load_checkpoint(baseline_ckpt);
      Checkpoint subset;
      for (auto& t : full.tensors)
        if (t.name.rfind("backbone.", 0) == 0 || t.name.rfind("meta/", 0) == 0)
          subset.tensors.push_back(std::move(t));
      init = (std::filesystem::path(workdir) / "baseline_backbone.ckpt").string();
      save_checkpoint(init, subset);
    }

    TrainResult trained = train_model(cell.config, data, ckpt, init, log);
    EvalReport report =
        evaluate_model(*trained.model, data.test, cell.config.eval, data.image_size);

    const double final_loss = trained.loss_log.empty() ? 0.0 : trained.loss_log.back();
    rows.push_back({{"name", cell.name},
                    {"init", cell.init},
                    {"mAP", report.overall.map},
                    {"small_mAP", std::isnan(report.small_objects.map)
                                      ? json()
                                      : json(report.small_objects.map)},
                    {"large_mAP", std::isnan(report.large_objects.map)
                                      ? json()
                                      : json(report.large_objects.map)},
                    {"final_loss", final_loss},
                    {"checkpoint", ckpt}});
    if (log) *log << "  mAP " << report.overall.map << "\n";
  }

  return json{{"axes", axes_spec},
              {"iterations", base.train.iterations},
              {"seed", base.train.seed},
              {"cells", rows}};
}

}  // namespace fssd
