#pragma once

#include <json.hpp>

#include "fssd/evaluate.hpp"

namespace fssd {

struct AblationCell {
  std::string name;
  FullConfig config;
  // "", "backbone" (warm-start backbone.* from the baseline checkpoint) or
  // "ssd" (warm-start everything name-matched from the no-fusion baseline).
  std::string init = "";
};

// Built-in grids. "table2" varies BN / fusion op / fused layer range / init mode,
// "table1" the pyramid generator variant, "fusion-vs-none" the module itself.
std::vector<AblationCell> ablation_cells(const FullConfig& base, const std::string& axes_spec);

// Trains and evaluates every cell with the shared seed/budget and emits one table.
nlohmann::json run_ablation(const FullConfig& base, const std::string& axes_spec,
                            const std::string& workdir, std::ostream* log = nullptr);

}  // namespace fssd
