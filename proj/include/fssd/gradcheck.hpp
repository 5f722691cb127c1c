#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fssd/rng.hpp"
#include "fssd/tensor.hpp"

namespace fssd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  int probes_checked = 0;
  // Probes the harness refused to score: the +-h pair straddled a ReLU/pool kink
  // (detected by a blown-up second difference), or both gradients sat below the
  // finite-difference noise floor. Differentiability at the point is a stated
  // precondition; a wrong-but-smooth gradient is never skipped.
  int probes_skipped = 0;
  bool passed() const { return probes_checked > 0 && max_rel_error <= tolerance; }
};

struct GradCheckInput {
  std::string name;
  Tensor tensor;  // must require grad and be a leaf
};

// Central-difference check of d(forward())/d(inputs). `forward` rebuilds the graph
// from the inputs' current data and returns a scalar. Up to `samples_per_input`
// coordinates are probed per input (all of them when the tensor is small).
// Relative error: |a - n| / max(|a|, |n|, 1e-8), step h = 1e-5.
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           std::vector<GradCheckInput> inputs, double tolerance, Rng& rng,
                           int samples_per_input = 16, double h = 1e-5);

// The full finite-difference sweep behind the `gradcheck` CLI subcommand: every
// kernel at its stated tolerance (linear ops 1e-7, batch norm 1e-4, losses 1e-6,
// end-to-end multibox loss 1e-3) over `seeds` seeds. `tolerance_override` > 0
// replaces every per-check tolerance. Returns false when any check fails.
bool run_gradcheck_suite(std::uint64_t base_seed, double tolerance_override,
                         std::ostream& log, int seeds = 10);

}  // namespace fssd
