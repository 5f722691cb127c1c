#include <cmath>
#include <ostream>

#include "fssd/detector.hpp"
#include "fssd/gradcheck.hpp"
#include "fssd/ops.hpp"

namespace fssd {

namespace {

struct SuiteState {
  std::ostream& log;
  double override_tol;
  bool all_passed = true;

  void run(const char* name, std::uint64_t seed, double tolerance,
           const std::function<Tensor()>& forward, std::vector<GradCheckInput> inputs,
           int samples = 12) {
    const double tol = override_tol > 0 ? override_tol : tolerance;
    Rng rng(seed * 2654435761ull + 17);
    auto report = grad_check(forward, std::move(inputs), tol, rng, samples);
    if (!report.passed()) {
      all_passed = false;
      log << "  FAIL " << name << " (seed " << seed << "): max rel error "
          << report.max_rel_error << " > " << tol << " at " << report.worst_input << "["
          << report.worst_index << "]\n";
    }
  }
};

ops::ConvParams random_conv(int out_c, int in_c, int k, int stride, int pad, Rng& rng) {
  ops::ConvParams p;
  p.weight = Tensor::uniform({out_c, in_c, k, k}, rng, -1.0, 1.0, true);
  p.bias = Tensor::uniform({out_c, 1, 1, 1}, rng, -0.5, 0.5, true);
  p.stride = stride;
  p.padding = pad;
  return p;
}

// Tiny full detector (80-px input, 10x10 base) whose multibox loss exercises the
// whole differentiable path: backbone, projections, BN, pyramid, heads, CE + L1.
void end_to_end_check(SuiteState& suite, std::uint64_t seed) {
  DetectorConfig cfg;
  cfg.backbone.input_size = 80;
  cfg.backbone.stage_channels = {2, 3, 4, 5};
  cfg.backbone.extra_channels = 5;
  cfg.fusion.projection_channels = {4};
  cfg.fusion.pyramid_channels = {6, 6, 6, 4};
  cfg.num_classes = 4;

  Detector model(cfg, seed);
  Rng rng(seed + 31);
  // Zero-init biases park dead-patch pre-activations exactly on the ReLU corner
  // (relu zeros in, zero bias out), where no one-sided convention matches a central
  // difference. Nudge every bias off zero so the check point is differentiable.
  for (auto& p : model.params(1.0)) {
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta"))
      for (auto& v : p.tensor.data_mut()) v = rng.uniform(-0.05, 0.05);
  }
  Tensor image = Tensor::uniform({1, 3, 80, 80}, rng, -0.5, 0.5, false);
  std::vector<std::vector<GroundTruth>> gts{{
      {{0.1, 0.1, 0.45, 0.45}, 1},
      {{0.55, 0.5, 0.9, 0.95}, 2},
  }};

  // The selection (matching + mined negatives) is frozen at the base point: it is
  // piecewise constant in the parameters, and backward differentiates the branch
  // chosen there. FD probes must stay on that branch.
  auto base_out = model.forward(image, /*training=*/true);
  const LossSelection selection =
      select_loss_rows(base_out, gts, model.priors(), 0.5, 3.0, cfg.priors.variances);

  auto forward = [&] {
    auto out = model.forward(image, /*training=*/true);
    return multibox_loss_for(out, selection).loss;
  };

  // probe a handful of parameters spread across the network
  auto params = model.params(1.0);
  std::vector<GradCheckInput> inputs;
  for (std::size_t i = 0; i < params.size(); i += std::max<std::size_t>(1, params.size() / 7))
    inputs.push_back({params[i].name, params[i].tensor});
  suite.run("end-to-end multibox loss", seed, 1e-3, forward, std::move(inputs), 3);
}

}  // namespace

bool run_gradcheck_suite(std::uint64_t base_seed, double tolerance_override,
                         std::ostream& log, int seeds) {
  SuiteState suite{log, tolerance_override};

  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    Rng rng(seed);

    {
      Tensor x = Tensor::uniform({2, 3, 6, 6}, rng, -1, 1, true);
      auto conv = random_conv(4, 3, 3, 1, 1, rng);
      Tensor probe = Tensor::uniform({2, 4, 6, 6}, rng, -1, 1);
      suite.run("conv2d 3x3 s1", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::conv2d(x, conv), probe); },
                {{"x", x}, {"weight", conv.weight}, {"bias", conv.bias}});
    }
    {
      Tensor x = Tensor::uniform({1, 4, 7, 7}, rng, -1, 1, true);
      auto conv = random_conv(3, 4, 3, 2, 1, rng);
      Tensor probe = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1);
      suite.run("conv2d 3x3 s2", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::conv2d(x, conv), probe); },
                {{"x", x}, {"weight", conv.weight}, {"bias", conv.bias}});
    }
    {
      Tensor x = Tensor::uniform({1, 5, 4, 4}, rng, -1, 1, true);
      auto conv = random_conv(3, 5, 1, 1, 0, rng);
      Tensor probe = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1);
      suite.run("conv2d 1x1", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::conv2d(x, conv), probe); },
                {{"x", x}, {"weight", conv.weight}, {"bias", conv.bias}});
    }
    {
      // distinct values keep the argmax stable under the FD step
      std::vector<double> vals(64);
      std::vector<int> order(64);
      for (int i = 0; i < 64; ++i) order[i] = i;
      for (int i = 63; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
      for (int i = 0; i < 64; ++i) vals[i] = order[i] * 0.11 - 3.0;
      Tensor x = Tensor::from_values({1, 1, 8, 8}, vals, true);
      Tensor probe = Tensor::uniform({1, 1, 4, 4}, rng, -1, 1);
      suite.run("max_pool2d", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::max_pool2d(x, 2, 2, true), probe); },
                {{"x", x}}, 20);
    }
    {
      Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1, true);
      Tensor probe = Tensor::uniform({1, 2, 8, 8}, rng, -1, 1);
      suite.run("bilinear_resize up", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::bilinear_resize(x, 8, 8), probe); },
                {{"x", x}});
    }
    {
      Tensor x = Tensor::uniform({2, 3, 4, 4}, rng, -2, 2, true);
      auto bn = ops::BatchNormParams::make(3);
      for (auto& g : bn.gamma.data_mut()) g = rng.uniform(0.5, 1.5);
      for (auto& b : bn.beta.data_mut()) b = rng.uniform(-0.5, 0.5);
      Tensor probe = Tensor::uniform({2, 3, 4, 4}, rng, -1, 1);
      suite.run("batch_norm training", seed, 1e-4,
                [&] {
                  auto local = bn;
                  local.running_mean = Tensor::zeros({1, 3, 1, 1});
                  local.running_var = Tensor::full({1, 3, 1, 1}, 1.0);
                  return ops::weighted_sum(ops::batch_norm(x, local, true), probe);
                },
                {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
    }
    {
      Tensor x = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1, true);
      for (auto& v : x.data_mut())
        if (std::abs(v) < 5e-3) v = 0.05;
      Tensor probe = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1);
      suite.run("relu", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::relu(x), probe); }, {{"x", x}});
    }
    {
      Tensor a = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1, true);
      Tensor b = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1, true);
      Tensor probe = Tensor::uniform({1, 4, 3, 3}, rng, -1, 1);
      suite.run("concat_channels", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::concat_channels({a, b}), probe); },
                {{"a", a}, {"b", b}});
      Tensor probe2 = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1);
      suite.run("elementwise_add", seed, 1e-7,
                [&] { return ops::weighted_sum(ops::elementwise_add({a, b}), probe2); },
                {{"a", a}, {"b", b}});
    }
    {
      Tensor logits = Tensor::uniform({5, 4, 1, 1}, rng, -2, 2, true);
      std::vector<int> targets;
      for (int r = 0; r < 5; ++r) targets.push_back(rng.uniform_int(0, 3));
      suite.run("softmax_cross_entropy", seed, 1e-6,
                [&] { return ops::reduce_sum(ops::softmax_cross_entropy(logits, targets)); },
                {{"logits", logits}}, 20);
    }
    {
      Tensor pred = Tensor::uniform({1, 2, 3, 3}, rng, -2, 2, true);
      for (auto& v : pred.data_mut())
        if (std::abs(std::abs(v) - 1.0) < 5e-3) v *= 1.05;
      Tensor target = Tensor::zeros({1, 2, 3, 3});
      suite.run("smooth_l1", seed, 1e-6,
                [&] { return ops::reduce_sum(ops::smooth_l1(pred, target)); },
                {{"pred", pred}});
    }
    end_to_end_check(suite, seed);
  }

  log << (suite.all_passed ? "gradcheck: all checks passed" : "gradcheck: FAILURES above")
      << " (" << seeds << " seeds)\n";
  return suite.all_passed;
}

}  // namespace fssd
