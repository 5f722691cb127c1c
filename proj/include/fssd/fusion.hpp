#pragma once

#include <map>
#include <string>
#include <vector>

#include "fssd/backbone.hpp"
#include "fssd/optim.hpp"
#include "fssd/ops.hpp"

namespace fssd {

enum class FusionOp { kConcat, kElementSum };
enum class PyramidVariant { kA, kB, kC };

// One ablation row = one value of this type: which taps feed the fusion (C), the
// per-source projection widths (T), concat vs element-wise sum (phi_f), the optional
// post-fusion batch norm, and the pyramid generator layout (phi_p).
struct FusionConfig {
  std::vector<std::string> source_layers = {"conv4_3", "fc_7", "conv7_2"};
  std::vector<int> projection_channels = {256};  // one entry broadcasts to all sources
  FusionOp fusion_op = FusionOp::kConcat;
  bool normalize_after_fusion = true;
  std::string base_layer = "conv4_3";
  PyramidVariant pyramid_variant = PyramidVariant::kB;
  std::vector<int> pyramid_channels = {512, 512, 256, 256, 256, 256};

  int projection_for(std::size_t source_index) const;
  int fused_channels() const;
  void validate() const;
};

// The detection-map size chain: halve (ceil) per down-sampling block, with the
// 3 -> 1 hop realized by a pad-0 conv (this is what yields 38,19,10,5,3,1).
int next_pyramid_size(int size);
std::vector<int> pyramid_size_chain(int base_size, int levels);

struct PyramidFeatures {
  std::vector<Tensor> maps;  // spatial sizes strictly halving from the base
  std::vector<int> sizes() const;
  std::vector<int> channels() const;
};

// Owns the fusion-module parameters: per-source 1x1 projections, the post-fusion
// batch norm, and the pyramid generator blocks.
class FusionModule {
 public:
  // tap_channels: channel width per source tap (from the backbone).
  FusionModule(FusionConfig cfg, const std::map<std::string, int>& tap_channels,
               std::uint64_t rng_seed);

  // T_i: 1x1 projection, then pool / identity / bilinear onto the base size.
  Tensor transform_source(const Tensor& x, int target_size, std::size_t source_index) const;

  // phi_f (+ optional BN). Inputs must already sit at the base size.
  Tensor fuse(const std::vector<Tensor>& transformed, bool training);

  // phi_p over the fused map.
  PyramidFeatures generate_pyramid(const Tensor& fused) const;

  // Eq. (1)-(2) composition: transform -> fuse -> pyramid.
  PyramidFeatures forward(const FeatureMapSet& taps, bool training);

  const FusionConfig& config() const { return cfg_; }
  void collect_params(std::vector<ParamRef>& out, double lr_multiplier) const;
  // Non-learnable state (BN running stats) that still belongs in checkpoints.
  void collect_buffers(std::vector<std::pair<std::string, Tensor>>& out) const;
  ops::BatchNormParams& bn() { return bn_; }

 private:
  FusionConfig cfg_;
  std::vector<ops::ConvParams> projections_;
  ops::BatchNormParams bn_;
  struct PyramidBlock {
    ops::ConvParams reduce;  // variant C only (1x1, half width)
    ops::ConvParams conv;
    bool has_reduce = false;
  };
  std::vector<PyramidBlock> blocks_;
};

}  // namespace fssd
