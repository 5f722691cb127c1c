#pragma once

#include <optional>

#include "fssd/config.hpp"

namespace fssd {

// Full detector: backbone -> (fusion module | plain SSD-style pyramid) -> multibox
// head, plus the matching prior set. The no-fusion path feeds the head straight from
// the backbone taps at and below the base layer, extended by stride-2 blocks, so
// both paths share the prior geometry and are directly comparable.
class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t rng_seed);

  MultiboxHead::Output forward(const Tensor& images, bool training);

  // Detection-map spatial sizes (also the prior-level sizes).
  const std::vector<int>& level_sizes() const { return level_sizes_; }
  const PriorBoxSet& priors() const { return priors_; }
  const DetectorConfig& config() const { return cfg_; }
  int num_classes() const { return cfg_.num_classes; }

  std::vector<ParamRef> params(double fusion_lr_multiplier) const;
  std::vector<std::pair<std::string, Tensor>> buffers() const;

 private:
  PyramidFeatures plain_pyramid(const FeatureMapSet& taps) const;

  DetectorConfig cfg_;
  Backbone backbone_;
  std::optional<FusionModule> fusion_;
  std::vector<std::string> plain_taps_;            // no-fusion: taps used as maps
  std::vector<ops::ConvParams> plain_extra_;       // no-fusion: stride-2 extensions
  std::optional<MultiboxHead> head_;
  std::vector<int> level_sizes_;
  PriorBoxSet priors_;
};

}  // namespace fssd
