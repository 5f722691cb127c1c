#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fssd/optim.hpp"
#include "fssd/ops.hpp"
#include "fssd/tensor.hpp"

namespace fssd {

// Feed-forward stack standing in for VGG16 with the same tap geometry. Each main
// stage is two 3x3 stride-1 convs + ReLU followed by a ceil-mode 2x2/s2 max-pool;
// one extra single-conv stage after the fc_7 tap realizes the conv7_2 map at 10x10
// for a 300 input (19 -> ceil-pool -> 10).
struct BackboneConfig {
  int input_size = 300;
  int input_channels = 3;
  std::vector<int> stage_channels = {16, 32, 64, 128};
  int extra_channels = 128;  // width of the conv7_2-analog stage
  // (tap name, stage index); index stage_channels.size() refers to the extra stage.
  std::vector<std::pair<std::string, int>> taps = {
      {"conv3_3", 1}, {"conv4_3", 2}, {"fc_7", 3}, {"conv7_2", 4}};

  int stage_count() const { return static_cast<int>(stage_channels.size()) + 1; }
  // Spatial size of stage `index` output: input halved (ceil) index+1 times.
  int stage_output_size(int index) const;
  void validate() const;

  // Paper-like widths, for shape tests only.
  static BackboneConfig vgg_like(int input_size);
};

// Ordered tap name -> feature map, plus recorded spatial size. Sizes strictly
// decrease along tap order.
struct FeatureMapSet {
  struct Entry {
    std::string name;
    Tensor map;
    int spatial_size;
  };
  std::vector<Entry> entries;

  const Entry& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

class Backbone {
 public:
  Backbone(BackboneConfig cfg, std::uint64_t rng_seed);

  // image: (n, input_channels, input_size, input_size)
  FeatureMapSet forward(const Tensor& image) const;

  const BackboneConfig& config() const { return cfg_; }
  // Channel width of a tap, needed to size the fusion projections.
  int tap_channels(const std::string& name) const;

  void collect_params(std::vector<ParamRef>& out) const;

 private:
  BackboneConfig cfg_;
  struct Stage {
    std::vector<ops::ConvParams> convs;
  };
  std::vector<Stage> stages_;
};

}  // namespace fssd
