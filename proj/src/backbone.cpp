#include "fssd/backbone.hpp"

#include <unordered_set>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

int BackboneConfig::stage_output_size(int index) const {
  int size = input_size;
  for (int i = 0; i <= index; ++i) size = (size + 1) / 2;
  return size;
}

void BackboneConfig::validate() const {
  FSSD_CHECK(input_size >= 8, "backbone: input size too small");
  FSSD_CHECK(!stage_channels.empty(), "backbone: no stages");
  for (int c : stage_channels) FSSD_CHECK(c >= 1, "backbone: zero-width stage");
  FSSD_CHECK(extra_channels >= 1, "backbone: zero-width extra stage");
  std::unordered_set<std::string> names;
  for (const auto& [name, idx] : taps) {
    FSSD_CHECK(idx >= 0 && idx < stage_count(), "backbone: tap '" << name
                                                                  << "' references stage " << idx
                                                                  << " of " << stage_count());
    FSSD_CHECK(names.insert(name).second, "backbone: duplicate tap name '" << name << "'");
  }
}

BackboneConfig BackboneConfig::vgg_like(int input_size) {
  BackboneConfig cfg;
  cfg.input_size = input_size;
  cfg.stage_channels = {64, 256, 512, 1024};
  cfg.extra_channels = 512;
  return cfg;
}

const FeatureMapSet::Entry& FeatureMapSet::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  fail("feature map set: no tap named '" + name + "'");
}

bool FeatureMapSet::contains(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

Backbone::Backbone(BackboneConfig cfg, std::uint64_t rng_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(rng_seed);
  int in_c = cfg_.input_channels;
  for (int s = 0; s < cfg_.stage_count(); ++s) {
    const bool extra = s == static_cast<int>(cfg_.stage_channels.size());
    const int out_c = extra ? cfg_.extra_channels : cfg_.stage_channels[s];
    const int conv_count = extra ? 1 : 2;
    Stage stage;
    for (int j = 0; j < conv_count; ++j) {
      ops::ConvParams p;
      const int fan_in = in_c * 9, fan_out = out_c * 9;
      p.weight = Tensor::xavier_uniform({out_c, in_c, 3, 3}, fan_in, fan_out, rng);
      p.bias = Tensor::zeros({out_c, 1, 1, 1}, /*requires_grad=*/true);
      p.stride = 1;
      p.padding = 1;
      stage.convs.push_back(std::move(p));
      in_c = out_c;
    }
    stages_.push_back(std::move(stage));
  }
}

FeatureMapSet Backbone::forward(const Tensor& image) const {
  const Shape s = image.shape();
  FSSD_CHECK(s.c == cfg_.input_channels && s.h == cfg_.input_size && s.w == cfg_.input_size,
             "backbone: expected " << cfg_.input_channels << "x" << cfg_.input_size << "x"
                                   << cfg_.input_size << " image, got " << s.str());
  std::vector<Tensor> stage_out(stages_.size());
  Tensor x = image;
  for (std::size_t stage = 0; stage < stages_.size(); ++stage) {
    for (const auto& conv : stages_[stage].convs) x = ops::relu(ops::conv2d(x, conv));
    x = ops::max_pool2d(x, 2, 2, /*ceil_mode=*/true);
    stage_out[stage] = x;
  }
  FeatureMapSet out;
  for (const auto& [name, idx] : cfg_.taps)
    out.entries.push_back({name, stage_out[idx], stage_out[idx].shape().h});
  for (std::size_t i = 1; i < out.entries.size(); ++i)
    FSSD_CHECK(out.entries[i].spatial_size < out.entries[i - 1].spatial_size,
               "backbone: tap sizes must strictly decrease along tap order");
  return out;
}

int Backbone::tap_channels(const std::string& name) const {
  for (const auto& [tap, idx] : cfg_.taps) {
    if (tap != name) continue;
    return idx == static_cast<int>(cfg_.stage_channels.size()) ? cfg_.extra_channels
                                                               : cfg_.stage_channels[idx];
  }
  fail("backbone: no tap named '" + name + "'");
}

void Backbone::collect_params(std::vector<ParamRef>& out) const {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t j = 0; j < stages_[s].convs.size(); ++j) {
      const auto prefix = "backbone.stage" + std::to_string(s) + ".conv" + std::to_string(j);
      out.push_back({prefix + ".weight", stages_[s].convs[j].weight, 1.0});
      out.push_back({prefix + ".bias", stages_[s].convs[j].bias, 1.0});
    }
  }
}

}  // namespace fssd
