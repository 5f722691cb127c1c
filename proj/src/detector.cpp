#include "fssd/detector.hpp"

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

Detector::Detector(const DetectorConfig& cfg, std::uint64_t rng_seed)
    : cfg_(cfg), backbone_(cfg.backbone, Rng::mix(rng_seed, 1)) {
  std::map<std::string, int> tap_channels;
  for (const auto& [name, idx] : cfg_.backbone.taps)
    tap_channels[name] = backbone_.tap_channels(name);

  const int levels = static_cast<int>(cfg_.fusion.pyramid_channels.size());
  std::vector<int> level_channels;

  if (cfg_.fusion_enabled) {
    fusion_.emplace(cfg_.fusion, tap_channels, Rng::mix(rng_seed, 2));
    const int base_stage = [&] {
      for (const auto& [name, idx] : cfg_.backbone.taps)
        if (name == cfg_.fusion.base_layer) return idx;
      fail("detector: base layer '" + cfg_.fusion.base_layer + "' is not a tap");
    }();
    const int base_size = cfg_.backbone.stage_output_size(base_stage);
    level_sizes_ = pyramid_size_chain(base_size, levels);
    for (int i = 0; i < levels; ++i)
      level_channels.push_back(i == 0 && cfg_.fusion.pyramid_variant == PyramidVariant::kA
                                   ? cfg_.fusion.fused_channels()
                                   : cfg_.fusion.pyramid_channels[i]);
  } else {
    // SSD-style: taps from the base layer on, then stride-2 extension blocks
    bool seen_base = false;
    for (const auto& [name, idx] : cfg_.backbone.taps) {
      if (name == cfg_.fusion.base_layer) seen_base = true;
      if (!seen_base) continue;
      plain_taps_.push_back(name);
      level_sizes_.push_back(cfg_.backbone.stage_output_size(idx));
      level_channels.push_back(tap_channels.at(name));
    }
    FSSD_CHECK(seen_base, "detector: base layer '" << cfg_.fusion.base_layer
                                                   << "' is not a tap");
    FSSD_CHECK(static_cast<int>(plain_taps_.size()) <= levels,
               "detector: more taps than pyramid levels");
    Rng rng(Rng::mix(rng_seed, 2));
    int in_c = level_channels.back();
    for (int i = static_cast<int>(plain_taps_.size()); i < levels; ++i) {
      const int out_c = cfg_.fusion.pyramid_channels[i];
      ops::ConvParams p;
      p.weight = Tensor::xavier_uniform({out_c, in_c, 3, 3}, in_c * 9, out_c * 9, rng);
      p.bias = Tensor::zeros({out_c, 1, 1, 1}, true);
      p.stride = 2;
      p.padding = 1;
      plain_extra_.push_back(std::move(p));
      level_sizes_.push_back(next_pyramid_size(level_sizes_.back()));
      level_channels.push_back(out_c);
      in_c = out_c;
    }
  }

  auto specs = make_level_specs(level_sizes_, cfg_.priors);
  priors_ = generate_priors(specs);
  std::vector<int> priors_per_loc;
  for (const auto& s : specs)
    priors_per_loc.push_back(static_cast<int>(s.aspect_ratios.size()) + 1);
  head_.emplace(level_channels, priors_per_loc, cfg_.num_classes, Rng::mix(rng_seed, 3));
}

PyramidFeatures Detector::plain_pyramid(const FeatureMapSet& taps) const {
  PyramidFeatures pyr;
  for (const auto& name : plain_taps_) pyr.maps.push_back(taps.find(name).map);
  Tensor x = pyr.maps.back();
  for (const auto& block : plain_extra_) {
    ops::ConvParams conv = block;
    if (x.shape().h == 3) conv.padding = 0;
    x = ops::relu(ops::conv2d(x, conv));
    pyr.maps.push_back(x);
  }
  return pyr;
}

MultiboxHead::Output Detector::forward(const Tensor& images, bool training) {
  FeatureMapSet taps = backbone_.forward(images);
  PyramidFeatures pyramid =
      cfg_.fusion_enabled ? fusion_->forward(taps, training) : plain_pyramid(taps);
  const auto sizes = pyramid.sizes();
  FSSD_CHECK(sizes == level_sizes_, "detector: pyramid sizes drifted from the prior grid");
  return head_->forward(pyramid);
}

std::vector<ParamRef> Detector::params(double fusion_lr_multiplier) const {
  std::vector<ParamRef> out;
  backbone_.collect_params(out);
  if (fusion_) fusion_->collect_params(out, fusion_lr_multiplier);
  for (std::size_t i = 0; i < plain_extra_.size(); ++i) {
    const auto prefix = "extra" + std::to_string(i);
    out.push_back({prefix + ".weight", plain_extra_[i].weight, 1.0});
    out.push_back({prefix + ".bias", plain_extra_[i].bias, 1.0});
  }
  head_->collect_params(out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Detector::buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (fusion_) fusion_->collect_buffers(out);
  return out;
}

}  // namespace fssd
