#include "fssd/fusion.hpp"

#include <algorithm>
#include <unordered_set>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

int FusionConfig::projection_for(std::size_t source_index) const {
  FSSD_CHECK(!projection_channels.empty(), "fusion: projection_channels empty");
  if (projection_channels.size() == 1) return projection_channels[0];
  return projection_channels.at(source_index);
}

int FusionConfig::fused_channels() const {
  if (fusion_op == FusionOp::kElementSum) return projection_for(0);
  int total = 0;
  for (std::size_t i = 0; i < source_layers.size(); ++i) total += projection_for(i);
  return total;
}

void FusionConfig::validate() const {
  FSSD_CHECK(!source_layers.empty(), "fusion: no source layers");
  std::unordered_set<std::string> seen;
  for (const auto& s : source_layers)
    FSSD_CHECK(seen.insert(s).second, "fusion: duplicate source layer '" << s << "'");
  FSSD_CHECK(seen.count(base_layer), "fusion: base layer '" << base_layer
                                                            << "' must be one of the sources");
  FSSD_CHECK(projection_channels.size() == 1 ||
                 projection_channels.size() == source_layers.size(),
             "fusion: projection_channels must have one entry or one per source");
  for (int c : projection_channels) FSSD_CHECK(c >= 1, "fusion: projection width must be >= 1");
  if (fusion_op == FusionOp::kElementSum) {
    for (std::size_t i = 0; i < source_layers.size(); ++i)
      FSSD_CHECK(projection_for(i) == projection_for(0),
                 "fusion: element-wise sum requires equal projection widths");
  }
  FSSD_CHECK(!pyramid_channels.empty(), "fusion: pyramid_channels empty");
  for (int c : pyramid_channels) FSSD_CHECK(c >= 1, "fusion: pyramid width must be >= 1");
}

int next_pyramid_size(int size) {
  FSSD_CHECK(size >= 2, "pyramid: cannot down-sample a size-" << size << " map");
  return size == 3 ? 1 : (size + 1) / 2;
}

std::vector<int> pyramid_size_chain(int base_size, int levels) {
  std::vector<int> sizes{base_size};
  for (int i = 1; i < levels; ++i) sizes.push_back(next_pyramid_size(sizes.back()));
  return sizes;
}

std::vector<int> PyramidFeatures::sizes() const {
  std::vector<int> out;
  for (const auto& m : maps) out.push_back(m.shape().h);
  return out;
}

std::vector<int> PyramidFeatures::channels() const {
  std::vector<int> out;
  for (const auto& m : maps) out.push_back(m.shape().c);
  return out;
}

namespace {

ops::ConvParams make_conv(int out_c, int in_c, int k, int stride, int pad, Rng& rng) {
  ops::ConvParams p;
  p.weight = Tensor::xavier_uniform({out_c, in_c, k, k}, in_c * k * k, out_c * k * k, rng);
  p.bias = Tensor::zeros({out_c, 1, 1, 1}, /*requires_grad=*/true);
  p.stride = stride;
  p.padding = pad;
  return p;
}

}  // namespace

FusionModule::FusionModule(FusionConfig cfg, const std::map<std::string, int>& tap_channels,
                           std::uint64_t rng_seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(rng_seed);
  for (std::size_t i = 0; i < cfg_.source_layers.size(); ++i) {
    auto it = tap_channels.find(cfg_.source_layers[i]);
    FSSD_CHECK(it != tap_channels.end(),
               "fusion: no channel info for source '" << cfg_.source_layers[i] << "'");
    projections_.push_back(make_conv(cfg_.projection_for(i), it->second, 1, 1, 0, rng));
  }
  bn_ = ops::BatchNormParams::make(cfg_.fused_channels());

  const int levels = static_cast<int>(cfg_.pyramid_channels.size());
  int in_c = cfg_.fused_channels();
  for (int i = 0; i < levels; ++i) {
    const int out_c = cfg_.pyramid_channels[i];
    if (i == 0 && cfg_.pyramid_variant == PyramidVariant::kA) {
      // variant A: the fused map itself is detection map 0, no block needed
      blocks_.emplace_back();
      continue;
    }
    PyramidBlock block;
    if (cfg_.pyramid_variant == PyramidVariant::kC) {
      const int hidden = std::max(1, out_c / 2);
      block.reduce = make_conv(hidden, in_c, 1, 1, 0, rng);
      block.has_reduce = true;
      block.conv = make_conv(out_c, hidden, 3, /*stride=*/i == 0 ? 1 : 2, /*pad=*/1, rng);
    } else {
      block.conv = make_conv(out_c, in_c, 3, /*stride=*/i == 0 ? 1 : 2, /*pad=*/1, rng);
    }
    blocks_.push_back(std::move(block));
    in_c = out_c;
  }
}

Tensor FusionModule::transform_source(const Tensor& x, int target_size,
                                      std::size_t source_index) const {
  Tensor projected = ops::conv2d(x, projections_.at(source_index));
  const int size = projected.shape().h;
  if (size == target_size) return projected;
  if (size > target_size) {
    FSSD_CHECK((size + 1) / 2 == target_size,
               "fusion: pooling transform needs a 2x source, got " << size << " -> "
                                                                   << target_size);
    return ops::max_pool2d(projected, 2, 2, /*ceil_mode=*/true);
  }
  return ops::bilinear_resize(projected, target_size, target_size);
}

Tensor FusionModule::fuse(const std::vector<Tensor>& transformed, bool training) {
  FSSD_CHECK(transformed.size() == cfg_.source_layers.size(),
             "fusion: expected " << cfg_.source_layers.size() << " transformed maps");
  const int base = transformed[0].shape().h;
  for (const auto& t : transformed)
    FSSD_CHECK(t.shape().h == base && t.shape().w == base,
               "fusion: all transformed maps must sit at the base size");
  Tensor fused = cfg_.fusion_op == FusionOp::kConcat ? ops::concat_channels(transformed)
                                                     : ops::elementwise_add(transformed);
  if (cfg_.normalize_after_fusion) fused = ops::batch_norm(fused, bn_, training);
  return fused;
}

PyramidFeatures FusionModule::generate_pyramid(const Tensor& fused) const {
  PyramidFeatures out;
  Tensor x = fused;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (i == 0 && cfg_.pyramid_variant == PyramidVariant::kA) {
      out.maps.push_back(fused);
      continue;
    }
    const auto& block = blocks_[i];
    if (i > 0) {
      // stride-2 hop; a size-3 map needs pad 0 to land on 1
      FSSD_CHECK(x.shape().h >= 2, "fusion: pyramid_channels asks for more levels than the "
                                   "base size supports");
    }
    Tensor in = x;
    if (block.has_reduce) in = ops::relu(ops::conv2d(in, block.reduce));
    ops::ConvParams conv = block.conv;
    if (i > 0 && x.shape().h == 3) conv.padding = 0;
    x = ops::relu(ops::conv2d(in, conv));
    out.maps.push_back(x);
  }
  return out;
}

PyramidFeatures FusionModule::forward(const FeatureMapSet& taps, bool training) {
  for (const auto& name : cfg_.source_layers)
    FSSD_CHECK(taps.contains(name), "fusion: backbone taps are missing '" << name << "'");
  const int target = taps.find(cfg_.base_layer).spatial_size;
  std::vector<Tensor> transformed;
  for (std::size_t i = 0; i < cfg_.source_layers.size(); ++i)
    transformed.push_back(transform_source(taps.find(cfg_.source_layers[i]).map, target, i));
  return generate_pyramid(fuse(transformed, training));
}

void FusionModule::collect_buffers(std::vector<std::pair<std::string, Tensor>>& out) const {
  if (cfg_.normalize_after_fusion) {
    out.emplace_back("fusion.bn.running_mean", bn_.running_mean);
    out.emplace_back("fusion.bn.running_var", bn_.running_var);
  }
}

void FusionModule::collect_params(std::vector<ParamRef>& out, double lr_multiplier) const {
  for (std::size_t i = 0; i < projections_.size(); ++i) {
    const auto prefix = "fusion.proj." + cfg_.source_layers[i];
    out.push_back({prefix + ".weight", projections_[i].weight, lr_multiplier});
    out.push_back({prefix + ".bias", projections_[i].bias, lr_multiplier});
  }
  if (cfg_.normalize_after_fusion) {
    out.push_back({"fusion.bn.gamma", bn_.gamma, lr_multiplier});
    out.push_back({"fusion.bn.beta", bn_.beta, lr_multiplier});
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (i == 0 && cfg_.pyramid_variant == PyramidVariant::kA) continue;
    const auto prefix = "fusion.pyramid" + std::to_string(i);
    if (blocks_[i].has_reduce) {
      out.push_back({prefix + ".reduce.weight", blocks_[i].reduce.weight, lr_multiplier});
      out.push_back({prefix + ".reduce.bias", blocks_[i].reduce.bias, lr_multiplier});
    }
    out.push_back({prefix + ".conv.weight", blocks_[i].conv.weight, lr_multiplier});
    out.push_back({prefix + ".conv.bias", blocks_[i].conv.bias, lr_multiplier});
  }
}

}  // namespace fssd
