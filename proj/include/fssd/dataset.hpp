#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fssd/multibox.hpp"
#include "fssd/tensor.hpp"

namespace fssd {

// Deterministic synthetic detection data: solid circles, squares and triangles on
// noisy backgrounds. Per-image SplitMix64 streams make the dataset a pure function
// of (spec, index).
struct ShapeWorldSpec {
  std::uint64_t seed = 42;
  int image_size = 300;
  int min_objects = 1;
  int max_objects = 6;
  double small_fraction = 0.5;  // small: side 10-30 px, large: side 60-180 px
  int small_side_min = 10, small_side_max = 30;
  int large_side_min = 60, large_side_max = 180;
  double max_gt_iou = 0.3;  // pairwise cap, enforced by rejection sampling
};

inline const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle"};
  return names;
}
constexpr int kNumShapeClasses = 3;  // labels 1..3; 0 is background

// Pixel-space annotation; the box tightly bounds the rasterized pixels
// ([x0, x1) x [y0, y1), exclusive upper edges).
struct Annotation {
  int label;  // 1..kNumShapeClasses
  int x0, y0, x1, y1;
  Box normalized(int image_size) const {
    const double s = image_size;
    return {x0 / s, y0 / s, x1 / s, y1 / s};
  }
};

struct SampleImage {
  std::vector<std::uint8_t> rgb;  // image_size * image_size * 3, row-major
  std::vector<Annotation> annotations;
  int placement_shortfalls = 0;  // objects dropped after 100 placement retries
};

// Renders image `index` of the stream. Bitwise deterministic.
SampleImage generate_image(const ShapeWorldSpec& spec, std::uint64_t index);

std::vector<GroundTruth> to_ground_truths(const SampleImage& sample, int image_size);

// Mirror columns of the image and the pixel boxes; an exact involution.
void flip_horizontal(SampleImage& sample, int image_size);

// Pixels scaled to [0,1] minus 0.5, stacked as one batch tensor.
Tensor to_input_tensor(const std::vector<const SampleImage*>& batch, int image_size);

}  // namespace fssd
