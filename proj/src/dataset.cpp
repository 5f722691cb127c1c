#include "fssd/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "fssd/check.hpp"
#include "fssd/rng.hpp"

namespace fssd {

namespace {

struct PixBox {
  int x0, y0, x1, y1;  // exclusive upper edges
};

double pix_iou(const PixBox& a, const PixBox& b) {
  const double ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double ua = static_cast<double>(a.x1 - a.x0) * (a.y1 - a.y0);
  const double ub = static_cast<double>(b.x1 - b.x0) * (b.y1 - b.y0);
  return inter <= 0 ? 0.0 : inter / (ua + ub - inter);
}

// Rasterize one shape into `pixels` (image coordinates); returns false if empty.
bool rasterize(int label, int x, int y, int side, std::vector<std::pair<int, int>>& pixels) {
  pixels.clear();
  const double cx = x + side / 2.0, cy = y + side / 2.0, r = side / 2.0;
  for (int py = y; py < y + side; ++py) {
    for (int px = x; px < x + side; ++px) {
      const double fx = px + 0.5, fy = py + 0.5;
      bool inside = false;
      switch (label) {
        case 1:  // circle
          inside = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) <= r * r;
          break;
        case 2:  // square
          inside = true;
          break;
        case 3: {  // triangle: apex top-center, base along the bottom edge
          const double ax = cx, ay = y;
          const double bx = x, by = y + side;
          const double dx2 = x + side, dy2 = y + side;
          auto edge = [&](double ex0, double ey0, double ex1, double ey1) {
            return (ex1 - ex0) * (fy - ey0) - (ey1 - ey0) * (fx - ex0);
          };
          const double e0 = edge(ax, ay, bx, by);
          const double e1 = edge(bx, by, dx2, dy2);
          const double e2 = edge(dx2, dy2, ax, ay);
          inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
          break;
        }
        default:
          fail("rasterize: unknown label");
      }
      if (inside) pixels.emplace_back(px, py);
    }
  }
  return !pixels.empty();
}

}  // namespace

SampleImage generate_image(const ShapeWorldSpec& spec, std::uint64_t index) {
  FSSD_CHECK(spec.image_size >= 32, "shapeworld: image size too small");
  FSSD_CHECK(spec.min_objects >= 1 && spec.max_objects >= spec.min_objects,
             "shapeworld: bad object count range");
  const int S = spec.image_size;
  Rng rng(Rng::mix(spec.seed, index));

  SampleImage sample;
  sample.rgb.resize(static_cast<std::size_t>(S) * S * 3);

  // noisy background around a random base color
  std::uint8_t base[3];
  for (auto& b : base) b = static_cast<std::uint8_t>(rng.uniform_int(40, 215));
  for (std::size_t i = 0; i < sample.rgb.size(); ++i) {
    const int noise = rng.uniform_int(-25, 25);
    sample.rgb[i] = static_cast<std::uint8_t>(std::clamp(base[i % 3] + noise, 0, 255));
  }

  std::vector<bool> occupied(static_cast<std::size_t>(S) * S, false);
  std::vector<PixBox> placed;
  std::vector<std::pair<int, int>> pixels;

  const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int obj = 0; obj < count; ++obj) {
    const int label = rng.uniform_int(1, kNumShapeClasses);
    const bool small = rng.bernoulli(spec.small_fraction);
    const int lo = small ? spec.small_side_min : spec.large_side_min;
    const int hi = small ? spec.small_side_max : spec.large_side_max;

    // solid color with guaranteed contrast against the background base
    std::uint8_t color[3];
    for (int attempt = 0; attempt < 64; ++attempt) {
      int dist = 0;
      for (int c = 0; c < 3; ++c) {
        color[c] = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        dist = std::max(dist, std::abs(static_cast<int>(color[c]) - static_cast<int>(base[c])));
      }
      if (dist >= 80) break;
    }

    bool done = false;
    for (int attempt = 0; attempt < 100 && !done; ++attempt) {
      const int side = rng.uniform_int(lo, std::min(hi, S - 2));
      const int x = rng.uniform_int(0, S - side);
      const int y = rng.uniform_int(0, S - side);
      if (!rasterize(label, x, y, side, pixels)) continue;

      PixBox box{S, S, 0, 0};
      bool overlap = false;
      for (auto [px, py] : pixels) {
        if (occupied[static_cast<std::size_t>(py) * S + px]) {
          overlap = true;
          break;
        }
        box.x0 = std::min(box.x0, px);
        box.y0 = std::min(box.y0, py);
        box.x1 = std::max(box.x1, px + 1);
        box.y1 = std::max(box.y1, py + 1);
      }
      if (overlap) continue;
      bool iou_ok = true;
      for (const auto& other : placed)
        if (pix_iou(box, other) > spec.max_gt_iou) {
          iou_ok = false;
          break;
        }
      if (!iou_ok) continue;

      for (auto [px, py] : pixels) {
        occupied[static_cast<std::size_t>(py) * S + px] = true;
        std::uint8_t* dst = sample.rgb.data() + (static_cast<std::size_t>(py) * S + px) * 3;
        dst[0] = color[0];
        dst[1] = color[1];
        dst[2] = color[2];
      }
      placed.push_back(box);
      sample.annotations.push_back({label, box.x0, box.y0, box.x1, box.y1});
      done = true;
    }
    if (!done) ++sample.placement_shortfalls;
  }
  return sample;
}

std::vector<GroundTruth> to_ground_truths(const SampleImage& sample, int image_size) {
  std::vector<GroundTruth> out;
  for (const auto& a : sample.annotations) out.push_back({a.normalized(image_size), a.label});
  return out;
}

void flip_horizontal(SampleImage& sample, int image_size) {
  const int S = image_size;
  for (int y = 0; y < S; ++y) {
    std::uint8_t* row = sample.rgb.data() + static_cast<std::size_t>(y) * S * 3;
    for (int x = 0; x < S / 2; ++x) {
      for (int c = 0; c < 3; ++c) std::swap(row[x * 3 + c], row[(S - 1 - x) * 3 + c]);
    }
  }
  for (auto& a : sample.annotations) {
    const int nx0 = S - a.x1;
    const int nx1 = S - a.x0;
    a.x0 = nx0;
    a.x1 = nx1;
  }
}

Tensor to_input_tensor(const std::vector<const SampleImage*>& batch, int image_size) {
  FSSD_CHECK(!batch.empty(), "to_input_tensor: empty batch");
  const int S = image_size;
  Tensor out = Tensor::zeros({static_cast<int>(batch.size()), 3, S, S});
  double* d = out.data_mut().data();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& rgb = batch[n]->rgb;
    FSSD_CHECK(rgb.size() == static_cast<std::size_t>(S) * S * 3,
               "to_input_tensor: image size mismatch");
    for (int c = 0; c < 3; ++c) {
      double* plane = d + (n * 3 + c) * static_cast<std::size_t>(S) * S;
      for (int i = 0; i < S * S; ++i)
        plane[i] = rgb[static_cast<std::size_t>(i) * 3 + c] / 255.0 - 0.5;
    }
  }
  return out;
}

}  // namespace fssd
