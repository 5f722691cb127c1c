#pragma once

#include <utility>
#include <vector>

#include "fssd/tensor.hpp"

namespace fssd::ops {

struct ConvParams {
  Tensor weight;  // (out_c, in_c, k_h, k_w)
  Tensor bias;    // (out_c, 1, 1, 1)
  int stride = 1;
  int padding = 0;
  bool ceil_mode = false;  // output-size rounding
};

// Output spatial extent of a conv/pool window sweep, including the trailing-window
// guard used with ceil rounding (a window may not start past the padded input).
int window_output_size(int in, int kernel, int stride, int pad, bool ceil_mode);

// Direct cross-correlation plus bias. Backward accumulates into x, weight and bias.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Per-window maximum; ceil_mode admits a clipped trailing window (75->38->19->10).
// Backward routes each window's gradient to its first row-major argmax.
Tensor max_pool2d(const Tensor& x, int kernel, int stride, bool ceil_mode);

// Half-pixel-center sampling with edge clamping; exact at the identity size.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

struct BatchNormParams {
  Tensor gamma;         // (1, c, 1, 1), learnable
  Tensor beta;          // (1, c, 1, 1), learnable
  Tensor running_mean;  // (1, c, 1, 1), buffer
  Tensor running_var;   // (1, c, 1, 1), buffer
  double epsilon = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch

  static BatchNormParams make(int channels);
};

// Training mode normalizes by batch statistics over (n, h, w) per channel and updates
// the running buffers; inference mode uses the running buffers.
Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training);

Tensor relu(const Tensor& x);

// Channel concatenation; inputs must agree on (n, h, w). Order is preserved.
Tensor concat_channels(const std::vector<Tensor>& xs);

// Elementwise n-ary sum; all shapes identical.
Tensor elementwise_add(const std::vector<Tensor>& xs);

// View of channels [c0, c1) as its own tensor; backward scatters into the slice.
Tensor slice_channels(const Tensor& x, int c0, int c1);

// logits viewed as rows x classes, shape (rows, classes, 1, 1); returns the per-row
// negative log-likelihood (rows, 1, 1, 1). Max-subtracted for stability.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Per-element smooth-L1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, d = pred - target.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

// (n, anchors*values, h, w) -> (n, h*w*anchors, values, 1), row index (y*w + x)*anchors + a.
// This is the flattening order the multibox head and checkpoints commit to.
Tensor flatten_head(const Tensor& x, int anchors, int values);

// Select rows (img, row) from (n, rows, d, 1) into (count, d, 1, 1).
Tensor gather_rows(const Tensor& x, const std::vector<std::pair<int, int>>& rows);

Tensor reduce_sum(const Tensor& x);                          // -> (1,1,1,1)
Tensor weighted_sum(const Tensor& x, const Tensor& weights); // sum(x * weights) -> scalar
Tensor scale(const Tensor& x, double factor);

// Softmax over the class axis of (rows, classes, 1, 1), plain numeric (no graph).
std::vector<double> softmax_rows(const Tensor& logits);

}  // namespace fssd::ops
