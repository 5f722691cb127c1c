#include "fssd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "fssd/check.hpp"
#include "fssd/detail/conv_kernels.hpp"

namespace fssd::ops {

namespace detail = fssd::detail;

int window_output_size(int in, int kernel, int stride, int pad, bool ceil_mode) {
  FSSD_CHECK(stride >= 1, "stride must be positive, got " << stride);
  FSSD_CHECK(kernel >= 1, "kernel must be positive, got " << kernel);
  const int span = in + 2 * pad - kernel;
  FSSD_CHECK(span >= 0, "window " << kernel << " larger than padded input " << in + 2 * pad);
  int out = (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
  if (ceil_mode && (out - 1) * stride >= in + pad) --out;  // last window must start in-bounds
  return out;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

// w (oc,ic,kh,kw) -> transposed+flipped (ic,oc,kh,kw) for the input-gradient conv.
std::vector<double> flip_transpose_weights(std::span<const double> w, int oc, int ic, int k) {
  std::vector<double> out(w.size());
  for (int o = 0; o < oc; ++o)
    for (int i = 0; i < ic; ++i)
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c)
          out[((static_cast<std::size_t>(i) * oc + o) * k + (k - 1 - r)) * k + (k - 1 - c)] =
              w[((static_cast<std::size_t>(o) * ic + i) * k + r) * k + c];
  return out;
}

void decimate2(const double* src, double* dst, int n, int c, int sh, int sw, int dh, int dw) {
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
    const double* sp = src + plane * sh * sw;
    double* dp = dst + plane * dh * dw;
    for (int y = 0; y < dh; ++y)
      for (int x = 0; x < dw; ++x) dp[static_cast<std::size_t>(y) * dw + x] = sp[static_cast<std::size_t>(2 * y) * sw + 2 * x];
  }
}

void stuff2(const double* src, double* dst, int n, int c, int sh, int sw, int dh, int dw) {
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
    const double* sp = src + plane * sh * sw;
    double* dp = dst + plane * dh * dw;
    for (int y = 0; y < sh; ++y)
      for (int x = 0; x < sw; ++x) dp[static_cast<std::size_t>(2 * y) * dw + 2 * x] = sp[static_cast<std::size_t>(y) * sw + x];
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const Shape xs = x.shape();
  const Shape ws = p.weight.shape();
  FSSD_CHECK(p.stride >= 1, "conv2d: non-positive stride " << p.stride);
  FSSD_CHECK(p.padding >= 0, "conv2d: negative padding");
  FSSD_CHECK(xs.c == ws.c, "conv2d: input has " << xs.c << " channels, weights expect " << ws.c);
  FSSD_CHECK((p.bias.shape() == Shape{ws.n, 1, 1, 1}),
             "conv2d: bias shape " << p.bias.shape().str() << " != (" << ws.n << ",1,1,1)");
  const int out_c = ws.n, in_c = ws.c, kh = ws.h, kw = ws.w;
  const int out_h = window_output_size(xs.h, kh, p.stride, p.padding, p.ceil_mode);
  const int out_w = window_output_size(xs.w, kw, p.stride, p.padding, p.ceil_mode);

  const bool fast3 = (kh == 3 && kw == 3 && p.stride == 1 && p.padding <= 2);
  const bool fast1 = (kh == 1 && kw == 1 && p.stride == 1 && p.padding == 0);
  // Stride-2 3x3 runs the stride-1 microkernel and keeps every other output; the
  // 4x extra arithmetic is far cheaper than the scalar fallback at these sizes.
  const bool fast3s2 = (kh == 3 && kw == 3 && p.stride == 2 && p.padding <= 2 &&
                        out_h == (xs.h + 2 * p.padding - 3) / 2 + 1 &&
                        out_w == (xs.w + 2 * p.padding - 3) / 2 + 1);

  Tensor out = Tensor::make_op(
      Shape{xs.n, out_c, out_h, out_w}, {x, p.weight, p.bias},
      [stride = p.stride, pad = p.padding, fast3, fast1, fast3s2](TensorNode& self) {
        const Tensor& x = self.parents[0];
        const Tensor& weight = self.parents[1];
        const Tensor& bias = self.parents[2];
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        const Shape os = self.shape;
        const double* g = self.grad.data();

        std::vector<double> gstuff;
        const double* g1 = g;
        int g1h = os.h, g1w = os.w;
        if (fast3s2) {
          g1h = xs.h + 2 * pad - 2;
          g1w = xs.w + 2 * pad - 2;
          gstuff.assign(static_cast<std::size_t>(os.n) * os.c * g1h * g1w, 0.0);
          stuff2(g, gstuff.data(), os.n, os.c, os.h, os.w, g1h, g1w);
          g1 = gstuff.data();
        }

        if (x.requires_grad()) {
          double* dx = const_cast<Tensor&>(x).grad_mut().data();
          if (fast3 || fast3s2) {
            auto wt = flip_transpose_weights(weight.data(), ws.n, ws.c, 3);
            detail::conv3x3_s1_forward(g1, wt.data(), nullptr, dx, os.n, os.c, g1h, g1w, ws.c,
                                       2 - pad, /*accumulate=*/true);
          } else if (fast1) {
            std::vector<double> wt(ws.numel());
            for (int o = 0; o < ws.n; ++o)
              for (int i = 0; i < ws.c; ++i) wt[static_cast<std::size_t>(i) * ws.n + o] = weight.data()[static_cast<std::size_t>(o) * ws.c + i];
            detail::conv1x1_forward(g, wt.data(), nullptr, dx, os.n, os.c, xs.h * xs.w, ws.c,
                                    /*accumulate=*/true);
          } else {
            detail::conv_dinput_generic(g, weight.data().data(), dx, xs.n, xs.c, xs.h, xs.w,
                                        ws.n, ws.h, ws.w, stride, pad, os.h, os.w);
          }
        }
        if (weight.requires_grad()) {
          double* dw = const_cast<Tensor&>(weight).grad_mut().data();
          if (fast3 || fast3s2) {
            detail::conv3x3_s1_dweights(x.data().data(), g1, dw, xs.n, xs.c, xs.h, xs.w, ws.n,
                                        pad, g1h, g1w);
          } else if (fast1) {
            detail::conv1x1_dweights(x.data().data(), g, dw, xs.n, xs.c, xs.h * xs.w, ws.n);
          } else {
            detail::conv_dweights_generic(x.data().data(), g, dw, xs.n, xs.c, xs.h, xs.w,
                                          ws.n, ws.h, ws.w, stride, pad, os.h, os.w);
          }
        }
        if (bias.requires_grad()) {
          detail::conv_dbias(g, const_cast<Tensor&>(bias).grad_mut().data(), os.n, os.c,
                             os.h * os.w);
        }
      });

  double* y = out.data_mut().data();
  const double* xd = x.data().data();
  const double* wd = p.weight.data().data();
  const double* bd = p.bias.data().data();
  if (fast3) {
    detail::conv3x3_s1_forward(xd, wd, bd, y, xs.n, in_c, xs.h, xs.w, out_c, p.padding, false);
  } else if (fast1) {
    detail::conv1x1_forward(xd, wd, bd, y, xs.n, in_c, xs.h * xs.w, out_c, false);
  } else if (fast3s2) {
    const int full_h = xs.h + 2 * p.padding - 2, full_w = xs.w + 2 * p.padding - 2;
    std::vector<double> full(static_cast<std::size_t>(xs.n) * out_c * full_h * full_w);
    detail::conv3x3_s1_forward(xd, wd, bd, full.data(), xs.n, in_c, xs.h, xs.w, out_c,
                               p.padding, false);
    decimate2(full.data(), y, xs.n, out_c, full_h, full_w, out_h, out_w);
  } else {
    detail::conv_forward_generic(xd, wd, bd, y, xs.n, in_c, xs.h, xs.w, out_c, kh, kw,
                                 p.stride, p.padding, out_h, out_w, false);
  }
  return out;
}

// ---------------------------------------------------------------------------
// max_pool2d

Tensor max_pool2d(const Tensor& x, int kernel, int stride, bool ceil_mode) {
  const Shape xs = x.shape();
  FSSD_CHECK(kernel >= 1 && stride >= 1, "max_pool2d: kernel and stride must be >= 1");
  FSSD_CHECK(xs.h >= 1 && xs.w >= 1, "max_pool2d: empty spatial extent");
  const int out_h = window_output_size(xs.h, kernel, stride, 0, ceil_mode);
  const int out_w = window_output_size(xs.w, kernel, stride, 0, ceil_mode);
  const Shape os{xs.n, xs.c, out_h, out_w};

  // argmax per output element, shared by forward and backward
  auto argmax = std::make_shared<std::vector<std::int32_t>>(os.numel());

  Tensor out = Tensor::make_op(os, {x}, [argmax](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    const Shape xs = x.shape();
    const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
    const std::size_t out_plane = static_cast<std::size_t>(self.shape.h) * self.shape.w;
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t i = 0; i < out_plane; ++i)
        dx[pl * in_plane + (*argmax)[pl * out_plane + i]] += self.grad[pl * out_plane + i];
  });

  const double* xd = x.data().data();
  double* y = out.data_mut().data();
  const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* xp = xd + pl * in_plane;
    for (int oh = 0; oh < out_h; ++oh) {
      const int h0 = oh * stride, h1 = std::min(h0 + kernel, xs.h);
      for (int ow = 0; ow < out_w; ++ow) {
        const int w0 = ow * stride, w1 = std::min(w0 + kernel, xs.w);
        double best = xp[static_cast<std::size_t>(h0) * xs.w + w0];
        std::int32_t best_idx = h0 * xs.w + w0;
        for (int ih = h0; ih < h1; ++ih)
          for (int iw = w0; iw < w1; ++iw) {
            const double v = xp[static_cast<std::size_t>(ih) * xs.w + iw];
            if (v > best) {  // strict: first occurrence wins ties
              best = v;
              best_idx = ih * xs.w + iw;
            }
          }
        y[pl * out_plane + static_cast<std::size_t>(oh) * out_w + ow] = best;
        (*argmax)[pl * out_plane + static_cast<std::size_t>(oh) * out_w + ow] = best_idx;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize

namespace {

struct LinearMap {
  std::vector<int> lo, hi;
  std::vector<double> frac;  // weight of hi
};

LinearMap linear_map(int in, int out) {
  LinearMap m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    m.lo[d] = lo;
    m.hi[d] = std::min(lo + 1, in - 1);
    m.frac[d] = src - lo;
  }
  return m;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  const Shape xs = x.shape();
  FSSD_CHECK(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive");
  const Shape os{xs.n, xs.c, out_h, out_w};
  auto rows = std::make_shared<LinearMap>(linear_map(xs.h, out_h));
  auto cols = std::make_shared<LinearMap>(linear_map(xs.w, out_w));

  Tensor out = Tensor::make_op(os, {x}, [rows, cols](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    const Shape xs = x.shape();
    const Shape os = self.shape;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
    const std::size_t out_plane = static_cast<std::size_t>(os.h) * os.w;
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      double* dxp = dx + pl * in_plane;
      const double* gp = self.grad.data() + pl * out_plane;
      for (int oh = 0; oh < os.h; ++oh) {
        const double fh = rows->frac[oh];
        const std::size_t r0 = static_cast<std::size_t>(rows->lo[oh]) * xs.w;
        const std::size_t r1 = static_cast<std::size_t>(rows->hi[oh]) * xs.w;
        for (int ow = 0; ow < os.w; ++ow) {
          const double g = gp[static_cast<std::size_t>(oh) * os.w + ow];
          const double fw = cols->frac[ow];
          const int c0 = cols->lo[ow], c1 = cols->hi[ow];
          dxp[r0 + c0] += g * (1 - fh) * (1 - fw);
          dxp[r0 + c1] += g * (1 - fh) * fw;
          dxp[r1 + c0] += g * fh * (1 - fw);
          dxp[r1 + c1] += g * fh * fw;
        }
      }
    }
  });

  const double* xd = x.data().data();
  double* y = out.data_mut().data();
  const std::size_t in_plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* xp = xd + pl * in_plane;
    double* yp = y + pl * out_plane;
    for (int oh = 0; oh < out_h; ++oh) {
      const double fh = rows->frac[oh];
      const double* xr0 = xp + static_cast<std::size_t>(rows->lo[oh]) * xs.w;
      const double* xr1 = xp + static_cast<std::size_t>(rows->hi[oh]) * xs.w;
      for (int ow = 0; ow < out_w; ++ow) {
        const double fw = cols->frac[ow];
        const int c0 = cols->lo[ow], c1 = cols->hi[ow];
        const double top = xr0[c0] * (1 - fw) + xr0[c1] * fw;
        const double bot = xr1[c0] * (1 - fw) + xr1[c1] * fw;
        yp[static_cast<std::size_t>(oh) * out_w + ow] = top * (1 - fh) + bot * fh;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm

BatchNormParams BatchNormParams::make(int channels) {
  BatchNormParams p;
  const Shape s{1, channels, 1, 1};
  p.gamma = Tensor::full(s, 1.0, /*requires_grad=*/true);
  p.beta = Tensor::zeros(s, /*requires_grad=*/true);
  p.running_mean = Tensor::zeros(s);
  p.running_var = Tensor::full(s, 1.0);
  return p;
}

Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training) {
  const Shape xs = x.shape();
  const int channels = xs.c;
  FSSD_CHECK(p.gamma.shape().c == channels && p.beta.shape().c == channels &&
                 p.running_mean.shape().c == channels && p.running_var.shape().c == channels,
             "batch_norm: parameter vectors sized for " << p.gamma.shape().c
                                                        << " channels, input has " << channels);
  FSSD_CHECK(p.epsilon > 0, "batch_norm: epsilon must be positive");

  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t per_channel = static_cast<std::size_t>(xs.n) * plane;

  auto mean = std::make_shared<std::vector<double>>(channels, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(channels, 0.0);

  const double* xd = x.data().data();
  auto channel_sum = [&](int c, auto&& fn) {
    double acc = 0.0;
    for (int n = 0; n < xs.n; ++n) {
      const double* xp = xd + (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += fn(xp[i]);
    }
    return acc;
  };

  if (training) {
    for (int c = 0; c < channels; ++c) {
      const double m = channel_sum(c, [](double v) { return v; }) / static_cast<double>(per_channel);
      const double var =
          channel_sum(c, [m](double v) { return (v - m) * (v - m); }) / static_cast<double>(per_channel);
      (*mean)[c] = m;
      (*inv_std)[c] = 1.0 / std::sqrt(var + p.epsilon);
      auto rm = p.running_mean.data_mut();
      auto rv = p.running_var.data_mut();
      rm[c] = p.momentum * rm[c] + (1 - p.momentum) * m;
      rv[c] = p.momentum * rv[c] + (1 - p.momentum) * var;
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      (*mean)[c] = p.running_mean.data()[c];
      (*inv_std)[c] = 1.0 / std::sqrt(p.running_var.data()[c] + p.epsilon);
    }
  }

  Tensor out = Tensor::make_op(
      xs, {x, p.gamma, p.beta}, [mean, inv_std, training](TensorNode& self) {
        const Tensor& x = self.parents[0];
        const Tensor& gamma = self.parents[1];
        const Tensor& beta = self.parents[2];
        const Shape xs = x.shape();
        const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
        const std::size_t per_channel = static_cast<std::size_t>(xs.n) * plane;
        const double* xd = x.data().data();
        const double* g = self.grad.data();

        for (int c = 0; c < xs.c; ++c) {
          const double m = (*mean)[c], istd = (*inv_std)[c];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < xs.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double gv = g[base + i];
              sum_g += gv;
              sum_gx += gv * (xd[base + i] - m) * istd;
            }
          }
          if (beta.requires_grad()) const_cast<Tensor&>(beta).grad_mut()[c] += sum_g;
          if (gamma.requires_grad()) const_cast<Tensor&>(gamma).grad_mut()[c] += sum_gx;
          if (x.requires_grad()) {
            double* dx = const_cast<Tensor&>(x).grad_mut().data();
            const double gm = gamma.data()[c];
            if (training) {
              const double mg = sum_g / static_cast<double>(per_channel);
              const double mgx = sum_gx / static_cast<double>(per_channel);
              for (int n = 0; n < xs.n; ++n) {
                const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  const double xhat = (xd[base + i] - m) * istd;
                  dx[base + i] += gm * istd * (g[base + i] - mg - xhat * mgx);
                }
              }
            } else {
              for (int n = 0; n < xs.n; ++n) {
                const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dx[base + i] += gm * istd * g[base + i];
              }
            }
          }
        }
      });

  double* y = out.data_mut().data();
  const double* gm = p.gamma.data().data();
  const double* bt = p.beta.data().data();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      const double m = (*mean)[c], istd = (*inv_std)[c];
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = gm[c] * ((xd[base + i] - m) * istd) + bt[c];
    }
  return out;
}

// ---------------------------------------------------------------------------
// relu / concat / add / slice

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::make_op(x.shape(), {x}, [](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    for (std::size_t i = 0; i < self.data.size(); ++i)
      if (self.data[i] > 0.0) dx[i] += self.grad[i];
  });
  const double* xd = x.data().data();
  double* y = out.data_mut().data();
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  FSSD_CHECK(!xs.empty(), "concat_channels: no inputs");
  const Shape first = xs[0].shape();
  int total_c = 0;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    FSSD_CHECK(s.n == first.n && s.h == first.h && s.w == first.w,
               "concat_channels: spatial/batch mismatch " << s.str() << " vs " << first.str());
    total_c += s.c;
  }
  const Shape os{first.n, total_c, first.h, first.w};
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;

  Tensor out = Tensor::make_op(os, xs, [plane](TensorNode& self) {
    const Shape os = self.shape;
    std::size_t c_off = 0;
    for (auto& parent : self.parents) {
      const Shape ps = parent.shape();
      if (parent.requires_grad()) {
        double* dp = const_cast<Tensor&>(parent).grad_mut().data();
        for (int n = 0; n < ps.n; ++n) {
          const double* src = self.grad.data() + (static_cast<std::size_t>(n) * os.c + c_off) * plane;
          double* dst = dp + static_cast<std::size_t>(n) * ps.c * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(ps.c) * plane; ++i) dst[i] += src[i];
        }
      }
      c_off += ps.c;
    }
  });

  double* y = out.data_mut().data();
  std::size_t c_off = 0;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    for (int n = 0; n < s.n; ++n) {
      const double* src = t.data().data() + static_cast<std::size_t>(n) * s.c * plane;
      double* dst = y + (static_cast<std::size_t>(n) * total_c + c_off) * plane;
      std::copy(src, src + static_cast<std::size_t>(s.c) * plane, dst);
    }
    c_off += s.c;
  }
  return out;
}

Tensor elementwise_add(const std::vector<Tensor>& xs) {
  FSSD_CHECK(!xs.empty(), "elementwise_add: no inputs");
  const Shape s = xs[0].shape();
  for (const auto& t : xs)
    FSSD_CHECK(t.shape() == s,
               "elementwise_add: shape mismatch " << t.shape().str() << " vs " << s.str());

  Tensor out = Tensor::make_op(s, xs, [](TensorNode& self) {
    for (auto& parent : self.parents) {
      if (!parent.requires_grad()) continue;
      double* dp = const_cast<Tensor&>(parent).grad_mut().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dp[i] += self.grad[i];
    }
  });

  double* y = out.data_mut().data();
  std::copy(xs[0].data().begin(), xs[0].data().end(), y);
  for (std::size_t t = 1; t < xs.size(); ++t) {
    const double* src = xs[t].data().data();
    for (std::size_t i = 0; i < out.numel(); ++i) y[i] += src[i];
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  const Shape xs = x.shape();
  FSSD_CHECK(0 <= c0 && c0 < c1 && c1 <= xs.c, "slice_channels: bad range [" << c0 << "," << c1
                                                                             << ") of " << xs.c);
  const Shape os{xs.n, c1 - c0, xs.h, xs.w};
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;

  Tensor out = Tensor::make_op(os, {x}, [c0, plane](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    const Shape xs = x.shape();
    const Shape os = self.shape;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    for (int n = 0; n < os.n; ++n) {
      double* dst = dx + (static_cast<std::size_t>(n) * xs.c + c0) * plane;
      const double* src = self.grad.data() + static_cast<std::size_t>(n) * os.c * plane;
      for (std::size_t i = 0; i < static_cast<std::size_t>(os.c) * plane; ++i) dst[i] += src[i];
    }
  });

  double* y = out.data_mut().data();
  for (int n = 0; n < xs.n; ++n) {
    const double* src = x.data().data() + (static_cast<std::size_t>(n) * xs.c + c0) * plane;
    std::copy(src, src + static_cast<std::size_t>(c1 - c0) * plane, y + static_cast<std::size_t>(n) * (c1 - c0) * plane);
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  const Shape ls = logits.shape();
  const int rows = ls.n, classes = ls.c;
  FSSD_CHECK(ls.h == 1 && ls.w == 1, "softmax_cross_entropy: expected (rows, classes, 1, 1)");
  FSSD_CHECK(static_cast<int>(targets.size()) == rows,
             "softmax_cross_entropy: " << targets.size() << " targets for " << rows << " rows");
  for (int t : targets)
    FSSD_CHECK(0 <= t && t < classes, "softmax_cross_entropy: target " << t << " out of range");

  auto targets_ptr = std::make_shared<std::vector<int>>(targets);
  Tensor out = Tensor::make_op(Shape{rows, 1, 1, 1}, {logits}, [targets_ptr](TensorNode& self) {
    const Tensor& logits = self.parents[0];
    if (!logits.requires_grad()) return;
    const int rows = logits.shape().n, classes = logits.shape().c;
    const double* ld = logits.data().data();
    double* dl = const_cast<Tensor&>(logits).grad_mut().data();
    for (int r = 0; r < rows; ++r) {
      const double* row = ld + static_cast<std::size_t>(r) * classes;
      double m = row[0];
      for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
      double z = 0.0;
      for (int k = 0; k < classes; ++k) z += std::exp(row[k] - m);
      const double g = self.grad[r];
      for (int k = 0; k < classes; ++k) {
        double p = std::exp(row[k] - m) / z;
        if (k == (*targets_ptr)[r]) p -= 1.0;
        dl[static_cast<std::size_t>(r) * classes + k] += g * p;
      }
    }
  });

  const double* ld = logits.data().data();
  double* y = out.data_mut().data();
  for (int r = 0; r < rows; ++r) {
    const double* row = ld + static_cast<std::size_t>(r) * classes;
    double m = row[0];
    for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < classes; ++k) z += std::exp(row[k] - m);
    y[r] = std::log(z) - (row[targets[r]] - m);
  }
  return out;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  FSSD_CHECK(pred.shape() == target.shape(), "smooth_l1: shape mismatch "
                                                 << pred.shape().str() << " vs "
                                                 << target.shape().str());
  Tensor out = Tensor::make_op(pred.shape(), {pred, target}, [](TensorNode& self) {
    const Tensor& pred = self.parents[0];
    const Tensor& target = self.parents[1];
    const double* pd = pred.data().data();
    const double* td = target.data().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double d = std::clamp(pd[i] - td[i], -1.0, 1.0);
      if (pred.requires_grad()) const_cast<Tensor&>(pred).grad_mut()[i] += self.grad[i] * d;
      if (target.requires_grad()) const_cast<Tensor&>(target).grad_mut()[i] -= self.grad[i] * d;
    }
  });
  const double* pd = pred.data().data();
  const double* td = target.data().data();
  double* y = out.data_mut().data();
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pd[i] - td[i];
    const double a = std::abs(d);
    y[i] = a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  return out;
}

// ---------------------------------------------------------------------------
// head plumbing

Tensor flatten_head(const Tensor& x, int anchors, int values) {
  const Shape xs = x.shape();
  FSSD_CHECK(xs.c == anchors * values, "flatten_head: " << xs.c << " channels != " << anchors
                                                        << " anchors * " << values << " values");
  const int rows = xs.h * xs.w * anchors;
  const Shape os{xs.n, rows, values, 1};
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;

  auto index = [=](int n, int a, int j, int h, int w) {
    return ((static_cast<std::size_t>(n) * xs.c + a * values + j) * xs.h + h) * xs.w + w;
  };
  auto out_index = [=](int n, int h, int w, int a, int j) {
    return (static_cast<std::size_t>(n) * rows + (static_cast<std::size_t>(h) * xs.w + w) * anchors + a) * values + j;
  };

  Tensor out = Tensor::make_op(os, {x}, [=](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    const Shape s = x.shape();
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          for (int a = 0; a < anchors; ++a)
            for (int j = 0; j < values; ++j)
              dx[index(n, a, j, h, w)] += self.grad[out_index(n, h, w, a, j)];
  });

  const double* xd = x.data().data();
  double* y = out.data_mut().data();
  (void)plane;
  for (int n = 0; n < xs.n; ++n)
    for (int h = 0; h < xs.h; ++h)
      for (int w = 0; w < xs.w; ++w)
        for (int a = 0; a < anchors; ++a)
          for (int j = 0; j < values; ++j) y[out_index(n, h, w, a, j)] = xd[index(n, a, j, h, w)];
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::pair<int, int>>& rows) {
  const Shape xs = x.shape();
  FSSD_CHECK(xs.w == 1, "gather_rows: expected (n, rows, d, 1), got " << xs.str());
  FSSD_CHECK(!rows.empty(), "gather_rows: empty selection");
  for (auto [n, r] : rows)
    FSSD_CHECK(0 <= n && n < xs.n && 0 <= r && r < xs.c,
               "gather_rows: row (" << n << "," << r << ") out of " << xs.str());
  const int d = xs.h;
  const Shape os{static_cast<int>(rows.size()), d, 1, 1};
  auto rows_ptr = std::make_shared<std::vector<std::pair<int, int>>>(rows);

  Tensor out = Tensor::make_op(os, {x}, [rows_ptr, d](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    const Shape xs = x.shape();
    for (std::size_t i = 0; i < rows_ptr->size(); ++i) {
      auto [n, r] = (*rows_ptr)[i];
      double* dst = dx + (static_cast<std::size_t>(n) * xs.c + r) * d;
      const double* src = self.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });

  double* y = out.data_mut().data();
  const double* xd = x.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [n, r] = rows[i];
    const double* src = xd + (static_cast<std::size_t>(n) * xs.c + r) * d;
    std::copy(src, src + d, y + i * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and scalar glue

Tensor reduce_sum(const Tensor& x) {
  Tensor out = Tensor::make_op(Shape{1, 1, 1, 1}, {x}, [](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g;
  });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data_mut()[0] = acc;
  return out;
}

Tensor weighted_sum(const Tensor& x, const Tensor& weights) {
  FSSD_CHECK(x.shape() == weights.shape(), "weighted_sum: shape mismatch");
  Tensor out = Tensor::make_op(Shape{1, 1, 1, 1}, {x, weights}, [](TensorNode& self) {
    const Tensor& x = self.parents[0];
    const Tensor& w = self.parents[1];
    const double g = self.grad[0];
    if (x.requires_grad()) {
      double* dx = const_cast<Tensor&>(x).grad_mut().data();
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g * w.data()[i];
    }
    if (w.requires_grad()) {
      double* dw = const_cast<Tensor&>(w).grad_mut().data();
      for (std::size_t i = 0; i < w.numel(); ++i) dw[i] += g * x.data()[i];
    }
  });
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i] * weights.data()[i];
  out.data_mut()[0] = acc;
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::make_op(x.shape(), {x}, [factor](TensorNode& self) {
    const Tensor& x = self.parents[0];
    if (!x.requires_grad()) return;
    double* dx = const_cast<Tensor&>(x).grad_mut().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += factor * self.grad[i];
  });
  double* y = out.data_mut().data();
  const double* xd = x.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = factor * xd[i];
  return out;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const Shape ls = logits.shape();
  FSSD_CHECK(ls.h == 1 && ls.w == 1, "softmax_rows: expected (rows, classes, 1, 1)");
  std::vector<double> out(logits.numel());
  const double* ld = logits.data().data();
  for (int r = 0; r < ls.n; ++r) {
    const double* row = ld + static_cast<std::size_t>(r) * ls.c;
    double m = row[0];
    for (int k = 1; k < ls.c; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < ls.c; ++k) z += std::exp(row[k] - m);
    for (int k = 0; k < ls.c; ++k) out[static_cast<std::size_t>(r) * ls.c + k] = std::exp(row[k] - m) / z;
  }
  return out;
}

}  // namespace fssd::ops
