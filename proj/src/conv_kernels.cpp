#include "fssd/detail/conv_kernels.hpp"

#include <algorithm>
#include <cstring>

#include "fssd/thread_pool.hpp"

namespace fssd::detail {

namespace {

typedef double vd8 __attribute__((vector_size(64)));

inline vd8 vsplat(double v) { return vd8{v, v, v, v, v, v, v, v}; }

inline vd8 vload(const double* p) {
  vd8 r;
  std::memcpy(&r, p, sizeof(r));
  return r;
}

inline void vstore(double* p, vd8 v) { std::memcpy(p, &v, sizeof(v)); }

inline void vstore_acc(double* p, vd8 v, bool accumulate) {
  if (accumulate) v += vload(p);
  vstore(p, v);
}

inline double hsum(vd8 v) {
  double s = 0.0;
  for (int i = 0; i < 8; ++i) s += v[i];
  return s;
}

inline std::size_t plane_of(int h, int w) { return static_cast<std::size_t>(h) * w; }

// Scalar reference for one output element; shared by borders and the generic path.
inline double conv_point(const double* xp, const double* wp, int in_c, int in_h, int in_w,
                         int kh, int kw, int stride, int pad, int oh, int ow,
                         std::size_t x_chan_stride) {
  double acc = 0.0;
  for (int ic = 0; ic < in_c; ++ic) {
    const double* xc = xp + ic * x_chan_stride;
    const double* wc = wp + static_cast<std::size_t>(ic) * kh * kw;
    for (int r = 0; r < kh; ++r) {
      const int ih = oh * stride - pad + r;
      if (ih < 0 || ih >= in_h) continue;
      const double* xr = xc + static_cast<std::size_t>(ih) * in_w;
      for (int c = 0; c < kw; ++c) {
        const int iw = ow * stride - pad + c;
        if (iw < 0 || iw >= in_w) continue;
        acc += wc[r * kw + c] * xr[iw];
      }
    }
  }
  return acc;
}

}  // namespace

void conv_forward_generic(const double* x, const double* w, const double* bias, double* y,
                          int n, int in_c, int in_h, int in_w, int out_c, int kh, int kw,
                          int stride, int pad, int out_h, int out_w, bool accumulate) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane_of(in_h, in_w);
  const std::size_t y_img = static_cast<std::size_t>(out_c) * plane_of(out_h, out_w);
  parallel_for(n * out_c, [&](int task) {
    const int img = task / out_c;
    const int oc = task % out_c;
    const double* xp = x + img * x_img;
    const double* wp = w + static_cast<std::size_t>(oc) * in_c * kh * kw;
    double* yp = y + img * y_img + static_cast<std::size_t>(oc) * plane_of(out_h, out_w);
    const double b = bias ? bias[oc] : 0.0;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        const double v =
            b + conv_point(xp, wp, in_c, in_h, in_w, kh, kw, stride, pad, oh, ow,
                           plane_of(in_h, in_w));
        double* dst = yp + static_cast<std::size_t>(oh) * out_w + ow;
        *dst = accumulate ? *dst + v : v;
      }
    }
  });
}

namespace {

// Interior microkernel: a tile of `OCB` output channels x (VEC*8) columns held in
// registers while sweeping all (ic, kh, kw) contributions.
template <int OCB, int VEC>
inline void tile3x3(const double* xp, const double* wbase, std::size_t w_oc_stride,
                    const double* bias, double* ybase, std::size_t y_oc_stride, int in_c,
                    int in_w, std::size_t x_chan, int oh, int ow0, int pad, bool accumulate) {
  vd8 acc[OCB][VEC];
  for (int j = 0; j < OCB; ++j) {
    const vd8 b = vsplat(bias ? bias[j] : 0.0);
    for (int v = 0; v < VEC; ++v) acc[j][v] = b;
  }
  const int ih0 = oh - pad;
  const int iw0 = ow0 - pad;
  for (int ic = 0; ic < in_c; ++ic) {
    const double* xc = xp + ic * x_chan;
    const double* wc = wbase + static_cast<std::size_t>(ic) * 9;
    for (int r = 0; r < 3; ++r) {
      const double* xr = xc + static_cast<std::size_t>(ih0 + r) * in_w + iw0;
      for (int c = 0; c < 3; ++c) {
        vd8 xv[VEC];
        for (int v = 0; v < VEC; ++v) xv[v] = vload(xr + c + 8 * v);
        for (int j = 0; j < OCB; ++j) {
          const vd8 wv = vsplat(wc[j * w_oc_stride + r * 3 + c]);
          for (int v = 0; v < VEC; ++v) acc[j][v] += wv * xv[v];
        }
      }
    }
  }
  for (int j = 0; j < OCB; ++j) {
    double* yr = ybase + j * y_oc_stride;
    for (int v = 0; v < VEC; ++v) vstore_acc(yr + 8 * v, acc[j][v], accumulate);
  }
}

}  // namespace

void conv3x3_s1_forward(const double* x, const double* w, const double* bias, double* y,
                        int n, int in_c, int in_h, int in_w, int out_c, int pad,
                        bool accumulate) {
  const int out_h = in_h + 2 * pad - 2;
  const int out_w = in_w + 2 * pad - 2;
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane_of(in_h, in_w);
  const std::size_t y_img = static_cast<std::size_t>(out_c) * plane_of(out_h, out_w);
  const std::size_t x_chan = plane_of(in_h, in_w);
  const std::size_t y_chan = plane_of(out_h, out_w);
  // Interior where the whole 3x3 window is in bounds.
  const int row_lo = pad;
  const int row_hi = in_h + pad - 3;  // inclusive
  const int col_lo = pad;
  const int col_hi = in_w + pad - 3;

  const int oc_blocks = (out_c + 3) / 4;
  parallel_for(n * oc_blocks, [&](int task) {
    const int img = task / oc_blocks;
    const int oc0 = (task % oc_blocks) * 4;
    const int ocb = std::min(4, out_c - oc0);
    const double* xp = x + img * x_img;
    const std::size_t w_oc = static_cast<std::size_t>(in_c) * 9;
    const double* wp = w + oc0 * w_oc;
    double* yp = y + img * y_img + oc0 * y_chan;

    for (int oh = row_lo; oh <= row_hi; ++oh) {
      int ow = col_lo;
      double* yrow = yp + static_cast<std::size_t>(oh) * out_w;
      if (ocb == 4) {
        for (; ow + 15 <= col_hi; ow += 16)
          tile3x3<4, 2>(xp, wp, w_oc, bias ? bias + oc0 : nullptr, yrow + ow, y_chan, in_c,
                        in_w, x_chan, oh, ow, pad, accumulate);
        for (; ow + 7 <= col_hi; ow += 8)
          tile3x3<4, 1>(xp, wp, w_oc, bias ? bias + oc0 : nullptr, yrow + ow, y_chan, in_c,
                        in_w, x_chan, oh, ow, pad, accumulate);
      } else {
        for (; ow + 7 <= col_hi; ow += 8) {
          for (int j = 0; j < ocb; ++j)
            tile3x3<1, 1>(xp, wp + j * w_oc, w_oc, bias ? bias + oc0 + j : nullptr,
                          yrow + j * y_chan + ow, y_chan, in_c, in_w, x_chan, oh, ow, pad,
                          accumulate);
        }
      }
      // Scalar columns: left border, tile remainder, right border.
      for (int j = 0; j < ocb; ++j) {
        const double b = bias ? bias[oc0 + j] : 0.0;
        double* yr = yrow + j * y_chan;
        auto point = [&](int col) {
          const double v = b + conv_point(xp, wp + j * w_oc, in_c, in_h, in_w, 3, 3, 1, pad,
                                          oh, col, x_chan);
          yr[col] = accumulate ? yr[col] + v : v;
        };
        for (int col = 0; col < col_lo; ++col) point(col);
        for (int col = ow; col < out_w; ++col) point(col);
      }
    }
    // Border rows (pad > 0 only).
    for (int j = 0; j < ocb; ++j) {
      const double b = bias ? bias[oc0 + j] : 0.0;
      double* yc = yp + j * y_chan;
      for (int oh = 0; oh < out_h; ++oh) {
        if (oh >= row_lo && oh <= row_hi) continue;
        for (int ow = 0; ow < out_w; ++ow) {
          const double v = b + conv_point(xp, wp + j * w_oc, in_c, in_h, in_w, 3, 3, 1, pad,
                                          oh, ow, x_chan);
          double* dst = yc + static_cast<std::size_t>(oh) * out_w + ow;
          *dst = accumulate ? *dst + v : v;
        }
      }
    }
  });
}

void conv1x1_forward(const double* x, const double* w, const double* bias, double* y, int n,
                     int in_c, int plane, int out_c, bool accumulate) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane;
  const std::size_t y_img = static_cast<std::size_t>(out_c) * plane;
  const int oc_blocks = (out_c + 3) / 4;
  parallel_for(n * oc_blocks, [&](int task) {
    const int img = task / oc_blocks;
    const int oc0 = (task % oc_blocks) * 4;
    const int ocb = std::min(4, out_c - oc0);
    const double* xp = x + img * x_img;
    double* yp = y + img * y_img;
    for (int j = 0; j < ocb; ++j) {
      const int oc = oc0 + j;
      double* yc = yp + static_cast<std::size_t>(oc) * plane;
      const double* wr = w + static_cast<std::size_t>(oc) * in_c;
      const double b = bias ? bias[oc] : 0.0;
      int i = 0;
      for (; i + 8 <= plane; i += 8) {
        vd8 acc = vsplat(b);
        for (int ic = 0; ic < in_c; ++ic)
          acc += vsplat(wr[ic]) * vload(xp + ic * static_cast<std::size_t>(plane) + i);
        vstore_acc(yc + i, acc, accumulate);
      }
      for (; i < plane; ++i) {
        double acc = b;
        for (int ic = 0; ic < in_c; ++ic) acc += wr[ic] * xp[ic * static_cast<std::size_t>(plane) + i];
        yc[i] = accumulate ? yc[i] + acc : acc;
      }
    }
  });
}

void conv3x3_s1_dweights(const double* x, const double* g, double* dw, int n, int in_c,
                         int in_h, int in_w, int out_c, int pad, int out_h, int out_w) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane_of(in_h, in_w);
  const std::size_t g_img = static_cast<std::size_t>(out_c) * plane_of(out_h, out_w);
  parallel_for(out_c, [&](int oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      for (int r = 0; r < 3; ++r) {
        const int oh_lo = std::max(0, pad - r);
        const int oh_hi = std::min(out_h - 1, in_h - 1 - r + pad);
        for (int c = 0; c < 3; ++c) {
          const int ow_lo = std::max(0, pad - c);
          const int ow_hi = std::min(out_w - 1, in_w - 1 - c + pad);
          if (oh_lo > oh_hi || ow_lo > ow_hi) continue;
          vd8 vacc0 = vsplat(0.0), vacc1 = vsplat(0.0);
          double sacc = 0.0;
          const int len = ow_hi - ow_lo + 1;
          for (int img = 0; img < n; ++img) {
            const double* gp = g + img * g_img + static_cast<std::size_t>(oc) * plane_of(out_h, out_w);
            const double* xp = x + img * x_img + static_cast<std::size_t>(ic) * plane_of(in_h, in_w);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const double* gr = gp + static_cast<std::size_t>(oh) * out_w + ow_lo;
              const double* xr =
                  xp + static_cast<std::size_t>(oh - pad + r) * in_w + (ow_lo - pad + c);
              int i = 0;
              for (; i + 16 <= len; i += 16) {
                vacc0 += vload(gr + i) * vload(xr + i);
                vacc1 += vload(gr + i + 8) * vload(xr + i + 8);
              }
              for (; i < len; ++i) sacc += gr[i] * xr[i];
            }
          }
          dw[((static_cast<std::size_t>(oc) * in_c + ic) * 3 + r) * 3 + c] +=
              hsum(vacc0) + hsum(vacc1) + sacc;
        }
      }
    }
  });
}

void conv1x1_dweights(const double* x, const double* g, double* dw, int n, int in_c, int plane,
                      int out_c) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane;
  const std::size_t g_img = static_cast<std::size_t>(out_c) * plane;
  parallel_for(out_c, [&](int oc) {
    for (int ic = 0; ic < in_c; ++ic) {
      vd8 vacc0 = vsplat(0.0), vacc1 = vsplat(0.0);
      double sacc = 0.0;
      for (int img = 0; img < n; ++img) {
        const double* gp = g + img * g_img + static_cast<std::size_t>(oc) * plane;
        const double* xp = x + img * x_img + static_cast<std::size_t>(ic) * plane;
        int i = 0;
        for (; i + 16 <= plane; i += 16) {
          vacc0 += vload(gp + i) * vload(xp + i);
          vacc1 += vload(gp + i + 8) * vload(xp + i + 8);
        }
        for (; i < plane; ++i) sacc += gp[i] * xp[i];
      }
      dw[static_cast<std::size_t>(oc) * in_c + ic] += hsum(vacc0) + hsum(vacc1) + sacc;
    }
  });
}

void conv_dweights_generic(const double* x, const double* g, double* dw, int n, int in_c,
                           int in_h, int in_w, int out_c, int kh, int kw, int stride, int pad,
                           int out_h, int out_w) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane_of(in_h, in_w);
  const std::size_t g_img = static_cast<std::size_t>(out_c) * plane_of(out_h, out_w);
  parallel_for(out_c, [&](int oc) {
    for (int img = 0; img < n; ++img) {
      const double* gp = g + img * g_img + static_cast<std::size_t>(oc) * plane_of(out_h, out_w);
      const double* xp = x + img * x_img;
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
          const double gv = gp[static_cast<std::size_t>(oh) * out_w + ow];
          if (gv == 0.0) continue;
          for (int ic = 0; ic < in_c; ++ic) {
            const double* xc = xp + static_cast<std::size_t>(ic) * plane_of(in_h, in_w);
            for (int r = 0; r < kh; ++r) {
              const int ih = oh * stride - pad + r;
              if (ih < 0 || ih >= in_h) continue;
              for (int c = 0; c < kw; ++c) {
                const int iw = ow * stride - pad + c;
                if (iw < 0 || iw >= in_w) continue;
                dw[((static_cast<std::size_t>(oc) * in_c + ic) * kh + r) * kw + c] +=
                    gv * xc[static_cast<std::size_t>(ih) * in_w + iw];
              }
            }
          }
        }
      }
    }
  });
}

void conv_dinput_generic(const double* g, const double* w, double* dx, int n, int in_c,
                         int in_h, int in_w, int out_c, int kh, int kw, int stride, int pad,
                         int out_h, int out_w) {
  const std::size_t x_img = static_cast<std::size_t>(in_c) * plane_of(in_h, in_w);
  const std::size_t g_img = static_cast<std::size_t>(out_c) * plane_of(out_h, out_w);
  parallel_for(n, [&](int img) {
    const double* gp = g + img * g_img;
    double* dxp = dx + img * x_img;
    for (int oc = 0; oc < out_c; ++oc) {
      const double* gc = gp + static_cast<std::size_t>(oc) * plane_of(out_h, out_w);
      const double* wc = w + static_cast<std::size_t>(oc) * in_c * kh * kw;
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
          const double gv = gc[static_cast<std::size_t>(oh) * out_w + ow];
          if (gv == 0.0) continue;
          for (int ic = 0; ic < in_c; ++ic) {
            double* dxc = dxp + static_cast<std::size_t>(ic) * plane_of(in_h, in_w);
            const double* wk = wc + static_cast<std::size_t>(ic) * kh * kw;
            for (int r = 0; r < kh; ++r) {
              const int ih = oh * stride - pad + r;
              if (ih < 0 || ih >= in_h) continue;
              for (int c = 0; c < kw; ++c) {
                const int iw = ow * stride - pad + c;
                if (iw < 0 || iw >= in_w) continue;
                dxc[static_cast<std::size_t>(ih) * in_w + iw] += gv * wk[r * kw + c];
              }
            }
          }
        }
      }
    }
  });
}

void conv_dbias(const double* g, double* db, int n, int out_c, int plane) {
  for (int img = 0; img < n; ++img) {
    for (int oc = 0; oc < out_c; ++oc) {
      const double* gp = g + (static_cast<std::size_t>(img) * out_c + oc) * plane;
      double acc = 0.0;
      for (int i = 0; i < plane; ++i) acc += gp[i];
      db[oc] += acc;
    }
  }
}

}  // namespace fssd::detail
