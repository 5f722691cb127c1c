#pragma once

#include <cstddef>

// Low-level convolution kernels behind ops::conv2d. Raw-pointer interfaces; shape
// checking and graph wiring live in ops.cpp. All loops have a fixed iteration
// order per output element, so results are bitwise reproducible regardless of
// the thread count.
namespace fssd::detail {

// Generic direct cross-correlation, any kernel/stride/pad. `accumulate` adds into y
// instead of overwriting. bias may be null.
void conv_forward_generic(const double* x, const double* w, const double* bias, double* y,
                          int n, int in_c, int in_h, int in_w, int out_c, int kh, int kw,
                          int stride, int pad, int out_h, int out_w, bool accumulate);

// Register-tiled 3x3 stride-1 path (vector-extension microkernel, interior tiles +
// scalar borders). out_h = in_h + 2*pad - 2, out_w likewise.
void conv3x3_s1_forward(const double* x, const double* w, const double* bias, double* y,
                        int n, int in_c, int in_h, int in_w, int out_c, int pad,
                        bool accumulate);

// 1x1 stride-1 path; spatial extent treated as a flat run of in_h*in_w values.
void conv1x1_forward(const double* x, const double* w, const double* bias, double* y, int n,
                     int in_c, int plane, int out_c, bool accumulate);

// Weight gradient for 3x3 stride-1: dw[oc,ic,kh,kw] += sum g * x (row-dot sweep).
void conv3x3_s1_dweights(const double* x, const double* g, double* dw, int n, int in_c,
                         int in_h, int in_w, int out_c, int pad, int out_h, int out_w);

void conv1x1_dweights(const double* x, const double* g, double* dw, int n, int in_c, int plane,
                      int out_c);

// Weight gradient, generic path (accumulates).
void conv_dweights_generic(const double* x, const double* g, double* dw, int n, int in_c,
                           int in_h, int in_w, int out_c, int kh, int kw, int stride, int pad,
                           int out_h, int out_w);

// Input gradient, generic path (accumulates into dx).
void conv_dinput_generic(const double* g, const double* w, double* dx, int n, int in_c,
                         int in_h, int in_w, int out_c, int kh, int kw, int stride, int pad,
                         int out_h, int out_w);

// Bias gradient: db[oc] += sum over (n, out_h, out_w) of g.
void conv_dbias(const double* g, double* db, int n, int out_c, int plane);

}  // namespace fssd::detail
