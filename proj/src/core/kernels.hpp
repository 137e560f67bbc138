#pragma once

#include <cstddef>

namespace xdd::kernels {

// C[m,n] = alpha * op(A) @ op(B) + beta * C, all row-major compact.
// A is stored [m,k] (or [k,m] when ta), B is [k,n] (or [n,k] when tb).
void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
           const float* b, float beta, float* c);

// NHWC patch extraction. cols is [B*out_h*out_w, kh*kw*c] row-major; patch
// columns are ordered (kh, kw, c) with c contiguous.
void im2col(const float* image, int b, int h, int w, int c, int kh, int kw,
            int stride, int pad, int out_h, int out_w, float* cols);

// Scatter-add inverse of im2col (image is accumulated into, not cleared).
void col2im(const float* cols, int b, int h, int w, int c, int kh, int kw,
            int stride, int pad, int out_h, int out_w, float* image);

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int convt_out_dim(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

}  // namespace xdd::kernels
