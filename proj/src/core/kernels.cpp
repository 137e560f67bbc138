#include "core/kernels.hpp"

#include <cblas.h>

#include <cstring>

namespace xdd::kernels {

void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
           const float* b, float beta, float* c) {
  const int lda = ta ? m : k;
  const int ldb = tb ? k : n;
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, n);
}

void im2col(const float* image, int b, int h, int w, int c, int kh, int kw,
            int stride, int pad, int out_h, int out_w, float* cols) {
  const size_t patch = static_cast<size_t>(kh) * kw * c;
  const size_t row_bytes = static_cast<size_t>(c) * sizeof(float);
  for (int bi = 0; bi < b; ++bi) {
    const float* img = image + static_cast<size_t>(bi) * h * w * c;
    float* crow = cols + static_cast<size_t>(bi) * out_h * out_w * patch;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, crow += patch) {
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        float* dst = crow;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, static_cast<size_t>(kw) * row_bytes);
            dst += static_cast<size_t>(kw) * c;
            continue;
          }
          const float* src_row = img + (static_cast<size_t>(iy) * w) * c;
          for (int kx = 0; kx < kw; ++kx, dst += c) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= w)
              std::memset(dst, 0, row_bytes);
            else
              std::memcpy(dst, src_row + static_cast<size_t>(ix) * c,
                          row_bytes);
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int b, int h, int w, int c, int kh, int kw,
            int stride, int pad, int out_h, int out_w, float* image) {
  const size_t patch = static_cast<size_t>(kh) * kw * c;
  for (int bi = 0; bi < b; ++bi) {
    float* img = image + static_cast<size_t>(bi) * h * w * c;
    const float* crow = cols + static_cast<size_t>(bi) * out_h * out_w * patch;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, crow += patch) {
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        const float* src = crow;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= h) {
            src += static_cast<size_t>(kw) * c;
            continue;
          }
          float* dst_row = img + (static_cast<size_t>(iy) * w) * c;
          for (int kx = 0; kx < kw; ++kx, src += c) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= w) continue;
            float* dst = dst_row + static_cast<size_t>(ix) * c;
            for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
  }
}

}  // namespace xdd::kernels
