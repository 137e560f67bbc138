#pragma once

#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace xdd::ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
// Logistic with output clamped inside (0,1) so float saturation cannot
// produce exact 0/1 probabilities.
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope);
Tensor relu(const Tensor& a);
// Elementwise product with a constant mask (dropout, relu masks).
Tensor mul_mask(const Tensor& a, std::shared_ptr<std::vector<float>> mask);

// Identity forward; backward multiplies the gradient by -lambda.
Tensor grad_reverse(const Tensor& a, float lambda);

// ---- shape ----
Tensor view(const Tensor& a, Shape shape);  // one dim may be -1
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, int offset, int len);
// Broadcast [B,C] over a spatial grid -> [B,H,W,C].
Tensor tile_to_grid(const Tensor& a, int h, int w);
Tensor spatial_sum(const Tensor& a);  // [B,H,W,C] -> [B,C]

// ---- reductions / broadcasts ----
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
Tensor row_sum(const Tensor& a);             // [B,M] -> [B]
Tensor row_broadcast(const Tensor& a, int m);  // [B] -> [B,M]
Tensor channel_sum(const Tensor& a);           // [..., C] -> [C]
Tensor channel_broadcast(const Tensor& a, const Shape& full_shape);
Tensor bias_add(const Tensor& a, const Tensor& bias);  // bias over last dim
// Fill `shape` with a scalar tensor's value times `factor`.
Tensor spread(const Tensor& scalar, const Shape& shape, float factor);

// ---- linear algebra ----
// 2-D only; ta/tb select transposed reads of the stored matrices.
Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false,
              bool tb = false);

// ---- convolution family (NHWC) ----
struct ConvGeom {
  int kh = 4, kw = 4, stride = 2, pad = 1;
};

// x [B,H,W,Cin], w [kh*kw*Cin, Cout] -> [B,OH,OW,Cout]
Tensor conv2d(const Tensor& x, const Tensor& w, const ConvGeom& g, int cin);
// Gradient of conv2d w.r.t. its input; g_out [B,OH,OW,Cout] -> [B,H,W,Cin].
Tensor conv2d_dx(const Tensor& g_out, const Tensor& w, const ConvGeom& g,
                 int in_h, int in_w, int cin);
// Gradient of conv2d w.r.t. its weights -> [kh*kw*Cin, Cout].
Tensor conv2d_dw(const Tensor& x, const Tensor& g_out, const ConvGeom& g,
                 int cin, int cout);

// Fractionally-strided (transposed) convolution.
// x [B,H,W,Cin], w [Cin, kh*kw*Cout] -> [B,(H-1)s-2p+kh, ..., Cout]
Tensor convt2d(const Tensor& x, const Tensor& w, const ConvGeom& g, int cout);
Tensor convt2d_dx(const Tensor& g_out, const Tensor& w, const ConvGeom& g,
                  int in_h, int in_w, int cin);
Tensor convt2d_dw(const Tensor& x, const Tensor& g_out, const ConvGeom& g,
                  int cin, int cout);

// ---- normalization ----
// Training-mode batch norm over the last dim of [B,H,W,C] or [B,C].
// batch_mean/batch_var are outputs (biased variance), for running stats.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, float eps,
                        std::vector<float>* batch_mean,
                        std::vector<float>* batch_var);
// Eval-mode batch norm with fixed statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, const std::vector<float>& mean,
                       const std::vector<float>& var, float eps);

// ---- composites ----
inline Tensor mean_abs(const Tensor& a) { return mean(abs(a)); }
inline Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  return mean(abs(sub(a, b)));
}

}  // namespace xdd::ops
