#include "core/ops.hpp"

#include <cmath>
#include <cstring>

#include "core/kernels.hpp"

namespace xdd::ops {

namespace {

using BackFn =
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<char>&)>;

Tensor make_op(Shape shape, std::vector<float> v, std::vector<Tensor> parents,
               BackFn back) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->v = std::move(v);
  bool record = GradMode::enabled();
  if (record) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    record = any;
  }
  if (record) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(back);
  }
  return Tensor(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  XDD_CHECK_ARG(a.shape() == b.shape(),
                std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<float> v(a.numel());
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + pb[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{g, g};
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<float> v(a.numel());
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] - pb[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> out(2);
                   if (need[0]) out[0] = g;
                   if (need[1]) out[1] = neg(g);
                   return out;
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<float> v(a.numel());
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pb[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [a, b](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> out(2);
                   if (need[0]) out[0] = mul(g, b);
                   if (need[1]) out[1] = mul(g, a);
                   return out;
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<float> v(a.numel());
  const float *pa = a.data(), *pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] / pb[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [a, b](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> out(2);
                   if (need[0]) out[0] = div(g, b);
                   if (need[1]) out[1] = neg(div(mul(g, a), square(b)));
                   return out;
                 });
}

Tensor scale(const Tensor& a, float c) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * c;
  return make_op(a.shape(), std::move(v), {a},
                 [c](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{scale(g, c)};
                 });
}

Tensor add_scalar(const Tensor& a, float c) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + c;
  return make_op(a.shape(), std::move(v), {a},
                 [](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{g};
                 });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor abs(const Tensor& a) {
  std::vector<float> v(a.numel());
  auto mask = std::make_shared<std::vector<float>>(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] = std::fabs(pa[i]);
    (*mask)[i] = pa[i] >= 0.0f ? 1.0f : -1.0f;
  }
  return make_op(a.shape(), std::move(v), {a},
                 [mask](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{mul_mask(g, mask)};
                 });
}

Tensor square(const Tensor& a) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pa[i];
  return make_op(a.shape(), std::move(v), {a},
                 [a](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{mul(g, scale(a, 2.0f))};
                 });
}

Tensor sqrt(const Tensor& a) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(pa[i]);
  Tensor y_const = Tensor::from_data(a.shape(), v);
  return make_op(a.shape(), std::move(v), {a},
                 [y_const](const Tensor& g, const std::vector<char>&) {
                   // d sqrt = g / (2 y); y captured as a constant, so this op
                   // supports one differentiation only.
                   return std::vector<Tensor>{div(g, scale(y_const, 2.0f))};
                 });
}

Tensor log(const Tensor& a) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(pa[i]);
  return make_op(a.shape(), std::move(v), {a},
                 [a](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{div(g, a)};
                 });
}

Tensor tanh(const Tensor& a) {
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(pa[i]);
  Tensor y_const = Tensor::from_data(a.shape(), v);
  return make_op(a.shape(), std::move(v), {a},
                 [y_const](const Tensor& g, const std::vector<char>&) {
                   Tensor one = Tensor::full(y_const.shape(), 1.0f);
                   return std::vector<Tensor>{
                       mul(g, sub(one, square(y_const)))};
                 });
}

Tensor sigmoid(const Tensor& a) {
  constexpr float kLo = 1e-7f, kHi = 1.0f - 1e-7f;
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) {
    float y = 1.0f / (1.0f + std::exp(-pa[i]));
    v[i] = y < kLo ? kLo : (y > kHi ? kHi : y);
  }
  Tensor y_const = Tensor::from_data(a.shape(), v);
  return make_op(a.shape(), std::move(v), {a},
                 [y_const](const Tensor& g, const std::vector<char>&) {
                   Tensor one = Tensor::full(y_const.shape(), 1.0f);
                   return std::vector<Tensor>{
                       mul(g, mul(y_const, sub(one, y_const)))};
                 });
}

Tensor mul_mask(const Tensor& a, std::shared_ptr<std::vector<float>> mask) {
  XDD_CHECK_ARG(mask->size() == a.numel(), "mul_mask: size mismatch");
  std::vector<float> v(a.numel());
  const float* pa = a.data();
  const float* pm = mask->data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pm[i];
  return make_op(a.shape(), std::move(v), {a},
                 [mask](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{mul_mask(g, mask)};
                 });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  auto mask = std::make_shared<std::vector<float>>(a.numel());
  const float* pa = a.data();
  for (size_t i = 0; i < mask->size(); ++i)
    (*mask)[i] = pa[i] > 0.0f ? 1.0f : slope;
  return mul_mask(a, mask);
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0f); }

Tensor grad_reverse(const Tensor& a, float lambda) {
  std::vector<float> v(a.values());
  return make_op(a.shape(), std::move(v), {a},
                 [lambda](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{scale(g, -lambda)};
                 });
}

// ---- shape ----

Tensor view(const Tensor& a, Shape shape) {
  size_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      XDD_CHECK_ARG(infer < 0, "view: more than one -1 dim");
      infer = static_cast<int>(i);
    } else {
      known *= static_cast<size_t>(shape[i]);
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = static_cast<int>(a.numel() / known);
  XDD_CHECK_ARG(shape_numel(shape) == a.numel(),
                "view: element count mismatch for " + shape_str(shape));
  Shape orig = a.shape();
  std::vector<float> v(a.values());
  return make_op(std::move(shape), std::move(v), {a},
                 [orig](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{view(g, orig)};
                 });
}

namespace {
// Inverse of slice_last: place `a` into zeros of last-dim size `total`.
Tensor embed_last(const Tensor& a, int total, int offset) {
  Shape shape = a.shape();
  const int len = shape.back();
  shape.back() = total;
  const size_t lead = a.numel() / static_cast<size_t>(len);
  std::vector<float> v(shape_numel(shape), 0.0f);
  const float* pa = a.data();
  for (size_t r = 0; r < lead; ++r)
    std::memcpy(v.data() + r * total + offset, pa + r * len,
                static_cast<size_t>(len) * sizeof(float));
  return make_op(std::move(shape), std::move(v), {a},
                 [offset, len](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{slice_last(g, offset, len)};
                 });
}
}  // namespace

Tensor slice_last(const Tensor& a, int offset, int len) {
  const int total = a.shape().back();
  XDD_CHECK_ARG(offset >= 0 && len > 0 && offset + len <= total,
                "slice_last: range out of bounds");
  Shape shape = a.shape();
  shape.back() = len;
  const size_t lead = a.numel() / static_cast<size_t>(total);
  std::vector<float> v(shape_numel(shape));
  const float* pa = a.data();
  for (size_t r = 0; r < lead; ++r)
    std::memcpy(v.data() + r * len, pa + r * total + offset,
                static_cast<size_t>(len) * sizeof(float));
  return make_op(std::move(shape), std::move(v), {a},
                 [offset, total](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{embed_last(g, total, offset)};
                 });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  XDD_CHECK_ARG(a.ndim() == b.ndim(), "concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.ndim(); ++i)
    XDD_CHECK_ARG(a.dim(i) == b.dim(i), "concat_last: leading dim mismatch");
  const int ca = a.shape().back(), cb = b.shape().back();
  Shape shape = a.shape();
  shape.back() = ca + cb;
  const size_t lead = a.numel() / static_cast<size_t>(ca);
  std::vector<float> v(shape_numel(shape));
  const float *pa = a.data(), *pb = b.data();
  for (size_t r = 0; r < lead; ++r) {
    std::memcpy(v.data() + r * (ca + cb), pa + r * ca,
                static_cast<size_t>(ca) * sizeof(float));
    std::memcpy(v.data() + r * (ca + cb) + ca, pb + r * cb,
                static_cast<size_t>(cb) * sizeof(float));
  }
  return make_op(std::move(shape), std::move(v), {a, b},
                 [ca, cb](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> out(2);
                   if (need[0]) out[0] = slice_last(g, 0, ca);
                   if (need[1]) out[1] = slice_last(g, ca, cb);
                   return out;
                 });
}

Tensor tile_to_grid(const Tensor& a, int h, int w) {
  XDD_CHECK_ARG(a.ndim() == 2, "tile_to_grid expects [B,C]");
  const int b = a.dim(0), c = a.dim(1);
  std::vector<float> v(static_cast<size_t>(b) * h * w * c);
  const float* pa = a.data();
  for (int bi = 0; bi < b; ++bi) {
    const float* src = pa + static_cast<size_t>(bi) * c;
    float* dst = v.data() + static_cast<size_t>(bi) * h * w * c;
    for (int p = 0; p < h * w; ++p)
      std::memcpy(dst + static_cast<size_t>(p) * c, src,
                  static_cast<size_t>(c) * sizeof(float));
  }
  return make_op({b, h, w, c}, std::move(v), {a},
                 [](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{spatial_sum(g)};
                 });
}

Tensor spatial_sum(const Tensor& a) {
  XDD_CHECK_ARG(a.ndim() == 4, "spatial_sum expects [B,H,W,C]");
  const int b = a.dim(0), h = a.dim(1), w = a.dim(2), c = a.dim(3);
  std::vector<float> v(static_cast<size_t>(b) * c, 0.0f);
  const float* pa = a.data();
  for (int bi = 0; bi < b; ++bi) {
    float* dst = v.data() + static_cast<size_t>(bi) * c;
    const float* src = pa + static_cast<size_t>(bi) * h * w * c;
    for (int p = 0; p < h * w; ++p)
      for (int ci = 0; ci < c; ++ci) dst[ci] += src[static_cast<size_t>(p) * c + ci];
  }
  return make_op({b, c}, std::move(v), {a},
                 [h, w](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{tile_to_grid(g, h, w)};
                 });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const float* pa = a.data();
  for (size_t i = 0; i < a.numel(); ++i) acc += pa[i];
  return make_op({1}, {static_cast<float>(acc)}, {a},
                 [shape = a.shape()](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{spread(g, shape, 1.0f)};
                 });
}

Tensor mean(const Tensor& a) {
  XDD_CHECK_ARG(a.numel() > 0, "mean of empty tensor");
  double acc = 0.0;
  const float* pa = a.data();
  for (size_t i = 0; i < a.numel(); ++i) acc += pa[i];
  const float inv_n = 1.0f / static_cast<float>(a.numel());
  return make_op({1}, {static_cast<float>(acc / static_cast<double>(a.numel()))},
                 {a},
                 [shape = a.shape(), inv_n](const Tensor& g,
                                            const std::vector<char>&) {
                   return std::vector<Tensor>{spread(g, shape, inv_n)};
                 });
}

Tensor spread(const Tensor& scalar, const Shape& shape, float factor) {
  XDD_CHECK_ARG(scalar.numel() == 1, "spread expects a scalar");
  std::vector<float> v(shape_numel(shape), scalar.data()[0] * factor);
  return make_op(shape, std::move(v), {scalar},
                 [factor](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{scale(sum(g), factor)};
                 });
}

Tensor row_sum(const Tensor& a) {
  XDD_CHECK_ARG(a.ndim() == 2, "row_sum expects [B,M]");
  const int b = a.dim(0), m = a.dim(1);
  std::vector<float> v(static_cast<size_t>(b));
  const float* pa = a.data();
  for (int bi = 0; bi < b; ++bi) {
    double acc = 0.0;
    const float* row = pa + static_cast<size_t>(bi) * m;
    for (int i = 0; i < m; ++i) acc += row[i];
    v[static_cast<size_t>(bi)] = static_cast<float>(acc);
  }
  return make_op({b}, std::move(v), {a},
                 [m](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{row_broadcast(g, m)};
                 });
}

Tensor row_broadcast(const Tensor& a, int m) {
  XDD_CHECK_ARG(a.ndim() == 1, "row_broadcast expects [B]");
  const int b = a.dim(0);
  std::vector<float> v(static_cast<size_t>(b) * m);
  const float* pa = a.data();
  for (int bi = 0; bi < b; ++bi)
    for (int i = 0; i < m; ++i) v[static_cast<size_t>(bi) * m + i] = pa[bi];
  return make_op({b, m}, std::move(v), {a},
                 [](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{row_sum(g)};
                 });
}

Tensor channel_sum(const Tensor& a) {
  const int c = a.shape().back();
  const size_t lead = a.numel() / static_cast<size_t>(c);
  std::vector<double> acc(static_cast<size_t>(c), 0.0);
  const float* pa = a.data();
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci) acc[static_cast<size_t>(ci)] += pa[r * c + ci];
  std::vector<float> v(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) v[static_cast<size_t>(ci)] = static_cast<float>(acc[static_cast<size_t>(ci)]);
  return make_op({c}, std::move(v), {a},
                 [shape = a.shape()](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{channel_broadcast(g, shape)};
                 });
}

Tensor channel_broadcast(const Tensor& a, const Shape& full_shape) {
  const int c = full_shape.back();
  XDD_CHECK_ARG(a.ndim() == 1 && a.dim(0) == c,
                "channel_broadcast: channel count mismatch");
  std::vector<float> v(shape_numel(full_shape));
  const float* pa = a.data();
  const size_t lead = v.size() / static_cast<size_t>(c);
  for (size_t r = 0; r < lead; ++r)
    std::memcpy(v.data() + r * c, pa, static_cast<size_t>(c) * sizeof(float));
  return make_op(full_shape, std::move(v), {a},
                 [](const Tensor& g, const std::vector<char>&) {
                   return std::vector<Tensor>{channel_sum(g)};
                 });
}

Tensor bias_add(const Tensor& a, const Tensor& bias) {
  const int c = a.shape().back();
  XDD_CHECK_ARG(bias.ndim() == 1 && bias.dim(0) == c,
                "bias_add: bias length must match last dim");
  std::vector<float> v(a.numel());
  const float *pa = a.data(), *pb = bias.data();
  const size_t lead = a.numel() / static_cast<size_t>(c);
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci) v[r * c + ci] = pa[r * c + ci] + pb[ci];
  return make_op(a.shape(), std::move(v), {a, bias},
                 [](const Tensor& g, const std::vector<char>& need) {
                   std::vector<Tensor> out(2);
                   if (need[0]) out[0] = g;
                   if (need[1]) out[1] = channel_sum(g);
                   return out;
                 });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  XDD_CHECK_ARG(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-D tensors");
  const int m = ta ? a.dim(1) : a.dim(0);
  const int k = ta ? a.dim(0) : a.dim(1);
  const int kb = tb ? b.dim(1) : b.dim(0);
  const int n = tb ? b.dim(0) : b.dim(1);
  XDD_CHECK_ARG(k == kb, "matmul: inner dim mismatch");
  std::vector<float> v(static_cast<size_t>(m) * n);
  kernels::sgemm(ta, tb, m, n, k, 1.0f, a.data(), b.data(), 0.0f, v.data());
  return make_op(
      {m, n}, std::move(v), {a, b},
      [a, b, ta, tb](const Tensor& g, const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) {
          if (!ta)
            out[0] = tb ? matmul(g, b, false, false) : matmul(g, b, false, true);
          else
            out[0] = tb ? matmul(b, g, true, true) : matmul(b, g, false, true);
        }
        if (need[1]) {
          if (!tb)
            out[1] = ta ? matmul(a, g, false, false) : matmul(a, g, true, false);
          else
            out[1] = ta ? matmul(g, a, true, true) : matmul(g, a, true, false);
        }
        return out;
      });
}

// ---- convolutions ----

namespace {
void check_image(const Tensor& x, int c, const char* op) {
  XDD_CHECK_ARG(x.ndim() == 4 && x.dim(3) == c,
                std::string(op) + ": expected NHWC tensor with " +
                    std::to_string(c) + " channels, got " +
                    shape_str(x.shape()));
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const ConvGeom& g, int cin) {
  check_image(x, cin, "conv2d");
  const int b = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int k = g.kh * g.kw * cin;
  XDD_CHECK_ARG(w.ndim() == 2 && w.dim(0) == k, "conv2d: weight shape mismatch");
  const int cout = w.dim(1);
  const int oh = kernels::conv_out_dim(h, g.kh, g.stride, g.pad);
  const int ow = kernels::conv_out_dim(ww, g.kw, g.stride, g.pad);
  const size_t m = static_cast<size_t>(b) * oh * ow;
  std::vector<float> cols(m * k);
  kernels::im2col(x.data(), b, h, ww, cin, g.kh, g.kw, g.stride, g.pad, oh, ow,
                  cols.data());
  std::vector<float> v(m * cout);
  kernels::sgemm(false, false, static_cast<int>(m), cout, k, 1.0f, cols.data(),
                 w.data(), 0.0f, v.data());
  return make_op(
      {b, oh, ow, cout}, std::move(v), {x, w},
      [x, w, g, cin, h, ww, cout](const Tensor& gr,
                                  const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = conv2d_dx(gr, w, g, h, ww, cin);
        if (need[1]) out[1] = conv2d_dw(x, gr, g, cin, cout);
        return out;
      });
}

Tensor conv2d_dx(const Tensor& g_out, const Tensor& w, const ConvGeom& g,
                 int in_h, int in_w, int cin) {
  const int b = g_out.dim(0), oh = g_out.dim(1), ow = g_out.dim(2),
            cout = g_out.dim(3);
  const int k = g.kh * g.kw * cin;
  XDD_CHECK_ARG(w.ndim() == 2 && w.dim(0) == k && w.dim(1) == cout,
                "conv2d_dx: weight shape mismatch");
  const size_t m = static_cast<size_t>(b) * oh * ow;
  std::vector<float> dcols(m * k);
  kernels::sgemm(false, true, static_cast<int>(m), k, cout, 1.0f, g_out.data(),
                 w.data(), 0.0f, dcols.data());
  std::vector<float> v(static_cast<size_t>(b) * in_h * in_w * cin, 0.0f);
  kernels::col2im(dcols.data(), b, in_h, in_w, cin, g.kh, g.kw, g.stride, g.pad,
                  oh, ow, v.data());
  return make_op(
      {b, in_h, in_w, cin}, std::move(v), {g_out, w},
      [g_out, w, g, cin, cout](const Tensor& u, const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = conv2d(u, w, g, cin);
        if (need[1]) out[1] = conv2d_dw(u, g_out, g, cin, cout);
        return out;
      });
}

Tensor conv2d_dw(const Tensor& x, const Tensor& g_out, const ConvGeom& g,
                 int cin, int cout) {
  check_image(x, cin, "conv2d_dw");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = g_out.dim(1), ow = g_out.dim(2);
  XDD_CHECK_ARG(g_out.dim(0) == b && g_out.dim(3) == cout,
                "conv2d_dw: grad shape mismatch");
  const int k = g.kh * g.kw * cin;
  const size_t m = static_cast<size_t>(b) * oh * ow;
  std::vector<float> cols(m * k);
  kernels::im2col(x.data(), b, h, w, cin, g.kh, g.kw, g.stride, g.pad, oh, ow,
                  cols.data());
  std::vector<float> v(static_cast<size_t>(k) * cout);
  kernels::sgemm(true, false, k, cout, static_cast<int>(m), 1.0f, cols.data(),
                 g_out.data(), 0.0f, v.data());
  return make_op(
      {k, cout}, std::move(v), {x, g_out},
      [x, g_out, g, cin, h, w, cout](const Tensor& u,
                                     const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = conv2d_dx(g_out, u, g, h, w, cin);
        if (need[1]) out[1] = conv2d(x, u, g, cin);
        return out;
      });
}

Tensor convt2d(const Tensor& x, const Tensor& w, const ConvGeom& g, int cout) {
  const int b = x.dim(0), h = x.dim(1), ww = x.dim(2), cin = x.dim(3);
  const int k2 = g.kh * g.kw * cout;
  XDD_CHECK_ARG(w.ndim() == 2 && w.dim(0) == cin && w.dim(1) == k2,
                "convt2d: weight shape mismatch");
  const int oh = kernels::convt_out_dim(h, g.kh, g.stride, g.pad);
  const int ow = kernels::convt_out_dim(ww, g.kw, g.stride, g.pad);
  XDD_CHECK_ARG(kernels::conv_out_dim(oh, g.kh, g.stride, g.pad) == h,
                "convt2d: geometry not invertible");
  const size_t m = static_cast<size_t>(b) * h * ww;
  std::vector<float> cols(m * k2);
  kernels::sgemm(false, false, static_cast<int>(m), k2, cin, 1.0f, x.data(),
                 w.data(), 0.0f, cols.data());
  std::vector<float> v(static_cast<size_t>(b) * oh * ow * cout, 0.0f);
  kernels::col2im(cols.data(), b, oh, ow, cout, g.kh, g.kw, g.stride, g.pad, h,
                  ww, v.data());
  return make_op(
      {b, oh, ow, cout}, std::move(v), {x, w},
      [x, w, g, cout, h, ww, cin](const Tensor& gr,
                                  const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = convt2d_dx(gr, w, g, h, ww, cin);
        if (need[1]) out[1] = convt2d_dw(x, gr, g, cin, cout);
        return out;
      });
}

Tensor convt2d_dx(const Tensor& g_out, const Tensor& w, const ConvGeom& g,
                  int in_h, int in_w, int cin) {
  const int b = g_out.dim(0), oh = g_out.dim(1), ow = g_out.dim(2),
            cout = g_out.dim(3);
  const int k2 = g.kh * g.kw * cout;
  XDD_CHECK_ARG(w.ndim() == 2 && w.dim(0) == cin && w.dim(1) == k2,
                "convt2d_dx: weight shape mismatch");
  const size_t m = static_cast<size_t>(b) * in_h * in_w;
  std::vector<float> dcols(m * k2);
  kernels::im2col(g_out.data(), b, oh, ow, cout, g.kh, g.kw, g.stride, g.pad,
                  in_h, in_w, dcols.data());
  std::vector<float> v(m * cin);
  kernels::sgemm(false, true, static_cast<int>(m), cin, k2, 1.0f, dcols.data(),
                 w.data(), 0.0f, v.data());
  return make_op(
      {b, in_h, in_w, cin}, std::move(v), {g_out, w},
      [g_out, w, g, cout, cin](const Tensor& u, const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = convt2d(u, w, g, cout);
        if (need[1]) out[1] = convt2d_dw(u, g_out, g, cin, cout);
        return out;
      });
}

Tensor convt2d_dw(const Tensor& x, const Tensor& g_out, const ConvGeom& g,
                  int cin, int cout) {
  check_image(x, cin, "convt2d_dw");
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = g_out.dim(1), ow = g_out.dim(2);
  XDD_CHECK_ARG(g_out.dim(0) == b && g_out.dim(3) == cout,
                "convt2d_dw: grad shape mismatch");
  const int k2 = g.kh * g.kw * cout;
  const size_t m = static_cast<size_t>(b) * h * w;
  std::vector<float> dcols(m * k2);
  kernels::im2col(g_out.data(), b, oh, ow, cout, g.kh, g.kw, g.stride, g.pad, h,
                  w, dcols.data());
  std::vector<float> v(static_cast<size_t>(cin) * k2);
  kernels::sgemm(true, false, cin, k2, static_cast<int>(m), 1.0f, x.data(),
                 dcols.data(), 0.0f, v.data());
  return make_op(
      {cin, k2}, std::move(v), {x, g_out},
      [x, g_out, g, cin, cout](const Tensor& u, const std::vector<char>& need) {
        std::vector<Tensor> out(2);
        if (need[0]) out[0] = convt2d_dx(g_out, u, g, x.dim(1), x.dim(2), cin);
        if (need[1]) out[1] = convt2d(x, u, g, cout);
        return out;
      });
}

// ---- batch norm ----

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, float eps,
                        std::vector<float>* batch_mean,
                        std::vector<float>* batch_var) {
  const int c = x.shape().back();
  XDD_CHECK_ARG(gamma.numel() == static_cast<size_t>(c) &&
                    beta.numel() == static_cast<size_t>(c),
                "batch_norm: gamma/beta length mismatch");
  const size_t lead = x.numel() / static_cast<size_t>(c);
  XDD_CHECK_ARG(lead > 1, "batch_norm_train needs more than one sample");

  std::vector<double> mean_d(static_cast<size_t>(c), 0.0), var_d(static_cast<size_t>(c), 0.0);
  const float* px = x.data();
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci) mean_d[static_cast<size_t>(ci)] += px[r * c + ci];
  for (int ci = 0; ci < c; ++ci) mean_d[static_cast<size_t>(ci)] /= static_cast<double>(lead);
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci) {
      double d = px[r * c + ci] - mean_d[static_cast<size_t>(ci)];
      var_d[static_cast<size_t>(ci)] += d * d;
    }
  for (int ci = 0; ci < c; ++ci) var_d[static_cast<size_t>(ci)] /= static_cast<double>(lead);

  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto invstd = std::make_shared<std::vector<float>>(static_cast<size_t>(c));
  if (batch_mean) batch_mean->resize(static_cast<size_t>(c));
  if (batch_var) batch_var->resize(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    (*invstd)[static_cast<size_t>(ci)] =
        static_cast<float>(1.0 / std::sqrt(var_d[static_cast<size_t>(ci)] + eps));
    if (batch_mean) (*batch_mean)[static_cast<size_t>(ci)] = static_cast<float>(mean_d[static_cast<size_t>(ci)]);
    if (batch_var) (*batch_var)[static_cast<size_t>(ci)] = static_cast<float>(var_d[static_cast<size_t>(ci)]);
  }
  std::vector<float> v(x.numel());
  const float* pg = gamma.data();
  const float* pb = beta.data();
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci) {
      float xh = (px[r * c + ci] - static_cast<float>(mean_d[static_cast<size_t>(ci)])) *
                 (*invstd)[static_cast<size_t>(ci)];
      (*xhat)[r * c + ci] = xh;
      v[r * c + ci] = pg[ci] * xh + pb[ci];
    }

  return make_op(
      x.shape(), std::move(v), {x, gamma, beta},
      [xhat, invstd, gamma, c, lead](const Tensor& g,
                                     const std::vector<char>& need) {
        // Raw backward; this op does not support double differentiation.
        XDD_CHECK_ARG(!GradMode::enabled(),
                      "batch_norm_train backward cannot be recorded");
        const float* pg = g.data();
        const float* pgam = gamma.data();
        std::vector<double> sum_g(static_cast<size_t>(c), 0.0), sum_gx(static_cast<size_t>(c), 0.0);
        for (size_t r = 0; r < lead; ++r)
          for (int ci = 0; ci < c; ++ci) {
            sum_g[static_cast<size_t>(ci)] += pg[r * c + ci];
            sum_gx[static_cast<size_t>(ci)] += pg[r * c + ci] * (*xhat)[r * c + ci];
          }
        std::vector<Tensor> out(3);
        if (need[0]) {
          std::vector<float> dx(g.numel());
          for (size_t r = 0; r < lead; ++r)
            for (int ci = 0; ci < c; ++ci) {
              const size_t cz = static_cast<size_t>(ci);
              float mg = static_cast<float>(sum_g[cz] / static_cast<double>(lead));
              float mgx = static_cast<float>(sum_gx[cz] / static_cast<double>(lead));
              dx[r * c + ci] = pgam[ci] * (*invstd)[cz] *
                               (pg[r * c + ci] - mg - (*xhat)[r * c + ci] * mgx);
            }
          out[0] = Tensor::from_data(g.shape(), std::move(dx));
        }
        if (need[1]) {
          std::vector<float> dgam(static_cast<size_t>(c));
          for (int ci = 0; ci < c; ++ci) dgam[static_cast<size_t>(ci)] = static_cast<float>(sum_gx[static_cast<size_t>(ci)]);
          out[1] = Tensor::from_data({c}, std::move(dgam));
        }
        if (need[2]) {
          std::vector<float> dbeta(static_cast<size_t>(c));
          for (int ci = 0; ci < c; ++ci) dbeta[static_cast<size_t>(ci)] = static_cast<float>(sum_g[static_cast<size_t>(ci)]);
          out[2] = Tensor::from_data({c}, std::move(dbeta));
        }
        return out;
      });
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, const std::vector<float>& mean,
                       const std::vector<float>& var, float eps) {
  const int c = x.shape().back();
  XDD_CHECK_ARG(mean.size() == static_cast<size_t>(c) &&
                    var.size() == static_cast<size_t>(c),
                "batch_norm_eval: running stats length mismatch");
  auto invstd = std::make_shared<std::vector<float>>(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci)
    (*invstd)[static_cast<size_t>(ci)] = 1.0f / std::sqrt(var[static_cast<size_t>(ci)] + eps);
  auto mu = std::make_shared<std::vector<float>>(mean);

  const size_t lead = x.numel() / static_cast<size_t>(c);
  std::vector<float> v(x.numel());
  const float *px = x.data(), *pg = gamma.data(), *pb = beta.data();
  for (size_t r = 0; r < lead; ++r)
    for (int ci = 0; ci < c; ++ci)
      v[r * c + ci] = pg[ci] * (px[r * c + ci] - (*mu)[static_cast<size_t>(ci)]) *
                          (*invstd)[static_cast<size_t>(ci)] +
                      pb[ci];
  return make_op(
      x.shape(), std::move(v), {x, gamma, beta},
      [x, gamma, mu, invstd, c, lead](const Tensor& g,
                                      const std::vector<char>& need) {
        XDD_CHECK_ARG(!GradMode::enabled(),
                      "batch_norm_eval backward cannot be recorded");
        const float* pg = g.data();
        const float* px = x.data();
        const float* pgam = gamma.data();
        std::vector<Tensor> out(3);
        if (need[0]) {
          std::vector<float> dx(g.numel());
          for (size_t r = 0; r < lead; ++r)
            for (int ci = 0; ci < c; ++ci)
              dx[r * c + ci] = pg[r * c + ci] * pgam[ci] * (*invstd)[static_cast<size_t>(ci)];
          out[0] = Tensor::from_data(g.shape(), std::move(dx));
        }
        if (need[1]) {
          std::vector<double> dgam(static_cast<size_t>(c), 0.0);
          for (size_t r = 0; r < lead; ++r)
            for (int ci = 0; ci < c; ++ci)
              dgam[static_cast<size_t>(ci)] += pg[r * c + ci] *
                          (px[r * c + ci] - (*mu)[static_cast<size_t>(ci)]) *
                          (*invstd)[static_cast<size_t>(ci)];
          std::vector<float> dg(static_cast<size_t>(c));
          for (int ci = 0; ci < c; ++ci) dg[static_cast<size_t>(ci)] = static_cast<float>(dgam[static_cast<size_t>(ci)]);
          out[1] = Tensor::from_data({c}, std::move(dg));
        }
        if (need[2]) out[2] = channel_sum(g);
        return out;
      });
}

}  // namespace xdd::ops
