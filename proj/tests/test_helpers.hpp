#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace xdd::testutil {

inline Tensor random_tensor(const Shape& shape, Rng& rng, float lo = -1.0f,
                            float hi = 1.0f, bool requires_grad = false) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform_f();
  return Tensor::from_data(shape, std::move(v), requires_grad);
}

inline Tensor random_normal(const Shape& shape, Rng& rng, float std_dev = 1.0f,
                            bool requires_grad = false) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = std_dev * rng.normal_f();
  return Tensor::from_data(shape, std::move(v), requires_grad);
}

// Central finite differences of a scalar-valued function at `x`.
inline std::vector<double> finite_diff(
    const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  std::vector<double> g(x.numel());
  std::vector<float> base(x.values());
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<float> vp = base, vm = base;
    vp[i] += static_cast<float>(h);
    vm[i] -= static_cast<float>(h);
    double fp = f(Tensor::from_data(x.shape(), vp));
    double fm = f(Tensor::from_data(x.shape(), vm));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Max relative error with an absolute floor to keep tiny entries meaningful.
inline double max_rel_err(const std::vector<float>& got,
                          const std::vector<double>& want,
                          double floor = 1e-3) {
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    double denom = std::max(std::fabs(want[i]), floor);
    worst = std::max(worst, std::fabs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace xdd::testutil
