#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "test_helpers.hpp"

using namespace xdd;
using namespace xdd::testutil;
namespace op = xdd::ops;

namespace {

double eval_scalar(const Tensor& t) { return t.item(); }

// d(root)/d(input) via the engine, as plain values.
std::vector<float> grad_of(const Tensor& root, const Tensor& input) {
  auto g = autograd::grad(root, {input}, /*create_graph=*/false);
  return g[0].values();
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor a = Tensor::from_data({4}, {1.f, -2.f, 3.f, 0.5f});
  Tensor b = Tensor::from_data({4}, {2.f, 2.f, -1.f, 0.5f});
  CHECK(op::add(a, b).values() == std::vector<float>{3.f, 0.f, 2.f, 1.f});
  CHECK(op::sub(a, b).values() == std::vector<float>{-1.f, -4.f, 4.f, 0.f});
  CHECK(op::mul(a, b).values() == std::vector<float>{2.f, -4.f, -3.f, 0.25f});
  CHECK(op::abs(a).values() == std::vector<float>{1.f, 2.f, 3.f, 0.5f});
  CHECK(op::mean(a).item() == doctest::Approx(0.625));
  CHECK(op::sum(a).item() == doctest::Approx(2.5));
}

TEST_CASE("gradients accumulate across reuse") {
  Tensor x = Tensor::from_data({3}, {1.f, 2.f, 3.f}, true);
  Tensor y = op::sum(op::add(x, x));
  auto g = grad_of(y, x);
  for (float v : g) CHECK(v == doctest::Approx(2.0f));
}

TEST_CASE("matmul matches loop oracle in all transpose modes") {
  Rng rng(11);
  const int m = 3, k = 4, n = 5;
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      Tensor a = random_tensor(ta ? Shape{k, m} : Shape{m, k}, rng);
      Tensor b = random_tensor(tb ? Shape{n, k} : Shape{k, n}, rng);
      Tensor c = op::matmul(a, b, ta, tb);
      REQUIRE(c.shape() == Shape{m, n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double acc = 0;
          for (int q = 0; q < k; ++q) {
            float av = ta ? a.data()[q * m + i] : a.data()[i * k + q];
            float bv = tb ? b.data()[j * k + q] : b.data()[q * n + j];
            acc += static_cast<double>(av) * bv;
          }
          CHECK(c.data()[i * n + j] == doctest::Approx(acc).epsilon(1e-4));
        }
    }
  }
}

TEST_CASE("matmul gradients vs finite differences") {
  Rng rng(12);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      Tensor a = random_tensor(ta ? Shape{3, 2} : Shape{2, 3}, rng, -1, 1, true);
      Tensor b = random_tensor(tb ? Shape{4, 3} : Shape{3, 4}, rng, -1, 1, true);
      auto loss = [&](const Tensor& aa, const Tensor& bb) {
        return op::mean(op::square(op::matmul(aa, bb, ta, tb)));
      };
      Tensor l = loss(a, b);
      auto ga = grad_of(l, a);
      auto gb = grad_of(l, b);
      auto fa = finite_diff([&](const Tensor& t) { return eval_scalar(loss(t, b)); }, a, 1e-2);
      auto fb = finite_diff([&](const Tensor& t) { return eval_scalar(loss(a, t)); }, b, 1e-2);
      CHECK(max_rel_err(ga, fa) < 2e-3);
      CHECK(max_rel_err(gb, fb) < 2e-3);
    }
  }
}

TEST_CASE("conv2d forward matches naive convolution") {
  Rng rng(13);
  const int b = 2, h = 6, w = 6, cin = 2, cout = 3;
  op::ConvGeom geom;  // 4x4, stride 2, pad 1
  Tensor x = random_tensor({b, h, w, cin}, rng);
  Tensor wt = random_tensor({geom.kh * geom.kw * cin, cout}, rng);
  Tensor y = op::conv2d(x, wt, geom, cin);
  REQUIRE(y.shape() == Shape{b, 3, 3, cout});
  for (int bi = 0; bi < b; ++bi)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox)
        for (int co = 0; co < cout; ++co) {
          double acc = 0;
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx)
              for (int ci = 0; ci < cin; ++ci) {
                int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                float xv = x.data()[((bi * h + iy) * w + ix) * cin + ci];
                float wv = wt.data()[((ky * 4 + kx) * cin + ci) * cout + co];
                acc += static_cast<double>(xv) * wv;
              }
          float got = y.data()[((bi * 3 + oy) * 3 + ox) * cout + co];
          CHECK(got == doctest::Approx(acc).epsilon(1e-4));
        }
}

TEST_CASE("conv2d gradients vs finite differences") {
  Rng rng(14);
  op::ConvGeom geom;
  const int cin = 2, cout = 2;
  Tensor x = random_tensor({1, 6, 6, cin}, rng, -1, 1, true);
  Tensor wt = random_tensor({geom.kh * geom.kw * cin, cout}, rng, -1, 1, true);
  auto loss = [&](const Tensor& xx, const Tensor& ww) {
    return op::mean(op::square(op::conv2d(xx, ww, geom, cin)));
  };
  Tensor l = loss(x, wt);
  CHECK(max_rel_err(grad_of(l, x),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss(t, wt)); }, x, 1e-2)) < 3e-3);
  CHECK(max_rel_err(grad_of(l, wt),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss(x, t)); }, wt, 1e-2), 1e-2) < 1e-2);
}

TEST_CASE("convt2d inverts conv geometry and matches finite differences") {
  Rng rng(15);
  op::ConvGeom geom;
  const int cin = 3, cout = 2;
  Tensor x = random_tensor({2, 3, 3, cin}, rng, -1, 1, true);
  Tensor wt = random_tensor({cin, geom.kh * geom.kw * cout}, rng, -1, 1, true);
  Tensor y = op::convt2d(x, wt, geom, cout);
  REQUIRE(y.shape() == Shape{2, 6, 6, cout});

  auto loss = [&](const Tensor& xx, const Tensor& ww) {
    return op::mean(op::square(op::convt2d(xx, ww, geom, cout)));
  };
  Tensor l = loss(x, wt);
  CHECK(max_rel_err(grad_of(l, x),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss(t, wt)); }, x, 1e-2)) < 3e-3);
  CHECK(max_rel_err(grad_of(l, wt),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss(x, t)); }, wt, 1e-2)) < 3e-3);
}

TEST_CASE("conv2d_dx is the adjoint of conv2d") {
  // <conv(x), g> == <x, conv_dx(g)> for random tensors.
  Rng rng(16);
  op::ConvGeom geom;
  const int cin = 2, cout = 3;
  Tensor x = random_tensor({2, 6, 6, cin}, rng);
  Tensor wt = random_tensor({geom.kh * geom.kw * cin, cout}, rng);
  Tensor g = random_tensor({2, 3, 3, cout}, rng);
  Tensor y = op::conv2d(x, wt, geom, cin);
  Tensor dx = op::conv2d_dx(g, wt, geom, 6, 6, cin);
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < y.numel(); ++i) lhs += static_cast<double>(y.data()[i]) * g.data()[i];
  for (size_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x.data()[i]) * dx.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("shape ops: view/concat/slice/tile round trips and grads") {
  Rng rng(17);
  Tensor a = random_tensor({2, 3, 3, 2}, rng, -1, 1, true);
  Tensor b = random_tensor({2, 3, 3, 4}, rng, -1, 1, true);
  Tensor c = op::concat_last(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 3, 6});
  Tensor back_a = op::slice_last(c, 0, 2);
  for (size_t i = 0; i < a.numel(); ++i)
    CHECK(back_a.data()[i] == a.data()[i]);

  Tensor l = op::mean(op::square(c));
  auto ga = grad_of(l, a);
  auto fa = finite_diff(
      [&](const Tensor& t) {
        return eval_scalar(op::mean(op::square(op::concat_last(t, b))));
      },
      a, 1e-2);
  CHECK(max_rel_err(ga, fa) < 2e-3);

  Tensor e = random_tensor({2, 5}, rng, -1, 1, true);
  Tensor tiled = op::tile_to_grid(e, 3, 4);
  REQUIRE(tiled.shape() == Shape{2, 3, 4, 5});
  Tensor l2 = op::mean(op::square(tiled));
  auto ge = grad_of(l2, e);
  auto fe = finite_diff(
      [&](const Tensor& t) {
        return eval_scalar(op::mean(op::square(op::tile_to_grid(t, 3, 4))));
      },
      e, 1e-2);
  CHECK(max_rel_err(ge, fe) < 2e-3);
}

TEST_CASE("reduction and broadcast gradients") {
  Rng rng(18);
  Tensor a = random_tensor({3, 4}, rng, 0.5f, 2.0f, true);
  auto loss = [&](const Tensor& t) {
    Tensor rows = op::row_sum(t);                    // [3]
    Tensor big = op::row_broadcast(rows, 2);         // [3,2]
    Tensor cs = op::channel_sum(op::sqrt(big));      // [2]
    return op::mean(op::mul(cs, cs));
  };
  auto g = grad_of(loss(a), a);
  auto f = finite_diff([&](const Tensor& t) { return eval_scalar(loss(t)); }, a, 1e-3);
  CHECK(max_rel_err(g, f) < 5e-3);

  Tensor x = random_tensor({2, 2, 2, 3}, rng, -1, 1, true);
  Tensor bias = random_tensor({3}, rng, -1, 1, true);
  Tensor l2 = op::mean(op::square(op::bias_add(x, bias)));
  auto gb = grad_of(l2, bias);
  auto fb = finite_diff(
      [&](const Tensor& t) {
        return eval_scalar(op::mean(op::square(op::bias_add(x, t))));
      },
      bias, 1e-2);
  CHECK(max_rel_err(gb, fb) < 2e-3);
}

TEST_CASE("nonlinearity gradients vs finite differences") {
  Rng rng(19);
  Tensor x = random_tensor({8}, rng, -2.0f, 2.0f, true);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> fn;
    double h;
  };
  std::vector<Case> cases = {
      {"tanh", [](const Tensor& t) { return op::tanh(t); }, 1e-3},
      {"sigmoid", [](const Tensor& t) { return op::sigmoid(t); }, 1e-3},
      {"leaky_relu", [](const Tensor& t) { return op::leaky_relu(t, 0.2f); }, 1e-3},
      {"square", [](const Tensor& t) { return op::square(t); }, 1e-2},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    auto loss = [&](const Tensor& t) { return op::mean(op::square(c.fn(t))); };
    auto g = grad_of(loss(x), x);
    auto f = finite_diff([&](const Tensor& t) { return eval_scalar(loss(t)); }, x, c.h);
    CHECK(max_rel_err(g, f) < 1e-2);
  }
  // log on positive inputs
  Tensor p = random_tensor({8}, rng, 0.2f, 1.5f, true);
  auto logloss = [&](const Tensor& t) { return op::mean(op::log(t)); };
  CHECK(max_rel_err(grad_of(logloss(p), p),
                    finite_diff([&](const Tensor& t) { return eval_scalar(logloss(t)); }, p, 1e-3)) < 1e-2);
}

TEST_CASE("batch norm train/eval gradients") {
  Rng rng(20);
  Tensor x = random_tensor({4, 2, 2, 3}, rng, -1, 1, true);
  Tensor gamma = random_tensor({3}, rng, 0.5f, 1.5f, true);
  Tensor beta = random_tensor({3}, rng, -0.5f, 0.5f, true);
  auto loss_train = [&](const Tensor& xx, const Tensor& g2, const Tensor& b2) {
    return op::mean(op::square(op::batch_norm_train(xx, g2, b2, 1e-5f, nullptr, nullptr)));
  };
  Tensor l = loss_train(x, gamma, beta);
  CHECK(max_rel_err(grad_of(l, x),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss_train(t, gamma, beta)); }, x, 1e-2), 1e-2) < 2e-2);
  CHECK(max_rel_err(grad_of(l, gamma),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss_train(x, t, beta)); }, gamma, 1e-2)) < 1e-2);
  CHECK(max_rel_err(grad_of(l, beta),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss_train(x, gamma, t)); }, beta, 1e-2)) < 1e-2);

  std::vector<float> mu = {0.1f, -0.2f, 0.05f}, var = {1.2f, 0.8f, 1.0f};
  auto loss_eval = [&](const Tensor& xx, const Tensor& g2, const Tensor& b2) {
    return op::mean(op::square(op::batch_norm_eval(xx, g2, b2, mu, var, 1e-5f)));
  };
  Tensor le = loss_eval(x, gamma, beta);
  CHECK(max_rel_err(grad_of(le, x),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss_eval(t, gamma, beta)); }, x, 1e-2)) < 1e-2);
  CHECK(max_rel_err(grad_of(le, gamma),
                    finite_diff([&](const Tensor& t) { return eval_scalar(loss_eval(x, t, beta)); }, gamma, 1e-2)) < 1e-2);
}

TEST_CASE("gradient reversal: identity forward, scaled-negated backward") {
  Rng rng(21);
  Tensor t = random_tensor({16}, rng, -2, 2, true);

  Tensor fwd = op::grad_reverse(t, 1.0f);
  for (size_t i = 0; i < t.numel(); ++i) CHECK(fwd.data()[i] == t.data()[i]);

  // loss = sum(grl(t)) with lambda 1 -> gradient is exactly -1 everywhere
  auto g1 = grad_of(op::sum(op::grad_reverse(t, 1.0f)), t);
  for (float v : g1) CHECK(v == -1.0f);

  // loss = sum(grl(t)^2): analytic -2*lambda*t vs central differences
  const float lambda = 0.7f;
  auto loss = [&](const Tensor& tt) {
    return op::sum(op::square(op::grad_reverse(tt, lambda)));
  };
  auto g = grad_of(loss(t), t);
  auto fd = finite_diff([&](const Tensor& tt) { return eval_scalar(loss(tt)); }, t, 1e-2);
  // finite differences see the forward identity, so compare against -lambda*fd
  for (size_t i = 0; i < g.size(); ++i) {
    double want = -lambda * fd[i];
    CHECK(std::fabs(g[i] - want) / std::max(std::fabs(want), 1e-3) < 1e-4);
    CHECK(g[i] == doctest::Approx(-2.0 * lambda * t.data()[i]).epsilon(1e-4));
  }
}

TEST_CASE("requires_grad gating prunes frozen branches") {
  Rng rng(22);
  Tensor x = random_tensor({4}, rng, -1, 1, true);
  Tensor w = random_tensor({4}, rng, -1, 1, false);  // frozen
  Tensor l = op::sum(op::mul(x, w));
  auto gx = grad_of(l, x);
  for (size_t i = 0; i < 4; ++i) CHECK(gx[i] == doctest::Approx(w.data()[i]));
  // grad() against an unreachable tensor returns zeros
  Tensor z = random_tensor({4}, rng, -1, 1, true);
  auto gz = grad_of(l, z);
  for (float v : gz) CHECK(v == 0.0f);
}

TEST_CASE("no-grad mode records nothing") {
  Rng rng(23);
  Tensor x = random_tensor({4}, rng, -1, 1, true);
  NoGradGuard ng;
  Tensor y = op::square(x);
  CHECK(!y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("double backward through a convolutional scorer (gradient penalty path)") {
  // Smooth activation so finite differences of the penalty are valid for
  // every parameter (leaky-relu masks have zero a.e. second derivative,
  // which is checked separately below).
  Rng rng(24);
  op::ConvGeom geom;
  const int b = 2, h = 4, w = 4, cin = 2, cout = 2;
  Tensor conv_w = random_normal({geom.kh * geom.kw * cin, cout}, rng, 0.3f, true);
  Tensor conv_b = random_normal({cout}, rng, 0.1f, true);
  Tensor fc_w = random_normal({1, 2 * 2 * cout}, rng, 0.3f, true);

  auto score = [&](const Tensor& xx, const Tensor& cw, const Tensor& cb,
                   const Tensor& fw) {
    Tensor y = op::square(op::bias_add(op::conv2d(xx, cw, geom, cin), cb));
    Tensor flat = op::view(y, {b, -1});
    return op::matmul(flat, fw, false, true);  // [b,1]
  };

  Tensor x = random_tensor({b, h, w, cin}, rng, -1, 1, true);

  // First: d(sum score)/dx against finite differences.
  {
    Tensor s = op::sum(score(x, conv_w, conv_b, fc_w));
    auto gx = grad_of(s, x);
    auto fd = finite_diff(
        [&](const Tensor& t) {
          return eval_scalar(op::sum(score(t, conv_w, conv_b, fc_w)));
        },
        x, 1e-3);
    CHECK(max_rel_err(gx, fd) < 1e-2);
  }

  // Gradient-penalty-style scalar: p = mean((||dx score||_2 - 1)^2).
  auto penalty = [&](const Tensor& cw, const Tensor& cb, const Tensor& fw,
                     bool create_graph) {
    Tensor s = op::sum(score(x, cw, cb, fw));
    Tensor gx = autograd::grad(s, {x}, create_graph)[0];
    Tensor flat = op::view(gx, {b, -1});
    Tensor norms = op::sqrt(op::add_scalar(op::row_sum(op::square(flat)), 1e-12f));
    return op::mean(op::square(op::add_scalar(norms, -1.0f)));
  };

  Tensor p = penalty(conv_w, conv_b, fc_w, /*create_graph=*/true);
  auto gw = grad_of(p, conv_w);
  auto gb2 = grad_of(p, conv_b);
  auto gf = grad_of(p, fc_w);

  auto fw_ = finite_diff(
      [&](const Tensor& t) { return eval_scalar(penalty(t, conv_b, fc_w, false)); },
      conv_w, 3e-3);
  auto fb_ = finite_diff(
      [&](const Tensor& t) { return eval_scalar(penalty(conv_w, t, fc_w, false)); },
      conv_b, 3e-3);
  auto ff_ = finite_diff(
      [&](const Tensor& t) { return eval_scalar(penalty(conv_w, conv_b, t, false)); },
      fc_w, 3e-3);
  CHECK(max_rel_err(gw, fw_, 1e-2) < 3e-2);
  CHECK(max_rel_err(gb2, fb_, 1e-2) < 3e-2);
  CHECK(max_rel_err(gf, ff_, 1e-2) < 3e-2);

  // With a leaky-relu scorer the input gradient depends on the bias only
  // through the activation mask, so the penalty gradient w.r.t. the bias is
  // zero almost everywhere.
  auto leaky_penalty = [&](bool create_graph) {
    Tensor y = op::leaky_relu(op::bias_add(op::conv2d(x, conv_w, geom, cin), conv_b), 0.2f);
    Tensor s = op::sum(op::matmul(op::view(y, {b, -1}), fc_w, false, true));
    Tensor gx = autograd::grad(s, {x}, create_graph)[0];
    Tensor norms = op::sqrt(op::add_scalar(op::row_sum(op::square(op::view(gx, {b, -1}))), 1e-12f));
    return op::mean(op::square(op::add_scalar(norms, -1.0f)));
  };
  auto gb_leaky = grad_of(leaky_penalty(true), conv_b);
  for (float v : gb_leaky) CHECK(v == 0.0f);
}

TEST_CASE("backward accumulates into leaf grad buffers") {
  Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  w.zero_grad();
  Tensor l = op::sum(op::square(w));
  autograd::backward(l);
  CHECK(w.grad()[0] == doctest::Approx(2.0f));
  CHECK(w.grad()[1] == doctest::Approx(4.0f));
  autograd::backward(l);  // second pass accumulates
  CHECK(w.grad()[0] == doctest::Approx(4.0f));

  auto leaves = autograd::collect_leaf_params(l);
  REQUIRE(leaves.size() == 1);
  CHECK(leaves[0] == w.node());
}
