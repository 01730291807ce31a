#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "itgan/optim.hpp"
#include "itgan/tensor.hpp"
#include "testutil.hpp"

using namespace itgan;
using testutil::fd_max_err;
using testutil::rand_t;

TEST_CASE("factories and element access") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.dim(1) == 3);
  Tensor f = Tensor::full({2}, 1.5, Dtype::f64);
  CHECK(f.at(1) == doctest::Approx(1.5));
  f.set(0, -2.0);
  CHECK(f.at(0) == doctest::Approx(-2.0));
  Tensor s = Tensor::scalar(3.0);
  CHECK(s.numel() == 1);
  CHECK_THROWS_AS(add(z, Tensor::zeros({3, 2})), Error);
}

TEST_CASE("seeded tensors are reproducible, distinct across seeds") {
  Rng a(42), b(42), c(43);
  Tensor ta = Tensor::randn({4, 4}, a);
  Tensor tb = Tensor::randn({4, 4}, b);
  Tensor tc = Tensor::randn({4, 4}, c);
  CHECK(Tensor::bitwise_equal(ta, tb));
  CHECK_FALSE(Tensor::bitwise_equal(ta, tc));
}

TEST_CASE("conv2d hand arithmetic: all-ones 2x2 valid") {
  Tensor x = Tensor::ones({1, 1, 2, 2});
  Tensor w = Tensor::ones({1, 1, 2, 2});
  Tensor y = conv2d(x, w, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.at(0) == doctest::Approx(4.0));
}

TEST_CASE("relu endpoint values") {
  Tensor x = Tensor::from_f32({2}, {-3.0f, 2.5f});
  Tensor y = relu(x);
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(2.5));
}

TEST_CASE("instance norm maps a constant feature map to zero") {
  Tensor x = Tensor::full({1, 2, 4, 4}, 7.25);
  Tensor gamma = Tensor::ones({2});
  Tensor beta = Tensor::zeros({2});
  Tensor y = instance_norm(x, gamma, beta);
  for (int64_t i = 0; i < y.numel(); i++) CHECK(std::fabs(y.at(i)) < 1e-4);
}

TEST_CASE("backward: sum of squares and mean") {
  Tensor x = Tensor::from_f64({2}, {1.0, 2.0}).set_requires_grad(true);
  backward(sum_all(mul(x, x)));
  CHECK(x.grad().at(0) == doctest::Approx(2.0));
  CHECK(x.grad().at(1) == doctest::Approx(4.0));

  Tensor m = Tensor::from_f64({4}, {1.0, 2.0, 3.0, 4.0}).set_requires_grad(true);
  backward(mean_all(m));
  for (int64_t i = 0; i < 4; i++) CHECK(m.grad().at(i) == doctest::Approx(0.25));

  // repeated backward accumulates until zeroed
  backward(mean_all(m));
  CHECK(m.grad().at(0) == doctest::Approx(0.5));
  m.zero_grad();
  CHECK_FALSE(m.has_grad());
}

TEST_CASE("backward rejects non-scalar and graph-free losses") {
  Tensor x = Tensor::from_f64({2}, {1.0, 2.0}).set_requires_grad(true);
  CHECK_THROWS_AS(backward(mul(x, x)), Error);
  Tensor lone = Tensor::scalar(1.0);
  CHECK_THROWS_AS(backward(lone), Error);
}

TEST_CASE("forward values are identical with and without grad tracking") {
  Rng rng(7);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng, Dtype::f32, 0.1);
  Tensor plain = conv2d(x, w, 1, 1);
  Tensor xt = x.clone().set_requires_grad(true);
  Tensor wt = w.clone().set_requires_grad(true);
  Tensor tracked = conv2d(xt, wt, 1, 1);
  CHECK(Tensor::bitwise_equal(plain, tracked));
}

TEST_CASE("non-finite outputs are rejected") {
  Tensor neg = Tensor::from_f32({1}, {-1.0f});
  CHECK_THROWS_AS(log_(neg), Error);
  CHECK_THROWS_AS(sqrt_(neg), Error);
  Tensor zero = Tensor::zeros({1});
  CHECK_THROWS_AS(reciprocal(zero), Error);
  Tensor huge = Tensor::from_f32({1}, {200.0f});
  CHECK_THROWS_AS(exp_(huge), Error);
}

// ---------------------------------------------------------------------------
// finite-difference property checks (f64, h = 1e-3, threshold 1e-5)
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: elementwise chain") {
  Rng rng(1);
  auto fn = [](const std::vector<Tensor>& in) {
    Tensor t = tanh_(mul(in[0], in[1]));
    Tensor s = sigmoid(sub(in[0], in[1]));
    Tensor p = softplus(add(t, s));
    return sum_all(mul(p, clamp(in[0], -0.8, 0.8)));
  };
  CHECK(fd_max_err(fn, {rand_t({3, 4}, rng), rand_t({3, 4}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: positive-domain ops") {
  Rng rng(2);
  auto fn = [](const std::vector<Tensor>& in) {
    Tensor pos = add_scalar(mul(in[0], in[0]), 0.5);
    return sum_all(add(log_(pos), add(sqrt_(pos), reciprocal(pos))));
  };
  CHECK(fd_max_err(fn, {rand_t({5}, rng)}) < 1e-5);
  auto fexp = [](const std::vector<Tensor>& in) { return sum_all(exp_(in[0])); };
  CHECK(fd_max_err(fexp, {rand_t({5}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: leaky relu away from the kink") {
  auto fn = [](const std::vector<Tensor>& in) { return sum_all(leaky_relu(in[0], 0.2)); };
  Tensor x = Tensor::from_f64({4}, {-1.5, -0.4, 0.3, 2.0});
  CHECK(fd_max_err(fn, {x}) < 1e-5);
}

TEST_CASE("gradcheck: matmul all transpose combinations") {
  Rng rng(3);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      auto fn = [ta, tb](const std::vector<Tensor>& in) {
        Tensor y = matmul(in[0], in[1], ta, tb);
        return sum_all(mul(y, y));
      };
      CHECK(fd_max_err(fn, {rand_t(sa, rng), rand_t(sb, rng)}) < 1e-5);
    }
}

TEST_CASE("gradcheck: conv2d stride and padding, both inputs") {
  Rng rng(4);
  auto fn = [](const std::vector<Tensor>& in) {
    Tensor y = conv2d(in[0], in[1], 2, 1);
    return sum_all(mul(y, y));
  };
  CHECK(fd_max_err(fn, {rand_t({2, 2, 5, 5}, rng), rand_t({3, 2, 3, 3}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: conv_transpose2d") {
  Rng rng(5);
  auto fn = [](const std::vector<Tensor>& in) {
    Tensor y = conv_transpose2d(in[0], in[1], 2, 1);
    return sum_all(mul(y, y));
  };
  CHECK(fd_max_err(fn, {rand_t({1, 3, 4, 4}, rng), rand_t({3, 2, 3, 3}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: pooling and resampling") {
  Rng rng(6);
  auto favg = [](const std::vector<Tensor>& in) { return squared_l2(avgpool2x2(in[0])); };
  CHECK(fd_max_err(favg, {rand_t({2, 3, 4, 4}, rng)}) < 1e-5);
  auto fup = [](const std::vector<Tensor>& in) { return squared_l2(upsample_nearest2x(in[0])); };
  CHECK(fd_max_err(fup, {rand_t({1, 2, 3, 3}, rng)}) < 1e-5);
  auto fflip = [](const std::vector<Tensor>& in) {
    Tensor y = flip_h(in[0]);
    return sum_all(mul(y, upsample_nearest2x(avgpool2x2(y))));
  };
  CHECK(fd_max_err(fflip, {rand_t({1, 1, 4, 4}, rng)}) < 1e-5);
  auto fshift = [](const std::vector<Tensor>& in) { return squared_l2(shift2d(in[0], 1, -2)); };
  CHECK(fd_max_err(fshift, {rand_t({1, 2, 5, 5}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: grid sample w.r.t. image and grid") {
  Rng rng(7);
  Tensor x = rand_t({1, 2, 5, 5}, rng);
  // keep sample points away from integer lattice so bilinear is smooth
  Tensor grid = Tensor::zeros({1, 3, 3, 2}, Dtype::f64);
  Rng gr(8);
  for (int64_t i = 0; i < grid.numel(); i++) grid.set(i, 0.3 + 3.4 * gr.uniform() + 0.13);
  auto fn = [](const std::vector<Tensor>& in) { return squared_l2(grid_sample(in[0], in[1])); };
  CHECK(fd_max_err(fn, {x, grid}) < 1e-5);
}

TEST_CASE("gradcheck: reductions, broadcasts and affine helpers") {
  Rng rng(9);
  auto f1 = [](const std::vector<Tensor>& in) {
    Tensor r = sum_rows(in[0]);                    // (D)
    Tensor c = sum_cols(broadcast_rows(r, 3));     // (3)
    return sum_all(mul(c, c));
  };
  CHECK(fd_max_err(f1, {rand_t({4, 6}, rng)}) < 1e-5);
  auto f2 = [](const std::vector<Tensor>& in) {
    Tensor hw = sum_hw(in[0]);  // (N,C)
    return squared_l2(broadcast_hw(hw, 2, 2));
  };
  CHECK(fd_max_err(f2, {rand_t({2, 3, 4, 4}, rng)}) < 1e-5);
  auto f3 = [](const std::vector<Tensor>& in) {
    Tensor v = sum_nhw(in[0]);  // (C)
    return squared_l2(broadcast_chan(v, 1, 2, 2));
  };
  CHECK(fd_max_err(f3, {rand_t({2, 3, 2, 2}, rng)}) < 1e-5);
  auto f4 = [](const std::vector<Tensor>& in) {
    return squared_l2(add_chan(mul_chan(in[0], in[1]), in[2]));
  };
  CHECK(fd_max_err(f4, {rand_t({2, 3, 2, 2}, rng), rand_t({3}, rng), rand_t({3}, rng)}) < 1e-5);
  auto f5 = [](const std::vector<Tensor>& in) { return squared_l2(add_rowvec(in[0], in[1])); };
  CHECK(fd_max_err(f5, {rand_t({3, 4}, rng), rand_t({4}, rng)}) < 1e-5);
  auto f6 = [](const std::vector<Tensor>& in) { return squared_l2(fill_like(sum_all(in[0]), {2, 2})); };
  CHECK(fd_max_err(f6, {rand_t({3}, rng)}) < 1e-5);
}

TEST_CASE("gradcheck: structure ops") {
  Rng rng(10);
  auto f1 = [](const std::vector<Tensor>& in) {
    Tensor cc = concat_cols(in[0], in[1]);
    return squared_l2(slice_cols(cc, 1, 4));
  };
  CHECK(fd_max_err(f1, {rand_t({3, 2}, rng), rand_t({3, 4}, rng)}) < 1e-5);
  auto f2 = [](const std::vector<Tensor>& in) {
    Tensor cc = concat_chan(in[0], in[1]);
    return squared_l2(slice_chan(cc, 1, 2));
  };
  CHECK(fd_max_err(f2, {rand_t({2, 2, 3, 3}, rng), rand_t({2, 1, 3, 3}, rng)}) < 1e-5);
  auto f3 = [](const std::vector<Tensor>& in) {
    Tensor rows = embed_rows(in[0], {2, 0, 2, 1});
    return squared_l2(rows);
  };
  CHECK(fd_max_err(f3, {rand_t({3, 5}, rng)}) < 1e-5);
  auto f4 = [](const std::vector<Tensor>& in) {
    return squared_l2(reshape(in[0], {6}));
  };
  CHECK(fd_max_err(f4, {rand_t({2, 3}, rng)}) < 1e-5);
  auto f5 = [](const std::vector<Tensor>& in) {
    return sum_all(gather_labels(in[0], {1, 0}));
  };
  CHECK(fd_max_err(f5, {rand_t({2, 3}, rng)}) < 1e-5);
}

TEST_CASE("softmax cross entropy: hand value and gradcheck") {
  Tensor logits = Tensor::from_f64({1, 3}, {1.0, 2.0, 3.0});
  double ce = softmax_cross_entropy(logits, {2}).at(0);
  // log(e^1 + e^2 + e^3) - 3 computed by hand
  CHECK(ce == doctest::Approx(0.40760596444438).epsilon(1e-9));

  Rng rng(11);
  auto fn = [](const std::vector<Tensor>& in) {
    return softmax_cross_entropy(in[0], {2, 0, 1});
  };
  CHECK(fd_max_err(fn, {rand_t({3, 4}, rng, -2.0, 2.0)}) < 1e-5);
}

TEST_CASE("gradcheck: normalization layers") {
  Rng rng(12);
  auto fin = [](const std::vector<Tensor>& in) {
    return squared_l2(instance_norm(in[0], in[1], in[2]));
  };
  CHECK(fd_max_err(fin, {rand_t({2, 2, 3, 3}, rng), rand_t({2}, rng, 0.5, 1.5),
                         rand_t({2}, rng)}) < 1e-5);
  auto fbn = [](const std::vector<Tensor>& in) {
    return squared_l2(batch_norm_lite(in[0], in[1], in[2]));
  };
  CHECK(fd_max_err(fbn, {rand_t({3, 2, 2, 2}, rng), rand_t({2}, rng, 0.5, 1.5),
                         rand_t({2}, rng)}) < 1e-5);
  Rng rng2(13);
  Tensor mu = rand_t({2}, rng2);
  Tensor var = rand_t({2}, rng2, 0.5, 1.5);
  auto ffr = [mu, var](const std::vector<Tensor>& in) {
    return squared_l2(batch_norm_frozen(in[0], in[1], in[2], mu, var));
  };
  CHECK(fd_max_err(ffr, {rand_t({2, 2, 2, 2}, rng2), rand_t({2}, rng2, 0.5, 1.5),
                         rand_t({2}, rng2)}) < 1e-5);
}

TEST_CASE("f32 suite: gradients track the verified f64 path within 1e-3") {
  Rng rng(14);
  Tensor x = Tensor::rand_uniform({2, 2, 4, 4}, rng, -1.0, 1.0, Dtype::f32);
  Tensor w = Tensor::rand_uniform({2, 2, 3, 3}, rng, -0.5, 0.5, Dtype::f32);
  auto fn = [](Tensor xx, Tensor ww) {
    xx.set_requires_grad(true);
    ww.set_requires_grad(true);
    Tensor loss = squared_l2(tanh_(conv2d(xx, ww, 1, 1)));
    return itgan::grad(loss, {xx, ww});
  };
  auto g32 = fn(x, w);
  auto g64 = fn(x.to(Dtype::f64), w.to(Dtype::f64));
  CHECK(testutil::grad_gap(g32[0], g64[0]) < 1e-3);
  CHECK(testutil::grad_gap(g32[1], g64[1]) < 1e-3);
}

// ---------------------------------------------------------------------------
// double backward
// ---------------------------------------------------------------------------

TEST_CASE("double backward: cubic analytic oracle") {
  // f = sum x^3 ; |grad f|^2 = sum 9 x^4 ; its gradient is 36 x^3
  Tensor x = Tensor::from_f64({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor f = sum_all(mul(x, mul(x, x)));
  Tensor g = itgan::grad(f, {x}, /*create_graph=*/true)[0];
  Tensor h = sum_all(mul(g, g));
  Tensor gg = itgan::grad(h, {x})[0];
  CHECK(gg.at(0) == doctest::Approx(36.0));
  CHECK(gg.at(1) == doctest::Approx(288.0));
}

TEST_CASE("double backward: gradient-norm FD check through conv+nonlinearity") {
  Rng rng(15);
  Tensor w = rand_t({2, 1, 3, 3}, rng);
  auto fn = [w](const std::vector<Tensor>& in) {
    Tensor inner = sum_all(tanh_(conv2d(in[0], w, 1, 1)));
    Tensor g = itgan::grad(inner, {in[0]}, /*create_graph=*/true)[0];
    return sum_all(mul(g, g));
  };
  CHECK(fd_max_err(fn, {rand_t({1, 1, 4, 4}, rng)}, 1e-4, /*fn_builds_graph=*/true) < 1e-5);
}

TEST_CASE("double backward: cross entropy through a linear head") {
  Rng rng(16);
  Tensor w = rand_t({4, 3}, rng);
  auto fn = [w](const std::vector<Tensor>& in) {
    Tensor logits = matmul(in[0], w);
    Tensor ce = softmax_cross_entropy(logits, {1, 2});
    Tensor g = itgan::grad(ce, {in[0]}, /*create_graph=*/true)[0];
    return sum_all(mul(g, g));
  };
  CHECK(fd_max_err(fn, {rand_t({2, 4}, rng)}, 1e-3, /*fn_builds_graph=*/true) < 1e-5);
}

// ---------------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------------

TEST_CASE("adam first-step arithmetic") {
  Tensor p = Tensor::zeros({1}, Dtype::f64);
  Adam opt({p}, AdamConfig{.lr = 0.001});
  opt.step({Tensor::ones({1}, Dtype::f64)});
  double expect = -0.001 * 1.0 / (1.0 + 1e-8);
  CHECK(std::fabs(p.at(0) - expect) < 1e-9);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from_f64({2}, {1.0, -2.0});
  Adam opt({p});
  for (int i = 0; i < 3; i++) opt.step({Tensor::zeros({2}, Dtype::f64)});
  CHECK(p.at(0) == doctest::Approx(1.0));
  CHECK(p.at(1) == doctest::Approx(-2.0));
}

TEST_CASE("adam: identical state sequences are bit-identical") {
  Rng rng(17);
  Tensor base = Tensor::randn({8}, rng);
  Tensor p1 = base.clone();
  Tensor p2 = base.clone();
  Adam o1({p1}), o2({p2});
  Rng gr(18);
  for (int i = 0; i < 5; i++) {
    Tensor g = Tensor::randn({8}, gr);
    o1.step({g});
    o2.step({g});
  }
  CHECK(Tensor::bitwise_equal(p1, p2));
}

TEST_CASE("sgd arithmetic oracles") {
  Tensor p = Tensor::from_f64({1}, {1.0});
  Sgd plain({p}, SgdConfig{.lr = 0.01, .momentum = 0.0});
  plain.step({Tensor::from_f64({1}, {0.5})});
  CHECK(p.at(0) == doctest::Approx(0.995));

  Tensor q = Tensor::from_f64({1}, {1.0});
  Sgd frozen({q}, SgdConfig{.lr = 0.0, .momentum = 0.9});
  frozen.step({Tensor::ones({1}, Dtype::f64)});
  CHECK(q.at(0) == doctest::Approx(1.0));

  // two momentum steps with g=1: buf 1 then 1.9, updates 0.1 + 0.19
  Tensor r = Tensor::from_f64({1}, {1.0});
  Sgd mom({r}, SgdConfig{.lr = 0.1, .momentum = 0.9});
  mom.step({Tensor::ones({1}, Dtype::f64)});
  mom.step({Tensor::ones({1}, Dtype::f64)});
  CHECK(r.at(0) == doctest::Approx(0.71));
}

TEST_CASE("optimizers reject shape mismatches and non-finite grads") {
  Tensor p = Tensor::zeros({2});
  Adam opt({p});
  CHECK_THROWS_AS(opt.step({Tensor::zeros({3})}), Error);
  Tensor bad = Tensor::from_f32({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(opt.step({bad}), Error);
}

TEST_CASE("rng fork produces independent reproducible streams") {
  Rng root(100);
  Rng a = root.fork(1), b = root.fork(2), a2 = Rng(100).fork(1);
  Tensor ta = Tensor::randn({6}, a);
  Tensor tb = Tensor::randn({6}, b);
  Tensor ta2 = Tensor::randn({6}, a2);
  CHECK(Tensor::bitwise_equal(ta, ta2));
  CHECK_FALSE(Tensor::bitwise_equal(ta, tb));
}
