#include "deepist/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "deepist/gradcheck.hpp"

namespace deepist {
namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1,
                     double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

TEST(Conv2dTest, IdentityKernel) {
  Rng rng(1);
  Tensor x = random_tensor({5, 5, 2}, rng);
  Tensor k({2, 3, 3, 2});  // two filters, each passing through one channel
  k.data[(0 * 3 + 1) * 3 * 2 + 1 * 2 + 0] = 1.0;  // filter 0, center, ch 0
  k.data[((1 * 3 + 1) * 3 + 1) * 2 + 1] = 1.0;    // filter 1, center, ch 1
  Tensor b({2});
  Tensor y = conv2d_same(x, k, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_DOUBLE_EQ(y.at3(i, j, c), x.at3(i, j, c));
}

TEST(Conv2dTest, ZeroKernelGivesBias) {
  Rng rng(2);
  Tensor x = random_tensor({4, 4, 3}, rng);
  Tensor k({1, 3, 3, 3});
  Tensor b({1});
  b[0] = 2.5;
  Tensor y = conv2d_same(x, k, b);
  for (double v : y.data) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Conv2dTest, OnesKernelZeroPadding) {
  // 3x3 ones imaged through a 3x3 ones kernel: center sees 9, corners 4.
  Tensor x({3, 3, 1});
  x.fill(1.0);
  Tensor k({1, 3, 3, 1});
  k.fill(1.0);
  Tensor b({1});
  Tensor y = conv2d_same(x, k, b);
  EXPECT_DOUBLE_EQ(y.at3(1, 1, 0), 9.0);
  EXPECT_DOUBLE_EQ(y.at3(0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.at3(0, 2, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.at3(0, 1, 0), 6.0);
}

TEST(Conv2dTest, RejectsMismatchedShapes) {
  Tensor x({4, 4, 3});
  Tensor k({1, 3, 3, 2});  // wrong channel count
  Tensor b({1});
  EXPECT_THROW(conv2d_same(x, k, b), ValidationError);
}

TEST(Pool2dTest, MaxAndAvgOf2x2Block) {
  Tensor x({2, 2, 1});
  x.at3(0, 0, 0) = 1.0;
  x.at3(0, 1, 0) = 2.0;
  x.at3(1, 0, 0) = 3.0;
  x.at3(1, 1, 0) = 4.0;
  Tensor ymax = pool2d(x, PoolMode::max);
  Tensor yavg = pool2d(x, PoolMode::avg);
  EXPECT_DOUBLE_EQ(ymax.data[0], 4.0);
  EXPECT_DOUBLE_EQ(yavg.data[0], 2.5);
}

TEST(Pool2dTest, FloorExtents) {
  EXPECT_EQ(pool2d(Tensor({100, 100, 1}), PoolMode::max).dim(0), 50u);
  Tensor odd({25, 25, 2});
  Tensor out = pool2d(odd, PoolMode::avg);
  EXPECT_EQ(out.dim(0), 12u);
  EXPECT_EQ(out.dim(1), 12u);
}

TEST(Pool1dTest, Extents) {
  EXPECT_EQ(pool1d_max(Tensor({50, 4})).dim(0), 25u);
  EXPECT_EQ(pool1d_max(Tensor({25, 4})).dim(0), 12u);
}

TEST(Conv1dTest, IdentityKernel) {
  Rng rng(3);
  Tensor x = random_tensor({6, 3}, rng);
  Tensor k({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c)
    k.data[(c * 3 + 1) * 3 + c] = 1.0;  // filter c passes channel c center
  Tensor b({3});
  Tensor y = conv1d_same(x, k, b);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
}

TEST(DenseTest, HandComputed) {
  Tensor x({2});
  x.data = {1.0, 2.0};
  Tensor w({2, 2});
  w.data = {1.0, 1.0, 0.0, 1.0};
  Tensor b({2});
  Tensor y = dense(x, w, b, Activation::linear);
  EXPECT_DOUBLE_EQ(y.data[0], 3.0);
  EXPECT_DOUBLE_EQ(y.data[1], 2.0);
}

TEST(DenseTest, ReluClampsNegative) {
  Tensor x({1});
  x.data = {1.0};
  Tensor w({1, 1});
  w.data = {-2.0};
  Tensor b({1});
  EXPECT_DOUBLE_EQ(dense(x, w, b, Activation::relu).data[0], 0.0);
  EXPECT_DOUBLE_EQ(dense(x, w, b, Activation::linear).data[0], -2.0);
}

TEST(DropoutTest, RateZeroAndInferenceAreIdentity) {
  Rng rng(4);
  Tensor x = random_tensor({32}, rng);
  EXPECT_EQ(dropout(x, 0.0, true, 9).data, x.data);
  EXPECT_EQ(dropout(x, 0.5, false, 9).data, x.data);
}

TEST(DropoutTest, SeededMaskReproducible) {
  Rng rng(5);
  Tensor x = random_tensor({256}, rng);
  Tensor a = dropout(x, 0.5, true, 1234);
  Tensor b = dropout(x, 0.5, true, 1234);
  EXPECT_EQ(a.data, b.data);
  Tensor c = dropout(x, 0.5, true, 99);
  EXPECT_NE(c.data, a.data);
  // Survivors are scaled by 1/(1-rate).
  int zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (a.data[i] == 0.0)
      ++zeros;
    else
      EXPECT_DOUBLE_EQ(a.data[i], x.data[i] * 2.0);
  }
  EXPECT_GT(zeros, 64);
  EXPECT_LT(zeros, 192);
}

TEST(SoftmaxTest, UniformAndSums) {
  std::vector<double> z(8, 0.7);
  auto p = softmax(z);
  double sum = 0.0;
  for (double v : p) {
    EXPECT_NEAR(v, 0.125, 1e-15);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(ShannonTest, UniformAndOneHot) {
  EXPECT_NEAR(shannon_index(std::vector<double>(8, 0.125)), std::log(8.0),
              1e-12);
  EXPECT_DOUBLE_EQ(shannon_index({1.0, 0.0, 0.0}), 0.0);
  // Range: 0 <= H <= ln n.
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(8);
    for (double& v : z) v = rng.uniform(-3, 3);
    const double h = shannon_index(softmax(z));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(8.0) + 1e-12);
  }
}

TEST(AdamTest, ZeroGradientNoChange) {
  Parameter p("p", {4});
  p.value.data = {1.0, -2.0, 3.0, 0.5};
  const auto before = p.value.data;
  std::vector<Parameter*> params = {&p};
  adam_step(params, {}, 1);
  EXPECT_EQ(p.value.data, before);
}

TEST(AdamTest, FirstStepIsSignedLearningRate) {
  Parameter p("p", {2});
  p.value.data = {1.0, 1.0};
  p.grad.data = {0.37, -42.0};
  std::vector<Parameter*> params = {&p};
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(params, cfg, 1);
  EXPECT_NEAR(p.value.data[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p.value.data[1], 1.0 + 0.01, 1e-6);
}

TEST(AdamTest, Deterministic) {
  auto run = [] {
    Parameter p("p", {3});
    p.value.data = {0.1, 0.2, 0.3};
    std::vector<Parameter*> params = {&p};
    for (int t = 1; t <= 10; ++t) {
      for (std::size_t i = 0; i < 3; ++i)
        p.grad.data[i] = 0.1 * static_cast<double>(i + t);
      adam_step(params, {}, t);
      p.zero_grad();
    }
    return p.value.data;
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Gradient checks: analytic gradients against central finite differences.
// The scalar objective is a fixed random projection of the op output.
// ---------------------------------------------------------------------------

Tensor random_like(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r = t;
  for (double& v : r.data) v = rng.uniform(-1, 1);
  return r;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

TEST(GradCheckTest, Conv2dAllInputs) {
  Rng rng(7);
  Tensor x = random_tensor({5, 5, 2}, rng);
  Tensor k = random_tensor({3, 3, 3, 2}, rng);
  Tensor b = random_tensor({3}, rng);
  const Tensor proj = random_like(conv2d_same(x, k, b), 11);
  auto objective = [&] { return dot(conv2d_same(x, k, b), proj); };

  Tensor gx(x.shape), gk(k.shape), gb(b.shape);
  conv2d_same_backward(x, k, proj, &gx, &gk, &gb);
  EXPECT_LT(grad_check(objective, x, gx, 100, 21), 1e-4);
  EXPECT_LT(grad_check(objective, k, gk, 100, 22), 1e-4);
  EXPECT_LT(grad_check(objective, b, gb, 100, 23), 1e-4);
}

TEST(GradCheckTest, Pool2dMaxAndAvg) {
  Rng rng(8);
  for (PoolMode mode : {PoolMode::max, PoolMode::avg}) {
    Tensor x = random_tensor({6, 6, 3}, rng);
    Pool2dCache cache;
    const Tensor proj = random_like(pool2d(x, mode, &cache), 13);
    auto objective = [&] { return dot(pool2d(x, mode), proj); };
    Tensor gx(x.shape);
    pool2d_backward(x, mode, cache, proj, &gx);
    EXPECT_LT(grad_check(objective, x, gx, 100, 31), 1e-4);
  }
}

TEST(GradCheckTest, Conv1dAndPool1d) {
  Rng rng(9);
  Tensor x = random_tensor({8, 4}, rng);
  Tensor k = random_tensor({5, 3, 4}, rng);
  Tensor b = random_tensor({5}, rng);
  const Tensor proj = random_like(conv1d_same(x, k, b), 17);
  auto objective = [&] { return dot(conv1d_same(x, k, b), proj); };
  Tensor gx(x.shape), gk(k.shape), gb(b.shape);
  conv1d_same_backward(x, k, proj, &gx, &gk, &gb);
  EXPECT_LT(grad_check(objective, x, gx, 100, 41), 1e-4);
  EXPECT_LT(grad_check(objective, k, gk, 100, 42), 1e-4);

  Tensor xp = random_tensor({8, 4}, rng);
  Pool1dCache pc;
  const Tensor pproj = random_like(pool1d_max(xp, &pc), 19);
  auto pobjective = [&] { return dot(pool1d_max(xp), pproj); };
  Tensor gxp(xp.shape);
  pool1d_max_backward(pc, pproj, &gxp);
  EXPECT_LT(grad_check(pobjective, xp, gxp, 100, 43), 1e-4);
}

TEST(GradCheckTest, DenseReluAwayFromKinks) {
  Rng rng(10);
  Tensor x = random_tensor({6}, rng);
  Tensor w = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({4}, rng, 0.5, 1.5);  // keep pre-activations off 0
  const Tensor proj = random_like(dense(x, w, b, Activation::relu), 23);
  auto objective = [&] { return dot(dense(x, w, b, Activation::relu), proj); };
  Tensor pre;
  dense(x, w, b, Activation::relu, &pre);
  Tensor gx(x.shape), gw(w.shape), gb(b.shape);
  dense_backward(x, w, pre, Activation::relu, proj, &gx, &gw, &gb);
  EXPECT_LT(grad_check(objective, x, gx, 100, 51), 1e-4);
  EXPECT_LT(grad_check(objective, w, gw, 100, 52), 1e-4);
  EXPECT_LT(grad_check(objective, b, gb, 100, 53), 1e-4);
}

TEST(GradCheckTest, DropoutFixedMask) {
  Rng rng(11);
  Tensor x = random_tensor({64}, rng);
  DropoutMask mask;
  dropout(x, 0.5, true, 77, &mask);
  const Tensor proj = random_like(x, 29);
  auto objective = [&] { return dot(dropout(x, 0.5, true, 77), proj); };
  Tensor gx = proj;
  dropout_backward_inplace(mask, gx);
  EXPECT_LT(grad_check(objective, x, gx, 100, 61), 1e-4);
}

TEST(GradCheckTest, ShannonOfSoftmax) {
  Rng rng(12);
  Tensor z = random_tensor({8}, rng, -2, 2);
  auto objective = [&] {
    return shannon_index(softmax(z.data));
  };
  Tensor g(z.shape);
  auto gv = shannon_softmax_grad(z.data);
  g.data = gv;
  EXPECT_LT(grad_check(objective, z, g, 100, 71), 1e-4);
}

}  // namespace
}  // namespace deepist
