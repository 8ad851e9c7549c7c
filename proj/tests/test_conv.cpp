#include <gtest/gtest.h>

#include <random>

#include "docunet/conv.hpp"
#include "docunet/gradcheck.hpp"
#include "test_util.hpp"

using namespace docunet;
using docunet::testing::random_tensor;

namespace {

// Direct nested-loop cross-correlation, independent of the im2col path.
std::vector<double> direct_conv(const Tensor& x, const Tensor& k, std::size_t stride,
                                std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), s = k.dim(2);
  const std::size_t oh = (h + 2 * pad - s) / stride + 1, ow = (w + 2 * pad - s) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t a = 0; a < s; ++a)
            for (std::size_t b = 0; b < s; ++b) {
              long ii = long(i * stride + a) - long(pad), jj = long(j * stride + b) - long(pad);
              if (ii < 0 || jj < 0 || ii >= long(h) || jj >= long(w)) continue;
              acc += x[(ci * h + ii) * w + jj] * k[((co * cin + ci) * s + a) * s + b];
            }
        out[(co * oh + i) * ow + j] = acc;
      }
  return out;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Conv2d, AllOnesCountsOverlap) {
  auto y = conv2d(Tensor::ones({1, 4, 4}), Tensor::ones({1, 1, 3, 3}), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);
  EXPECT_DOUBLE_EQ(y[3], 4.0);
  EXPECT_DOUBLE_EQ(y[15], 4.0);
  EXPECT_DOUBLE_EQ(y[1 * 4 + 1], 9.0);
  EXPECT_DOUBLE_EQ(y[2 * 4 + 2], 9.0);
  EXPECT_DOUBLE_EQ(y[1], 6.0);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 5, 3}, rng);
  EXPECT_EQ(conv2d(x, Tensor::ones({1, 1, 1, 1}), 1, 0).values(), x.values());
}

TEST(Conv2d, KernelLargerThanPaddedInputIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor::ones({1, 2, 2}), Tensor::ones({1, 1, 5, 5}), 1, 1), DimensionError);
}

TEST(Conv2d, MatchesDirectLoopsOnRandomConfigs) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> ext(1, 4), sz(3, 9), st(1, 3), pd(0, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = ext(rng), cout = ext(rng), s = std::min<std::size_t>(ext(rng), 3);
    const std::size_t h = sz(rng), w = sz(rng), stride = st(rng), pad = pd(rng);
    auto x = random_tensor({cin, h, w}, rng);
    auto k = random_tensor({cout, cin, s, s}, rng);
    auto y = conv2d(x, k, stride, pad);
    EXPECT_EQ(y.dim(1), (h + 2 * pad - s) / stride + 1);
    EXPECT_EQ(y.dim(2), (w + 2 * pad - s) / stride + 1);
    auto ref = direct_conv(x, k, stride, pad);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, KernelGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 8, 8}, rng);
  auto k = random_tensor({2, 3, 3, 3}, rng);
  auto w = random_tensor({2, 8, 8}, rng);
  auto r = check_gradients([&] { return reduce_sum(mul(conv2d(x, k, 1, 1), w)); }, {k, x});
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TransposedConv2d, CopiesIntoDisjointBlocks) {
  auto x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  auto y = transposed_conv2d(x, Tensor::ones({1, 1, 2, 2}), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4}));
  std::vector<double> expect = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.values(), expect);
}

TEST(TransposedConv2d, IsAdjointOfConv2d) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 4), sz(1, 5), st(1, 3), ks(1, 3);
    const std::size_t cin = ext(rng), cout = ext(rng), s = ks(rng), stride = st(rng);
    const std::size_t oh = sz(rng), ow = sz(rng);
    const std::size_t h = (oh - 1) * stride + s, w = (ow - 1) * stride + s;
    auto x = random_tensor({cin, h, w}, rng);
    auto k = random_tensor({cout, cin, s, s}, rng);
    auto y = random_tensor({cout, oh, ow}, rng);
    const double lhs = inner(conv2d(x, k, stride, 0), y);
    const double rhs = inner(x, transposed_conv2d(y, k, stride));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(TransposedConv2d, StrideTwoDoublesExtent) {
  auto y = transposed_conv2d(Tensor::ones({3, 5, 7}), Tensor::ones({3, 4, 2, 2}), 2);
  EXPECT_EQ(y.shape(), (Shape{4, 10, 14}));
}

TEST(TransposedConv2d, ZeroStrideIsConfigError) {
  EXPECT_THROW(transposed_conv2d(Tensor::ones({1, 2, 2}), Tensor::ones({1, 1, 2, 2}), 0),
               ConfigError);
}

TEST(TransposedConv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({3, 4, 4}, rng);
  auto k = random_tensor({3, 2, 2, 2}, rng);
  auto w = random_tensor({2, 8, 8}, rng);
  auto r = check_gradients([&] { return reduce_sum(mul(transposed_conv2d(x, k, 2), w)); },
                           {x, k});
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

TEST(MaxPool2d, PicksWindowMaximum) {
  auto y = max_pool2d(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
}

TEST(MaxPool2d, ConstantInputRoutesGradientToFirstElement) {
  auto x = Tensor::full({1, 2, 4}, 2.5).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  auto y = max_pool2d(x);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
  tape.backward(reduce_sum(y));
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 1, 0, 0, 0, 0, 0}));
}

TEST(MaxPool2d, OddExtentIsDimensionError) {
  EXPECT_THROW(max_pool2d(Tensor::ones({1, 3, 4})), DimensionError);
}

TEST(MaxPool2d, PooledThenRepeatedDominatesInput) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({4, 8, 8}, rng);
  auto y = max_pool2d(x);
  // Upsample by repetition with a unit transposed kernel per channel.
  std::vector<double> eye(4 * 4 * 4, 0.0);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t t = 0; t < 4; ++t) eye[(c * 4 + c) * 4 + t] = 1.0;
  auto up = transposed_conv2d(y, Tensor::from({4, 4, 2, 2}, eye), 2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_GE(up[i], x[i]);
  // Brute-force window scan.
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double m = -1e300;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x[(c * 8 + 2 * i + a) * 8 + 2 * j + b]);
        EXPECT_EQ(y[(c * 4 + i) * 4 + j], m);
      }
}

TEST(MaxPool2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 4, 6}, rng);
  auto w = random_tensor({2, 2, 3}, rng);
  auto r = check_gradients([&] { return reduce_sum(mul(max_pool2d(x), w)); }, {x});
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}

TEST(ConvShapes, RandomizedConfigurationsFollowFormulas) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> sz(1, 12), ks(1, 5), st(1, 3), pd(0, 2), ch(1, 3);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = ch(rng), h = sz(rng), w = sz(rng), s = ks(rng);
    const std::size_t stride = st(rng), pad = pd(rng);
    if (h + 2 * pad >= s && w + 2 * pad >= s) {
      auto y = conv2d(Tensor::ones({c, h, w}), Tensor::ones({2, c, s, s}), stride, pad);
      EXPECT_EQ(y.shape(), (Shape{2, (h + 2 * pad - s) / stride + 1, (w + 2 * pad - s) / stride + 1}));
      ++checked;
    }
    auto t = transposed_conv2d(Tensor::ones({c, h, w}), Tensor::ones({c, 3, s, s}), stride);
    EXPECT_EQ(t.shape(), (Shape{3, (h - 1) * stride + s, (w - 1) * stride + s}));
    auto p = max_pool2d(Tensor::ones({c, 2 * h, 2 * w}));
    EXPECT_EQ(p.shape(), (Shape{c, h, w}));
  }
  EXPECT_GT(checked, 100);
}

TEST(AddChannelBias, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({3, 2, 2}, rng);
  auto b = random_tensor({3}, rng);
  auto w = random_tensor({3, 2, 2}, rng);
  auto r = check_gradients([&] { return reduce_sum(mul(add_channel_bias(x, b), w)); }, {x, b});
  EXPECT_LE(r.max_rel_error, 1e-6) << r.worst;
}
