#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dualmamba/cost_trace.hpp"
#include "dualmamba/ops.hpp"
#include "test_support.hpp"

using namespace dualmamba;
using dmtest::Args;
using dmtest::grad_error;
using dmtest::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Direct NHWC grouped convolution with zero padding.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                               std::size_t groups) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cig = w.dim(2), Cout = w.dim(3);
  const std::size_t cog = Cout / groups;
  std::vector<double> y(B * H * W * Cout, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t o = 0; o < Cout; ++o) {
          const std::size_t g = o / cog;
          double acc = b.defined() ? b[o] : 0.0;
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj) {
              const long r = static_cast<long>(i + di) - static_cast<long>(kh / 2);
              const long c = static_cast<long>(j + dj) - static_cast<long>(kw / 2);
              if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < cig; ++ci) {
                const std::size_t cin = g * cig + ci;
                acc += x[((n * H + r) * W + c) * Cin + cin] * w[((di * kw + dj) * cig + ci) * Cout + o];
              }
            }
          y[((n * H + i) * W + j) * Cout + o] = acc;
        }
  return y;
}

}  // namespace

TEST(Activations, KnownValues) {
  const Tensor<double> x(Shape{3}, {0.0, 1.0, -2.0});
  const auto s = silu(x);
  EXPECT_DOUBLE_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(s[2], -2.0 / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(softplus(x)[0], std::numbers::ln2, 1e-15);
  EXPECT_DOUBLE_EQ(sigmoid(x)[0], 0.5);
  EXPECT_DOUBLE_EQ(relu(x)[2], 0.0);
}

TEST(Softplus, LargeInputsStayFinite) {
  const Tensor<double> x(Shape{2}, {800.0, -800.0});
  const auto y = softplus(x);
  EXPECT_DOUBLE_EQ(y[0], 800.0);
  EXPECT_GE(y[1], 0.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, HandEvaluation) {
  const Tensor<double> x(Shape{1, 2}, {0.0, std::log(3.0)});
  const auto y = softmax(x, 1);
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(3);
  const auto x = random_tensor({4, 5}, rng, -30, 30);
  const auto y = softmax(x, 1);
  const auto y2 = softmax(add_scalar(x, 1000.0), 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      s += y[r * 5 + k];
      EXPECT_NEAR(y[r * 5 + k], y2[r * 5 + k], 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, NormalizesLastAxis) {
  const Tensor<double> x(Shape{1, 3}, {1.0, 2.0, 3.0});
  const auto y = layer_norm(x, Tensor<double>(), Tensor<double>(), 1e-5);
  const double inv = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[0], -inv, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], inv, 1e-12);

  const Tensor<double> gamma(Shape{3}, {2.0, 2.0, 2.0}), beta(Shape{3}, {1.0, 1.0, 1.0});
  const auto z = layer_norm(x, gamma, beta, 1e-5);
  EXPECT_NEAR(z[2], 2.0 * inv + 1.0, 1e-12);
}

TEST(BatchNorm, TrainModeStatisticsAndRunningUpdate) {
  Rng rng(5);
  const auto x = random_tensor({4, 2, 2, 3}, rng, -2, 5);
  Tensor<double> gamma(Shape{3}, 1.0), beta(Shape{3}, 0.0), rm(Shape{3}, 0.0), rv(Shape{3}, 1.0);
  const auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  const std::size_t n = 16;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, ym = 0, yv = 0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * 3 + c];
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i * 3 + c] - mean) * (x[i * 3 + c] - mean);
    for (std::size_t i = 0; i < n; ++i) ym += y[i * 3 + c];
    ym /= n;
    for (std::size_t i = 0; i < n; ++i) yv += (y[i * 3 + c] - ym) * (y[i * 3 + c] - ym);
    EXPECT_NEAR(ym, 0.0, 1e-12);
    EXPECT_NEAR(yv / n, (var / n) / (var / n + 1e-5), 1e-9);
    EXPECT_NEAR(rm[c], 0.1 * mean, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * var / (n - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalModeUsesAndKeepsRunningStats) {
  const Tensor<double> x(Shape{2, 1, 1, 1}, {3.0, 5.0});
  Tensor<double> gamma(Shape{1}, 2.0), beta(Shape{1}, 1.0), rm(Shape{1}, 1.0), rv(Shape{1}, 4.0);
  const auto y = batch_norm(x, gamma, beta, rm, rv, false, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 2.0 * (3.0 - 1.0) / 2.0 + 1.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0 * (5.0 - 1.0) / 2.0 + 1.0);
  EXPECT_DOUBLE_EQ(rm[0], 1.0);
  EXPECT_DOUBLE_EQ(rv[0], 4.0);
}

TEST(Conv2d, MatchesDirectLoopsWithGroups) {
  Rng rng(11);
  const auto x = random_tensor({2, 5, 4, 6}, rng);
  const auto w = random_tensor({3, 3, 3, 4}, rng);
  const auto b = random_tensor({4}, rng);
  const auto y = conv2d(x, w, b, 2);
  const auto ref = naive_conv(x, w, b, 2);
  ASSERT_EQ(y.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(DepthwiseConv2d, MatchesGroupedConvWithOneChannelPerGroup) {
  Rng rng(12);
  const auto x = random_tensor({1, 4, 5, 3}, rng);
  const auto w = random_tensor({3, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  const auto y = depthwise_conv2d(x, w, b);
  const auto ref = naive_conv(x, reshape(w, {3, 3, 1, 3}), b, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(BandConv3, RampWithOnesKernel) {
  const std::size_t D = 6;
  Tensor<double> x(Shape{1, 1, 1, D});
  for (std::size_t d = 0; d < D; ++d) x[d] = static_cast<double>(d);
  const auto y = band_conv3(x, Tensor<double>(Shape{3}, 1.0));
  for (std::size_t d = 1; d + 1 < D; ++d) EXPECT_DOUBLE_EQ(y[d], 3.0 * d);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[D - 1], static_cast<double>((D - 2) + (D - 1)));
}

TEST(Broadcast, RowVectorAddsToEveryRow) {
  const Tensor<double> a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor<double> b(Shape{1, 3}, {10, 20, 30});
  const auto y = add(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(y[4], 25.0);
  EXPECT_THROW(add(a, Tensor<double>(Shape{3})), ShapeError);
  EXPECT_THROW(add(a, Tensor<double>(Shape{2, 2})), ShapeError);
}

TEST(Matmul, SmallProduct) {
  const Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor<double> b(Shape{2, 1}, {5, 6});
  const auto y = matmul(a, b);
  EXPECT_DOUBLE_EQ(y[0], 17.0);
  EXPECT_DOUBLE_EQ(y[1], 39.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const Tensor<double> logits(Shape{2, 4}, 0.3);
  const std::vector<int> labels{0, 3};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(labels)).item(), std::log(4.0), 1e-14);
  const std::vector<int> bad{0, 4};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(bad)), ShapeError);
}

TEST(Shapes, ErrorsNameTheOperation) {
  const Tensor<double> x(Shape{1, 3, 3, 4});
  try {
    conv2d(x, Tensor<double>(Shape{3, 3, 3, 4}), Tensor<double>(), 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
  }
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(narrow(x, 3, 2, 3), ShapeError);
  EXPECT_THROW(reshape(x, {5}), ShapeError);
}

TEST(Numerics, OverflowIsReported) {
  const Tensor<double> x(Shape{1}, {1000.0});
  EXPECT_THROW(exp(x), NumericError);
}

TEST(Tape, AccumulatesGradientsOverReuse) {
  Tensor<double> x(Shape{2}, {1.0, -3.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    GradScope<double> scope(tape);
    loss = sum(add(mul(x, x), x));
  }
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -5.0);
}

TEST(Tape, MisuseRaisesAutodiffError) {
  Tensor<double> x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(sum(x)), AutodiffError);  // no tape active

  Tape<double> tape;
  Tensor<double> y, loss;
  {
    GradScope<double> scope(tape);
    y = mul(x, x);
    loss = sum(y);
  }
  EXPECT_THROW(backward(y), AutodiffError);  // not a scalar
  backward(loss);
  EXPECT_THROW(backward(loss), AutodiffError);  // tape consumed
}

TEST(Tape, NothingRecordedWithoutGradInputs) {
  Tape<double> tape;
  GradScope<double> scope(tape);
  const Tensor<double> x(Shape{3}, 1.0);
  const auto y = sum(exp(x));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(CostTrace, LinearCountsMacsTwiceAsFlops) {
  const Tensor<double> x(Shape{1, 7, 7, 128});
  const Tensor<double> w(Shape{128, 64});
  const Tensor<double> b(Shape{64});
  trace::CostRecorder rec;
  {
    trace::Scope s("pw");
    pointwise_conv(x, w, b);
  }
  ASSERT_EQ(rec.entries().size(), 1u);
  EXPECT_EQ(rec.entries()[0].first, "pw");
  EXPECT_EQ(rec.entries()[0].second.flops, 802816u);
  EXPECT_EQ(rec.entries()[0].second.macs, 401408u);
}

// Finite-difference checks, f64.

TEST(Gradcheck, ElementwiseBinaryWithBroadcast) {
  Rng rng(21);
  const Args p{random_tensor({2, 3, 4}, rng), random_tensor({2, 1, 4}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return add(a[0], a[1]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return sub(a[0], a[1]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return mul(a[0], a[1]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return mul(a[1], a[0]); }, p), kGradTol);
}

TEST(Gradcheck, Unary) {
  Rng rng(22);
  const Args p{random_tensor({3, 5}, rng, -2, 2)};
  Args positive{random_tensor({3, 5}, rng, 0.2, 2)};
  EXPECT_LE(grad_error([](const Args& a) { return scale(a[0], 1.7); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return add_scalar(a[0], -0.3); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return exp(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return silu(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return sigmoid(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return softplus(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return relu(a[0]); }, positive), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return relu(scale(a[0], -1.0)); }, positive), kGradTol);
}

TEST(Gradcheck, Reductions) {
  Rng rng(23);
  const Args p{random_tensor({2, 3, 3, 4}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return sum(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return mean(a[0]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return mean_axes(a[0], {1, 2}); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return mean_axes(a[0], {0, 3}); }, p), kGradTol);
}

TEST(Gradcheck, LinearAlgebra) {
  Rng rng(24);
  const Args p{random_tensor({2, 3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return linear(a[0], a[1], a[2]); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return linear(a[0], a[1], Tensor<double>()); }, p), kGradTol);
  const Args q{random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return matmul(a[0], a[1]); }, q), kGradTol);
}

TEST(Gradcheck, Convolutions) {
  Rng rng(25);
  const Args g{random_tensor({2, 4, 3, 4}, rng), random_tensor({3, 3, 2, 6}, rng), random_tensor({6}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return conv2d(a[0], a[1], a[2], 2); }, g), kGradTol);
  const Args d{random_tensor({2, 3, 4, 3}, rng), random_tensor({3, 3, 3}, rng), random_tensor({3}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return depthwise_conv2d(a[0], a[1], a[2]); }, d), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return depthwise_conv2d(a[0], a[1], Tensor<double>()); }, d), kGradTol);
  const Args b{random_tensor({2, 2, 2, 5}, rng), random_tensor({3}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return band_conv3(a[0], a[1]); }, b), kGradTol);
}

TEST(Gradcheck, Normalizations) {
  Rng rng(26);
  const Args ln{random_tensor({2, 3, 5}, rng, -2, 2), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return layer_norm(a[0], a[1], a[2]); }, ln), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return layer_norm(a[0], Tensor<double>(), Tensor<double>()); }, ln),
            kGradTol);

  const Args bn{random_tensor({3, 2, 2, 4}, rng, -2, 2), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)};
  Tensor<double> rm(Shape{4}), rv(Shape{4}, 1.0);
  EXPECT_LE(grad_error([&](const Args& a) { return batch_norm(a[0], a[1], a[2], rm, rv, true); }, bn), kGradTol);
  Tensor<double> em(Shape{4}, 0.2), ev(Shape{4}, 1.5);
  EXPECT_LE(grad_error([&](const Args& a) { return batch_norm(a[0], a[1], a[2], em, ev, false); }, bn), kGradTol);
}

TEST(Gradcheck, SoftmaxAndCrossEntropy) {
  Rng rng(27);
  const Args p{random_tensor({2, 1, 1, 5}, rng, -2, 2)};
  EXPECT_LE(grad_error([](const Args& a) { return softmax(a[0], 3); }, p), kGradTol);
  const Args q{random_tensor({3, 4}, rng, -2, 2)};
  const std::vector<int> labels{2, 0, 3};
  EXPECT_LE(dualmamba::gradcheck([&](const Args& a) { return cross_entropy(a[0], std::span<const int>(labels)); }, q)
                .max_relative_error,
            kGradTol);
}

TEST(Gradcheck, Restructuring) {
  Rng rng(28);
  const Args p{random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 2}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return concat<double>({a[0], a[1]}, 2); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return flip(a[0], 1); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return narrow(a[0], 2, 1, 2); }, p), kGradTol);
  EXPECT_LE(grad_error([](const Args& a) { return reshape(a[0], {6, 4}); }, p), kGradTol);
}

TEST(Gradcheck, FlagsAGradientTheTapeNeverSaw) {
  Rng rng(29);
  const Args p{random_tensor({4}, rng)};
  // x^2 (x + 1) with the second factor detached: the tape misses the x^2 term.
  const auto r = dualmamba::gradcheck(
      [](const Args& a) {
        const Tensor<double> detached(a[0].shape(), std::vector<double>(a[0].data().begin(), a[0].data().end()));
        return sum(mul(mul(a[0], a[0]), add_scalar(detached, 1.0)));
      },
      p);
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(Gradcheck, StencilIsExactOnQuartics) {
  // Five-point differences have no truncation error up to degree four, so
  // even a coarse step must agree with 4x^3 to roundoff.
  Rng rng(30);
  const Args p{random_tensor({5}, rng, 0.5, 1.5)};
  const auto r = dualmamba::gradcheck([](const Args& a) { return sum(mul(mul(a[0], a[0]), mul(a[0], a[0]))); }, p, 1e-2);
  EXPECT_LT(r.max_relative_error, 1e-10);
}

TEST(Gradcheck, ZeroGradientFloorScalesWithTheLoss) {
  // d/db of (x + b - mean(x + b)) is exactly zero; a large constant offset
  // inflates finite-difference roundoff but must not fail the check.
  Rng rng(31);
  const Args p{random_tensor({6}, rng), random_tensor({1}, rng)};
  const auto r = dualmamba::gradcheck(
      [](const Args& a) {
        const auto shifted = add(a[0], a[1]);
        const auto centered = sub(shifted, reshape(mean(shifted), {1}));
        return add_scalar(sum(mul(centered, centered)), 1e4);
      },
      p);
  EXPECT_LE(r.max_relative_error, kGradTol);
}
