#include <gtest/gtest.h>

#include <cmath>

#include "dualmamba/ssm.hpp"
#include "test_support.hpp"

using namespace dualmamba;
using dmtest::Args;
using dmtest::grad_error;
using dmtest::random_tensor;

namespace {

// Plain recurrence written against the continuous parameters directly.
double reference_scan_step(double h, double a, double b, double c, double delta, double x, double& y) {
  const double a_bar = std::exp(delta * a);
  const double b_bar = std::expm1(delta * a) / a * b;
  h = a_bar * h + b_bar * x;
  y = c * h;
  return h;
}

}  // namespace

TEST(Discretize, ZohUnitStep) {
  const auto s = zoh_discretize(-1.0, 1.0, 1.0);
  EXPECT_NEAR(s.a_bar, 0.367879441171, 1e-12);
  EXPECT_NEAR(s.b_bar, 0.632120558829, 1e-12);
}

TEST(Discretize, SmallStepFallbackIsContinuous) {
  for (const double da : {-1e-3, -2e-4, -9.9e-5, -1e-5, -1e-8}) {
    const double a = -2.0, delta = -da / 2.0, b = 0.7;
    const auto s = zoh_discretize(a, delta, b);
    EXPECT_NEAR(s.b_bar, std::expm1(delta * a) / a * b, 1e-15 + 1e-12 * std::abs(s.b_bar)) << da;
    EXPECT_NEAR(s.a_bar, std::exp(delta * a), 1e-15);
  }
}

TEST(Discretize, TensorFormMatchesScalar) {
  Rng rng(1);
  const std::size_t L = 3, D = 2, N = 4;
  const auto A = random_tensor({D, N}, rng, -3, -0.1);
  const auto B = random_tensor({L, N}, rng);
  const auto delta = random_tensor({L, D}, rng, 0.01, 1.0);
  const auto [a_bar, b_bar] = zoh_discretize(A, B, delta);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        const auto s = zoh_discretize(A[d * N + n], delta[t * D + d], B[t * N + n]);
        EXPECT_DOUBLE_EQ(a_bar[(t * D + d) * N + n], s.a_bar);
        EXPECT_DOUBLE_EQ(b_bar[(t * D + d) * N + n], s.b_bar);
      }
}

TEST(SelectiveScan, TwoStepRecurrenceByHand) {
  // a_bar = 0.5 and b_bar = 1 (Euler), x = [1, 1]: h = [1, 1.5].
  const Tensor<double> x(Shape{1, 2, 1}, 1.0);
  const Tensor<double> delta(Shape{1, 2, 1}, 1.0);
  const Tensor<double> A(Shape{1, 1}, -std::log(2.0));
  const Tensor<double> B(Shape{1, 2, 1}, 1.0);
  const Tensor<double> C(Shape{1, 2, 1}, 1.0);
  const auto y = selective_scan(x, delta, A, B, C, Tensor<double>(), {Discretization::euler});
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.5, 1e-15);

  // The same dynamics under ZOH need b = 2 ln 2 for b_bar = 1.
  const Tensor<double> Bz(Shape{1, 2, 1}, 2.0 * std::log(2.0));
  const auto z = selective_scan(x, delta, A, Bz, C, Tensor<double>());
  EXPECT_NEAR(z[0], 1.0, 1e-14);
  EXPECT_NEAR(z[1], 1.5, 1e-14);
}

TEST(SelectiveScan, MatchesReferenceRecurrence) {
  Rng rng(2);
  const std::size_t Bt = 2, L = 6, D = 3, N = 4;
  const auto x = random_tensor({Bt, L, D}, rng);
  const auto delta = random_tensor({Bt, L, D}, rng, 0.05, 1.5);
  const auto A = random_tensor({D, N}, rng, -2, -0.2);
  const auto B = random_tensor({Bt, L, N}, rng);
  const auto C = random_tensor({Bt, L, N}, rng);
  const auto skip = random_tensor({D}, rng);
  const auto y = selective_scan(x, delta, A, B, C, skip);
  for (std::size_t b = 0; b < Bt; ++b)
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> h(N, 0.0);
      for (std::size_t t = 0; t < L; ++t) {
        double out = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          double yn = 0;
          h[n] = reference_scan_step(h[n], A[d * N + n], B[(b * L + t) * N + n], C[(b * L + t) * N + n],
                                     delta[(b * L + t) * D + d], x[(b * L + t) * D + d], yn);
          out += yn;
        }
        out += skip[d] * x[(b * L + t) * D + d];
        EXPECT_NEAR(y[(b * L + t) * D + d], out, 1e-12);
      }
    }
}

TEST(SelectiveScan, TimeInvariantCaseEqualsConvolution) {
  Rng rng(3);
  const std::size_t L = 9, D = 3, N = 5;
  const auto A = random_tensor({D, N}, rng, -1.5, -0.1);
  const auto B0 = random_tensor({1, N}, rng);
  const auto C0 = random_tensor({1, N}, rng);
  const auto d0 = random_tensor({1, D}, rng, 0.1, 1.0);
  Tensor<double> B(Shape{L, N}), C(Shape{L, N}), delta(Shape{L, D});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t n = 0; n < N; ++n) B[t * N + n] = B0[n], C[t * N + n] = C0[n];
    for (std::size_t d = 0; d < D; ++d) delta[t * D + d] = d0[d];
  }
  const auto x = random_tensor({L, D}, rng);
  const auto [a_bar, b_bar] = zoh_discretize(A, B, delta);
  const auto conv = ssm_conv_oracle(a_bar, b_bar, C, x);
  const auto scan = selective_scan(reshape(x, {1, L, D}), reshape(delta, {1, L, D}), A, reshape(B, {1, L, N}),
                                   reshape(C, {1, L, N}), Tensor<double>());
  for (std::size_t i = 0; i < L * D; ++i) EXPECT_NEAR(scan[i], conv[i], 1e-12);

  Tensor<double> varying = C.clone();
  varying[N] += 0.5;
  EXPECT_THROW(ssm_conv_oracle(a_bar, b_bar, varying, x), NumericError);
}

TEST(SelectiveScan, IsCausal) {
  Rng rng(4);
  const std::size_t L = 8, D = 2, N = 3;
  const auto x = random_tensor({1, L, D}, rng);
  const auto delta = random_tensor({1, L, D}, rng, 0.1, 1);
  const auto A = random_tensor({D, N}, rng, -2, -0.2);
  const auto B = random_tensor({1, L, N}, rng);
  const auto C = random_tensor({1, L, N}, rng);
  const auto y = selective_scan(x, delta, A, B, C, Tensor<double>());
  for (std::size_t t = 0; t < L; ++t) {
    auto x2 = x.clone();
    x2[t * D] += 1.0;
    const auto y2 = selective_scan(x2, delta, A, B, C, Tensor<double>());
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t d = 0; d < D; ++d) EXPECT_EQ(y[s * D + d], y2[s * D + d]);
    EXPECT_NE(y[t * D], y2[t * D]);
  }
}

TEST(SelectiveScan, RejectsBadShapesAndPositiveA) {
  const Tensor<double> x(Shape{1, 4, 2}), delta(Shape{1, 4, 2}, 0.1), B(Shape{1, 4, 3}), C(Shape{1, 4, 3});
  EXPECT_THROW(selective_scan(x, delta, Tensor<double>(Shape{3, 3}, -1.0), B, C, Tensor<double>()), ShapeError);
  EXPECT_THROW(selective_scan(x, delta, Tensor<double>(Shape{2, 3}, -1.0), Tensor<double>(Shape{1, 3, 3}), C,
                              Tensor<double>()),
               ShapeError);
  EXPECT_THROW(selective_scan(x, delta, Tensor<double>(Shape{2, 3}, 0.5), B, C, Tensor<double>()), NumericError);
}

TEST(SelectiveScan, GradientsInEveryOperand) {
  Rng rng(5);
  const std::size_t Bt = 2, L = 4, D = 3, N = 2;
  const Args p{random_tensor({Bt, L, D}, rng), random_tensor({Bt, L, D}, rng, 0.1, 1.2),
               random_tensor({D, N}, rng, -2, -0.3), random_tensor({Bt, L, N}, rng),
               random_tensor({Bt, L, N}, rng), random_tensor({D}, rng)};
  EXPECT_LE(grad_error([](const Args& a) { return selective_scan(a[0], a[1], a[2], a[3], a[4], a[5]); }, p), 1e-4);
  EXPECT_LE(grad_error(
                [](const Args& a) {
                  return selective_scan(a[0], a[1], a[2], a[3], a[4], Tensor<double>(), {Discretization::euler});
                },
                p),
            1e-4);
}

TEST(SsmParams, AutoDtRank) {
  EXPECT_EQ(auto_dt_rank(1), 1u);
  EXPECT_EQ(auto_dt_rank(16), 1u);
  EXPECT_EQ(auto_dt_rank(17), 2u);
  EXPECT_EQ(auto_dt_rank(128), 8u);
}

TEST(SsmParams, InitializationRanges) {
  Rng rng(6);
  SelectiveSsm<double> ssm({.d_inner = 32, .d_state = 4}, rng);
  EXPECT_EQ(ssm.dt_rank(), 2u);
  EXPECT_EQ(ssm.x_proj.shape(), (Shape{32, 2 + 8}));
  EXPECT_EQ(ssm.dt_proj.shape(), (Shape{2, 32}));
  EXPECT_FALSE(ssm.skip.defined());
  const auto A = ssm.A();
  for (std::size_t d = 0; d < 32; ++d)
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(A[d * 4 + n], -static_cast<double>(n + 1), 1e-12);
  const auto dt = softplus(ssm.dt_bias);
  for (double v : dt.data()) {
    EXPECT_GE(v, 1e-3 - 1e-12);
    EXPECT_LE(v, 1e-1 + 1e-12);
  }
}

TEST(SsmParams, ExplicitDtRankAndSkip) {
  Rng rng(7);
  SelectiveSsm<double> ssm({.d_inner = 8, .d_state = 3, .dt_rank = 5, .d_skip = true}, rng);
  EXPECT_EQ(ssm.dt_rank(), 5u);
  EXPECT_EQ(ssm.x_proj.shape(), (Shape{8, 11}));
  ASSERT_TRUE(ssm.skip.defined());
  std::size_t names = 0;
  ssm.visit("ssm", [&](const std::string& name, Tensor<double>&, ParamKind) {
    EXPECT_EQ(name.rfind("ssm.", 0), 0u);
    ++names;
  });
  EXPECT_EQ(names, 5u);
}

TEST(SsmParams, ProjectionShapesAndPositiveDelta) {
  Rng rng(8);
  SelectiveSsm<double> ssm({.d_inner = 6, .d_state = 3}, rng);
  const ScanSequence<double> seq{random_tensor({2, 5, 6}, rng)};
  const auto p = ssm.project(seq);
  EXPECT_EQ(p.B.shape(), (Shape{2, 5, 3}));
  EXPECT_EQ(p.C.shape(), (Shape{2, 5, 3}));
  EXPECT_EQ(p.delta.shape(), (Shape{2, 5, 6}));
  for (double v : p.delta.data()) EXPECT_GT(v, 0.0);
  EXPECT_EQ(ssm.forward(seq).shape(), (Shape{2, 5, 6}));
  EXPECT_THROW(ssm.forward(ScanSequence<double>{Tensor<double>(Shape{2, 5, 4})}), ShapeError);
}

TEST(SsmParams, GradientThroughProjections) {
  Rng rng(9);
  SelectiveSsm<double> ssm({.d_inner = 4, .d_state = 2, .d_skip = true}, rng);
  // Larger projections than the default init so every path carries signal.
  for (auto& v : ssm.x_proj.data()) v = rng.uniform(-0.5, 0.5);
  const Args p{random_tensor({2, 5, 4}, rng), ssm.a_log, ssm.x_proj, ssm.dt_proj, ssm.dt_bias, ssm.skip};
  EXPECT_LE(grad_error([&](const Args& a) { return ssm.forward(ScanSequence<double>{a[0]}); }, p), 1e-4);
}
