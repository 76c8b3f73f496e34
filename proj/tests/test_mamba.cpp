#include <gtest/gtest.h>

#include <cmath>

#include "dualmamba/mamba.hpp"
#include "test_support.hpp"

using namespace dualmamba;
using dmtest::Args;
using dmtest::grad_error;
using dmtest::random_tensor;

namespace {

std::size_t count_weights(auto& module) {
  std::size_t n = 0;
  module.visit("m", [&](const std::string&, Tensor<double>& t, ParamKind kind) {
    if (kind == ParamKind::weight) n += t.numel();
  });
  return n;
}

// Replaces every weight with U(-0.5, 0.5) so gradient paths are not drowned
// by the small default initialization.
void scramble(auto& module, Rng& rng) {
  module.visit("m", [&](const std::string&, Tensor<double>& t, ParamKind kind) {
    if (kind != ParamKind::weight) return;
    for (auto& v : t.data()) v = rng.uniform(-0.5, 0.5);
  });
}

void copy_ssm(const SelectiveSsm<double>& from, SelectiveSsm<double>& to) {
  to.a_log = from.a_log.clone();
  to.x_proj = from.x_proj.clone();
  to.dt_proj = from.dt_proj.clone();
  to.dt_bias = from.dt_bias.clone();
}

}  // namespace

TEST(SpatialScan, RowMajorOrderAndInverse) {
  const std::size_t P = 7, C = 3;
  Tensor<double> x(Shape{2, P, P, C});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < P; ++j)
        for (std::size_t c = 0; c < C; ++c) x[((b * P + i) * P + j) * C + c] = 1000.0 * b + 100.0 * i + 10.0 * j + c;
  const auto seq = spatial_scan(x);
  EXPECT_EQ(seq.length(), 49u);
  EXPECT_EQ(seq.width(), C);
  EXPECT_EQ(seq.order, ScanOrder::spatial_row_major);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 49; ++t)
      EXPECT_EQ(seq.tokens[(b * 49 + t) * C + 2], 1000.0 * b + 100.0 * (t / P) + 10.0 * (t % P) + 2);
  const auto back = spatial_unflatten(seq, P);
  EXPECT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
  EXPECT_THROW(spatial_unflatten(seq, 6), ShapeError);
}

TEST(MergeBidirectional, AddsReversedSecondSequence) {
  const Tensor<double> y0(Shape{1, 3, 1}, {1, 2, 3});
  const Tensor<double> y1(Shape{1, 3, 1}, {10, 20, 30});
  const auto m = merge_bidirectional(y0, y1);
  EXPECT_EQ(m[0], 31.0);
  EXPECT_EQ(m[1], 22.0);
  EXPECT_EQ(m[2], 13.0);
}

TEST(CenterPixel, PicksMiddleAndRejectsEvenPatches) {
  Rng rng(1);
  const auto x = random_tensor({2, 5, 5, 3}, rng);
  const auto c = center_pixel(x);
  EXPECT_EQ(c.shape(), (Shape{2, 1, 1, 3}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(c[b * 3 + k], x[((b * 5 + 2) * 5 + 2) * 3 + k]);
  EXPECT_THROW(center_pixel(Tensor<double>(Shape{1, 4, 4, 3})), ShapeError);
}

TEST(PositionalEmbedding, ParameterCountAndShape) {
  Rng rng(2);
  PositionalEmbedding<double> dpe(64, rng);
  EXPECT_EQ(count_weights(dpe), 640u);  // 3*3*64 + 64
  EXPECT_EQ(dpe.forward(Tensor<double>(Shape{2, 7, 7, 64})).shape(), (Shape{2, 7, 7, 64}));
}

TEST(SpatialMamba, ProjectionSizesAndShape) {
  Rng rng(3);
  SpatialMambaBlock<double> block(64, 2, {.d_state = 16}, rng);
  EXPECT_EQ(block.proj_in.weight.numel() + block.proj_in.bias.numel(), 64u * 128u + 128u);
  EXPECT_EQ(block.ssm.config().d_inner, 128u);
  EXPECT_EQ(block.proj_out.weight.shape(), (Shape{128, 64}));
  EXPECT_EQ(block.forward(Tensor<double>(Shape{1, 7, 7, 64}, 0.1)).shape(), (Shape{1, 7, 7, 64}));
}

TEST(SpatialMamba, ZeroOutputProjectionIsIdentity) {
  Rng rng(4);
  SpatialMambaBlock<double> block(6, 2, {.d_state = 3}, rng);
  for (auto& v : block.proj_out.weight.data()) v = 0.0;
  for (auto& v : block.proj_out.bias.data()) v = 0.0;
  const auto x = random_tensor({2, 3, 3, 6}, rng);
  const auto y = block.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(SpatialMamba, TokensOnlySeeEarlierPixels) {
  Rng rng(5);
  SpatialMambaBlock<double> block(4, 2, {.d_state = 2}, rng);
  scramble(block, rng);
  const std::size_t P = 3, D = 4;
  const auto x = random_tensor({1, P, P, D}, rng);
  const auto y = block.branch(x);
  for (std::size_t t = 0; t < P * P; ++t) {
    auto x2 = x.clone();
    for (std::size_t d = 0; d < D; ++d) x2[t * D + d] += 0.3 * (d + 1.0);
    const auto y2 = block.branch(x2);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t d = 0; d < D; ++d) EXPECT_EQ(y[s * D + d], y2[s * D + d]) << "token " << s << " saw " << t;
    EXPECT_NE(y[t * D], y2[t * D]);
  }
}

TEST(SpectralMamba, OutputShapeAndZeroProjectionIdentity) {
  Rng rng(6);
  SpectralMambaBlock<double> block(8, 2, true, {.d_state = 4}, rng);
  const auto x = random_tensor({3, 5, 5, 8}, rng);
  EXPECT_EQ(block.branch(x).shape(), (Shape{3, 1, 1, 8}));
  for (auto& v : block.proj_out.weight.data()) v = 0.0;
  for (auto& v : block.proj_out.bias.data()) v = 0.0;
  const auto y = block.forward(x);
  const auto c = center_pixel(x);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(y[i], c[i]);
}

TEST(SpectralMamba, PalindromeStaysPalindromeWithMirroredScans) {
  Rng rng(7);
  const std::size_t D = 7;
  SpectralMambaBlock<double> block(D, 2, true, {.d_state = 3}, rng);
  scramble(block, rng);
  copy_ssm(block.ssm_forward, block.ssm_backward);
  for (auto& v : block.norm_in.gamma.data()) v = 1.3;
  for (auto& v : block.norm_in.beta.data()) v = -0.2;
  Tensor<double> x(Shape{1, 1, 1, D});
  for (std::size_t d = 0; d < D; ++d) x[d] = std::cos(0.9 * (static_cast<double>(d) - 3.0));
  const auto y = block.branch(x);
  for (std::size_t d = 0; d < D; ++d) EXPECT_NEAR(y[d], y[D - 1 - d], 1e-12);
  // A forward-only scan breaks the symmetry.
  block.bidirectional = false;
  const auto u = block.branch(x);
  EXPECT_GT(std::abs(u[0] - u[D - 1]), 1e-6);
}

TEST(SpectralMamba, UnidirectionalHasNoBackwardModel) {
  Rng rng(8);
  SpectralMambaBlock<double> uni(64, 2, false, {.d_state = 16}, rng);
  SpectralMambaBlock<double> bi(64, 2, true, {.d_state = 16}, rng);
  EXPECT_FALSE(uni.ssm_backward.a_log.defined());
  // Each scan model: A 2x16, x_proj 2x33, dt_proj 1x2, dt_bias 2.
  EXPECT_EQ(count_weights(bi) - count_weights(uni), 102u);
  EXPECT_EQ(count_weights(bi), 343u);
}

TEST(CrossAttention, ConstantChannelsGiveUniformWeights) {
  const std::size_t D = 5;
  CrossAttentionFusion<double> fuse(D, false);
  const Tensor<double> g_spe(Shape{1, 1, 1, D}, 2.5);
  const Tensor<double> g_spa(Shape{1, 3, 3, D}, -1.0);
  const Tensor<double> x_pos(Shape{1, 3, 3, D}, 0.5);
  const auto r = fuse.forward(g_spe, g_spa, x_pos);
  for (std::size_t d = 0; d < D; ++d) {
    EXPECT_NEAR(r.attn_spe[d], 0.2, 1e-15);
    EXPECT_NEAR(r.attn_spa[d], 0.2, 1e-15);
  }
  for (double v : r.fused.data()) EXPECT_NEAR(v, 0.2 * -1.0 + 0.2 * 2.5 + 0.5, 1e-14);
}

TEST(CrossAttention, WeightsAreDistributions) {
  Rng rng(9);
  CrossAttentionFusion<double> fuse(6, true);
  const auto r = fuse.forward(random_tensor({3, 1, 1, 6}, rng, -4, 4), random_tensor({3, 5, 5, 6}, rng, -4, 4),
                              random_tensor({3, 5, 5, 6}, rng));
  for (const auto* a : {&r.attn_spe, &r.attn_spa}) {
    EXPECT_EQ(a->shape(), (Shape{3, 1, 1, 6}));
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t d = 0; d < 6; ++d) {
        EXPECT_GT((*a)[b * 6 + d], 0.0);
        s += (*a)[b * 6 + d];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(CrossAttention, TwoChannelHandExample) {
  // A normalized pair is (-1, 1); gamma = ln(3)/2 turns that into softmax
  // logits whose weights are 1/4 and 3/4.
  CrossAttentionFusion<double> fuse(2, true);
  for (auto* n : {&fuse.norm_spe, &fuse.norm_spa})
    for (auto& v : n->gamma.data()) v = std::log(3.0) / 2.0;
  const Tensor<double> g_spe(Shape{1, 1, 1, 2}, {0.0, 100.0});
  Tensor<double> g_spa(Shape{1, 3, 3, 2});
  for (std::size_t p = 0; p < 9; ++p) g_spa[2 * p + 1] = 100.0;
  const Tensor<double> x_pos(Shape{1, 3, 3, 2}, 1.0);
  const auto r = fuse.forward(g_spe, g_spa, x_pos);
  EXPECT_NEAR(r.attn_spe[0], 0.25, 1e-8);
  EXPECT_NEAR(r.attn_spe[1], 0.75, 1e-8);
  EXPECT_NEAR(r.attn_spa[0], 0.25, 1e-8);
  EXPECT_NEAR(r.attn_spa[1], 0.75, 1e-8);
  for (std::size_t p = 0; p < 9; ++p) {
    EXPECT_NEAR(r.fused[2 * p], 1.0, 1e-6);
    EXPECT_NEAR(r.fused[2 * p + 1], 0.75 * 100 + 0.75 * 100 + 1.0, 1e-5);
  }
}

TEST(CrossAttention, RejectsMismatchedStreams) {
  CrossAttentionFusion<double> fuse(4, false);
  EXPECT_THROW(fuse.forward(Tensor<double>(Shape{1, 1, 1, 3}), Tensor<double>(Shape{1, 3, 3, 4}),
                            Tensor<double>(Shape{1, 3, 3, 4})),
               ShapeError);
  EXPECT_THROW(fuse.forward(Tensor<double>(Shape{1, 1, 1, 4}), Tensor<double>(Shape{1, 3, 3, 4}),
                            Tensor<double>(Shape{1, 5, 5, 4})),
               ShapeError);
}

TEST(Gradcheck, PositionalEmbedding) {
  Rng rng(10);
  PositionalEmbedding<double> dpe(3, rng);
  const Args p{random_tensor({2, 3, 3, 3}, rng), dpe.conv.weight, dpe.conv.bias};
  EXPECT_LE(grad_error([&](const Args& a) { return add(a[0], dpe.forward(a[0])); }, p), 1e-4);
}

TEST(Gradcheck, SpatialMambaBlock) {
  Rng rng(11);
  SpatialMambaBlock<double> block(4, 2, {.d_state = 2}, rng);
  scramble(block, rng);
  Args p{random_tensor({2, 3, 3, 4}, rng)};
  block.visit("s", [&](const std::string&, Tensor<double>& t, ParamKind) { p.push_back(t); });
  EXPECT_LE(grad_error([&](const Args& a) { return block.forward(a[0]); }, p), 1e-4);
}

TEST(Gradcheck, SpectralMambaBlock) {
  for (const bool bidirectional : {true, false}) {
    Rng rng(12);
    SpectralMambaBlock<double> block(5, 2, bidirectional, {.d_state = 2}, rng);
    scramble(block, rng);
    Args p{random_tensor({2, 3, 3, 5}, rng)};
    block.visit("s", [&](const std::string&, Tensor<double>& t, ParamKind) { p.push_back(t); });
    EXPECT_LE(grad_error([&](const Args& a) { return block.forward(a[0]); }, p), 1e-4) << bidirectional;
  }
}

TEST(Gradcheck, CrossAttention) {
  Rng rng(13);
  CrossAttentionFusion<double> fuse(4, true);
  Args p{random_tensor({2, 1, 1, 4}, rng, -2, 2), random_tensor({2, 3, 3, 4}, rng, -2, 2),
         random_tensor({2, 3, 3, 4}, rng), fuse.norm_spe.gamma, fuse.norm_spa.beta};
  EXPECT_LE(grad_error([&](const Args& a) { return fuse.forward(a[0], a[1], a[2]).fused; }, p), 1e-4);
}
