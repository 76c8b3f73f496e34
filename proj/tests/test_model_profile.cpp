#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "dualmamba/checkpoint.hpp"
#include "dualmamba/cost_trace.hpp"
#include "dualmamba/model.hpp"
#include "dualmamba/profile.hpp"
#include "test_support.hpp"

using namespace dualmamba;
using dmtest::random_tensor_f;

namespace {

ModelConfig indian_pines() { return ModelConfig{}; }

ModelConfig tiny_config() {
  ModelConfig c;
  c.bands = 6;
  c.classes = 3;
  c.embed_dim = 4;
  c.state_dim = 2;
  c.patch = 3;
  c.embed_groups = 2;
  return c;
}

std::uint64_t traced_total(DualMamba<float>& model, std::size_t batch) {
  const auto& c = model.config();
  trace::CostRecorder rec;
  model.forward(Tensor<float>(Shape{batch, c.patch, c.patch, c.bands}), Mode::eval);
  std::uint64_t total = 0;
  for (const auto& [name, counts] : rec.entries()) total += counts.flops;
  return total;
}

std::filesystem::path temp_path(const std::string& leaf) {
  return std::filesystem::temp_directory_path() / ("dualmamba_model_test_" + leaf);
}

}  // namespace

TEST(Model, ForwardShapesForDatasetConfigs) {
  Rng rng(1);
  DualMamba<float> ip(indian_pines(), rng);
  EXPECT_EQ(ip.forward(Tensor<float>(Shape{2, 7, 7, 200}), Mode::eval).shape(), (Shape{2, 16}));

  ModelConfig houston;
  houston.bands = 48;
  houston.classes = 20;
  houston.patch = 15;
  DualMamba<float> h(houston, rng);
  EXPECT_EQ(h.forward(Tensor<float>(Shape{1, 15, 15, 48}), Mode::eval).shape(), (Shape{1, 20}));
  EXPECT_THROW(h.forward(Tensor<float>(Shape{1, 13, 13, 48}), Mode::eval), ShapeError);
  EXPECT_THROW(h.forward(Tensor<float>(Shape{1, 15, 15, 47}), Mode::eval), ShapeError);
}

TEST(Model, ConfigValidationListsEveryProblem) {
  ModelConfig c;
  c.patch = 6;
  c.bands = 201;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("patch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("embed_groups"), std::string::npos) << msg;
  }
  ModelConfig ok;
  EXPECT_NO_THROW(ok.validate());
}

TEST(Model, SameSeedSameWeightsAndStableNames) {
  Rng a(5), b(5);
  DualMamba<float> m1(tiny_config(), a), m2(tiny_config(), b);
  const auto p1 = m1.parameters(), p2 = m2.parameters();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    for (std::size_t j = 0; j < p1[i].numel(); ++j) ASSERT_EQ(p1[i][j], p2[i][j]);

  std::set<std::string> names;
  m1.visit([&](const std::string& name, Tensor<float>&, ParamKind) { EXPECT_TRUE(names.insert(name).second) << name; });
  EXPECT_TRUE(names.count("embed.weight"));
  EXPECT_TRUE(names.count("block0.spatial.proj_in.weight"));
  EXPECT_TRUE(names.count("block0.spectral.ssm_backward.dt_bias"));
  EXPECT_TRUE(names.count("block0.ls2rc.band_norm.running_mean"));
  EXPECT_TRUE(names.count("classifier.bias"));
}

TEST(Model, AdaptiveGateRecordedPerBlock) {
  Rng rng(2);
  ModelConfig c = tiny_config();
  c.blocks = 2;
  DualMamba<float> m(c, rng);
  m.forward(random_tensor_f({3, 3, 3, 6}, rng), Mode::train);
  ASSERT_EQ(m.last_global_weights.size(), 2u);
  EXPECT_EQ(m.last_global_weights[1].shape(), (Shape{3, 1, 1, 1}));
}

TEST(Profile, FixedLinesForIndianPines) {
  const auto r = profile(indian_pines());
  ASSERT_NE(r.find("block0.dpe"), nullptr);
  EXPECT_EQ(r.find("block0.dpe")->params, 640u);
  EXPECT_EQ(r.find("classifier")->params, 1040u);
  // 3x3 group conv, 4 groups of 50 -> 64 channels, over 49 pixels.
  EXPECT_EQ(r.find("embed")->params, 9u * 50u * 64u + 64u);
  EXPECT_EQ(r.find("embed")->flops, 2u * 9u * 50u * 64u * 49u);
  EXPECT_EQ(r.find("embed")->flops, 2822400u);
}

TEST(Profile, MambaLinesMatchHandCount) {
  const auto r = profile(indian_pines());
  const std::uint64_t L = 49, D = 64, E = 128, N = 16, R = 8;
  const std::uint64_t spatial_macs = L * D * E                // proj_in
                                     + L * E * (R + 2 * N)    // x_proj
                                     + L * R * E              // dt_proj
                                     + kScanMacsPerState * L * E * N
                                     + L * E * D;             // proj_out
  EXPECT_EQ(r.find("block0.spatial")->macs, spatial_macs);
  EXPECT_EQ(r.find("block0.spatial")->params,
            2 * D + (D * E + E) + (E * N + E * (R + 2 * N) + R * E + E) + 2 * E + (E * D + D));

  // Spectral: D tokens of width 2, two scans with dt_rank 1.
  const std::uint64_t per_scan = D * 2 * (1 + 2 * N) + D * 1 * 2 + kScanMacsPerState * D * 2 * N;
  EXPECT_EQ(r.find("block0.spectral")->macs, D * 2 + 2 * per_scan + D * 2);
  EXPECT_EQ(r.find("block0.spectral")->params, 2 * D + 4 + 2 * (2 * N + 2 * (1 + 2 * N) + 2 + 2) + 4 + 3);
  EXPECT_EQ(r.find("block0.cross_attn")->params, 0u);
  EXPECT_EQ(r.find("block0.cross_attn")->macs, 0u);
}

TEST(Profile, ConvAndFusionLinesMatchHandCount) {
  const auto r = profile(indian_pines());
  const std::uint64_t L = 49, D = 64;
  const std::uint64_t pointwise_flops = 2 * 2 * D * D * L;
  EXPECT_EQ(pointwise_flops, 802816u);
  EXPECT_EQ(r.find("block0.ls2rc")->macs, 3 * D * L + 9 * D * L + 2 * D * D * L);
  EXPECT_EQ(r.find("block0.ls2rc")->params, 3 + 9 * D + (2 * D * D + D) + 3 * 2 * D);
  EXPECT_EQ(r.find("block0.fusion")->macs, D * (D / 2) + D / 2);
  EXPECT_EQ(r.find("classifier")->macs, D * 16);
}

TEST(Profile, TotalsWithinPaperBudget) {
  const auto r = profile(indian_pines());
  std::uint64_t p = 0, f = 0, m = 0;
  for (const auto& line : r.lines) p += line.params, f += line.flops, m += line.macs;
  EXPECT_EQ(r.total_params(), p);
  EXPECT_EQ(r.total_flops(), f);
  EXPECT_EQ(r.total_macs(), m);
  EXPECT_NEAR(static_cast<double>(r.total_params()), 72940.0, 0.10 * 72940.0);
  EXPECT_NEAR(static_cast<double>(r.total_macs()), 4.19e6, 0.25 * 4.19e6);
  EXPECT_NE(r.table().find("total"), std::string::npos);
  EXPECT_NE(r.key_values().find("params.block0.dpe=640\n"), std::string::npos);
}

TEST(Profile, SecondBlockDuplicatesBlockLines) {
  ModelConfig two = indian_pines();
  two.blocks = 2;
  const auto one = profile(indian_pines());
  const auto r = profile(two);
  for (const char* part : {"dpe", "spatial", "spectral", "cross_attn", "ls2rc", "fusion"}) {
    const auto* b0 = one.find(std::string("block0.") + part);
    const auto* b1 = r.find(std::string("block1.") + part);
    ASSERT_NE(b1, nullptr) << part;
    EXPECT_EQ(b1->params, b0->params);
    EXPECT_EQ(b1->flops, b0->flops);
  }
  EXPECT_EQ(r.total_params() - one.total_params(), one.total_params() - one.find("embed")->params -
                                                       one.find("classifier")->params);
}

TEST(Profile, FlopsScaleLinearlyWithBatch) {
  Rng rng(3);
  DualMamba<float> m(tiny_config(), rng);
  const auto one = traced_total(m, 1);
  EXPECT_EQ(traced_total(m, 4), 4 * one);
  EXPECT_EQ(count_flops(m).total_flops(), one);
}

TEST(Profile, LineNames) {
  EXPECT_EQ(report_line_name("block3.spatial.ssm.a_log"), "block3.spatial");
  EXPECT_EQ(report_line_name("embed.weight"), "embed");
  EXPECT_EQ(report_line_name("classifier"), "classifier");
}

TEST(ModelCheckpoint, RoundTripIsBitIdentical) {
  Rng rng(4);
  DualMamba<float> m(tiny_config(), rng);
  m.forward(random_tensor_f({4, 3, 3, 6}, rng), Mode::train);  // move BN buffers off init
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, m, nullptr);

  Rng other(99);
  DualMamba<float> m2(tiny_config(), other);
  load_checkpoint(path, m2, nullptr);
  const auto x = random_tensor_f({2, 3, 3, 6}, rng);
  const auto y1 = m.forward(x, Mode::eval), y2 = m2.forward(x, Mode::eval);
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
  EXPECT_EQ(encode_checkpoint(checkpoint_entries(m, nullptr)), encode_checkpoint(checkpoint_entries(m2, nullptr)));
  std::filesystem::remove(path);
}

TEST(ModelCheckpoint, ArchitectureMismatchIsRejected) {
  Rng rng(5);
  DualMamba<float> m(tiny_config(), rng);
  const auto entries = checkpoint_entries(m, nullptr);

  ModelConfig sum_cfg = tiny_config();
  sum_cfg.fusion = FusionStrategy::sum;
  DualMamba<float> other(sum_cfg, rng);
  const auto before = encode_checkpoint(checkpoint_entries(other, nullptr));
  EXPECT_THROW(restore_checkpoint(other, nullptr, entries), ConfigError);
  EXPECT_EQ(encode_checkpoint(checkpoint_entries(other, nullptr)), before);  // untouched on failure

  ModelConfig wide = tiny_config();
  wide.embed_dim = 8;
  DualMamba<float> w(wide, rng);
  EXPECT_THROW(restore_checkpoint(w, nullptr, entries), ConfigError);

  auto truncated = entries;
  truncated.pop_back();
  DualMamba<float> same(tiny_config(), rng);
  EXPECT_THROW(restore_checkpoint(same, nullptr, truncated), ConfigError);
}

TEST(Gradcheck, FullModelSmallConfig) {
  Rng rng(6);
  DualMamba<double> m(tiny_config(), rng);
  std::vector<Tensor<double>> point;
  m.visit([&](const std::string&, Tensor<double>& t, ParamKind kind) {
    if (kind != ParamKind::weight) return;
    for (auto& v : t.data()) v = rng.uniform(-0.5, 0.5);
    point.push_back(t);
  });
  const auto x = dmtest::random_tensor({2, 3, 3, 6}, rng);
  point.insert(point.begin(), x);
  const std::vector<int> labels{0, 2};
  const auto result = gradcheck(
      [&](const std::vector<Tensor<double>>& a) {
        return cross_entropy(m.forward(a[0], Mode::train), std::span<const int>(labels));
      },
      point);
  EXPECT_LE(result.max_relative_error, 1e-4);
}
