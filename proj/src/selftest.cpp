#include "dualmamba/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <utility>

#include "dualmamba/conv_module.hpp"
#include "dualmamba/fusion.hpp"
#include "dualmamba/gradcheck.hpp"
#include "dualmamba/mamba.hpp"
#include "dualmamba/metrics.hpp"
#include "dualmamba/model.hpp"
#include "dualmamba/ops.hpp"
#include "dualmamba/profile.hpp"
#include "dualmamba/ssm.hpp"

namespace dualmamba {
namespace {

using Args = std::vector<Tensor<double>>;
using ArgsFn = std::function<Tensor<double>(const Args&)>;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng.engine());
}

// Modules take a name prefix; the whole model names from the root.
template <typename Module>
void visit_all(Module& m, const ParamVisitor<double>& fn) {
  if constexpr (requires { m.visit(fn); }) {
    m.visit(fn);
  } else {
    m.visit("m", fn);
  }
}

template <typename Module>
void scramble(Module& m, Rng& rng, double range = 0.5) {
  visit_all(m, [&](const std::string&, Tensor<double>& t, ParamKind kind) {
    if (kind != ParamKind::weight) return;
    for (auto& v : t.data()) v = rng.uniform(-range, range);
  });
}

template <typename Module>
Args with_weights(Args inputs, Module& m) {
  visit_all(m, [&](const std::string&, Tensor<double>& t, ParamKind kind) {
    if (kind == ParamKind::weight) inputs.push_back(t);
  });
  return inputs;
}

// Gradient of sum(w * f(args)) for a fixed random w, so every output
// coordinate contributes.
double weighted_error(const ArgsFn& f, const Args& point) {
  Tensor<double> w;
  auto loss = [&](const Args& a) {
    Tensor<double> y = f(a);
    if (!w.defined()) {
      Rng rng(99);
      w = random_tensor(y.shape(), rng, 0.5, 1.5);
    }
    return sum(mul(y, w));
  };
  return gradcheck(loss, point).max_relative_error;
}

template <typename Fn>
CheckResult timed(std::string name, Fn&& body) {
  CheckResult r;
  r.name = std::move(name);
  const auto start = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string format_check(const CheckResult& result) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2f", result.seconds);
  return std::string(result.passed ? "PASS " : "FAIL ") + result.name + ": " + result.detail + " (" + secs + " s)";
}

CheckResult check_scan_oracle(std::size_t instances, std::uint64_t seed) {
  return timed("scan-conv-oracle", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
      const std::size_t L = pick(rng, 1, 64), N = pick(rng, 1, 16), D = pick(rng, 1, 8);
      const auto A = random_tensor({D, N}, rng, -2.0, -0.05);
      const auto b0 = random_tensor({N}, rng);
      const auto c0 = random_tensor({N}, rng);
      const auto d0 = random_tensor({D}, rng, 0.01, 1.0);
      Tensor<double> B(Shape{L, N}), C(Shape{L, N}), delta(Shape{L, D});
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t n = 0; n < N; ++n) B[t * N + n] = b0[n], C[t * N + n] = c0[n];
        for (std::size_t d = 0; d < D; ++d) delta[t * D + d] = d0[d];
      }
      const auto x = random_tensor({L, D}, rng);
      const auto [a_bar, b_bar] = zoh_discretize(A, B, delta);
      const auto conv = ssm_conv_oracle(a_bar, b_bar, C, x);
      const auto scan = selective_scan(reshape(x, {1, L, D}), reshape(delta, {1, L, D}), A, reshape(B, {1, L, N}),
                                       reshape(C, {1, L, N}), Tensor<double>());
      double diff = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < L * D; ++i) {
        diff = std::max(diff, std::abs(scan[i] - conv[i]));
        scale = std::max(scale, std::abs(conv[i]));
      }
      worst = std::max(worst, diff / std::max(scale, 1e-300));
    }
    r.passed = worst <= kScanOracleTolerance;
    r.detail = std::to_string(instances) + " instances, max rel err " + sci(worst) + " (tol " +
               sci(kScanOracleTolerance) + ")";
  });
}

CheckResult check_gradients() {
  return timed("gradient-suite", [](CheckResult& r) {
    std::vector<std::pair<std::string, double>> results;
    auto run = [&](const std::string& name, const ArgsFn& f, const Args& p) { results.emplace_back(name, weighted_error(f, p)); };
    Rng rng(21);

    {
      const Args p{random_tensor({2, 3, 4}, rng), random_tensor({2, 1, 4}, rng)};
      run("add", [](const Args& a) { return add(a[0], a[1]); }, p);
      run("sub", [](const Args& a) { return sub(a[0], a[1]); }, p);
      run("mul", [](const Args& a) { return mul(a[0], a[1]); }, p);
    }
    {
      const Args p{random_tensor({3, 5}, rng, -2, 2)};
      const Args positive{random_tensor({3, 5}, rng, 0.2, 2)};
      run("scale", [](const Args& a) { return scale(a[0], 1.7); }, p);
      run("add_scalar", [](const Args& a) { return add_scalar(a[0], -0.3); }, p);
      run("exp", [](const Args& a) { return exp(a[0]); }, p);
      run("silu", [](const Args& a) { return silu(a[0]); }, p);
      run("sigmoid", [](const Args& a) { return sigmoid(a[0]); }, p);
      run("softplus", [](const Args& a) { return softplus(a[0]); }, p);
      // Away from the kink, on both sides.
      run("relu", [](const Args& a) { return relu(a[0]); }, positive);
      run("relu(-x)", [](const Args& a) { return relu(scale(a[0], -1.0)); }, positive);
    }
    {
      const Args p{random_tensor({2, 3, 3, 4}, rng)};
      run("sum", [](const Args& a) { return sum(a[0]); }, p);
      run("mean", [](const Args& a) { return mean(a[0]); }, p);
      run("mean_axes", [](const Args& a) { return mean_axes(a[0], {1, 2}); }, p);
    }
    {
      const Args p{random_tensor({2, 3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)};
      run("linear", [](const Args& a) { return linear(a[0], a[1], a[2]); }, p);
      const Args q{random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)};
      run("matmul", [](const Args& a) { return matmul(a[0], a[1]); }, q);
    }
    {
      const Args g{random_tensor({2, 4, 3, 4}, rng), random_tensor({3, 3, 2, 6}, rng), random_tensor({6}, rng)};
      run("conv2d", [](const Args& a) { return conv2d(a[0], a[1], a[2], 2); }, g);
      const Args d{random_tensor({2, 3, 4, 3}, rng), random_tensor({3, 3, 3}, rng), random_tensor({3}, rng)};
      run("depthwise_conv2d", [](const Args& a) { return depthwise_conv2d(a[0], a[1], a[2]); }, d);
      const Args b{random_tensor({2, 2, 2, 5}, rng), random_tensor({3}, rng)};
      run("band_conv3", [](const Args& a) { return band_conv3(a[0], a[1]); }, b);
    }
    {
      const Args ln{random_tensor({2, 3, 5}, rng, -2, 2), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)};
      run("layer_norm", [](const Args& a) { return layer_norm(a[0], a[1], a[2]); }, ln);
      const Args bn{random_tensor({3, 2, 2, 4}, rng, -2, 2), random_tensor({4}, rng, 0.5, 1.5),
                    random_tensor({4}, rng)};
      Tensor<double> rm(Shape{4}), rv(Shape{4}, 1.0), em(Shape{4}, 0.2), ev(Shape{4}, 1.5);
      run("batch_norm.train", [&](const Args& a) { return batch_norm(a[0], a[1], a[2], rm, rv, true); }, bn);
      run("batch_norm.eval", [&](const Args& a) { return batch_norm(a[0], a[1], a[2], em, ev, false); }, bn);
    }
    {
      const Args p{random_tensor({2, 1, 1, 5}, rng, -2, 2)};
      run("softmax", [](const Args& a) { return softmax(a[0], 3); }, p);
      const Args q{random_tensor({3, 4}, rng, -2, 2)};
      const std::vector<int> labels{2, 0, 3};
      results.emplace_back(
          "cross_entropy",
          gradcheck([&](const Args& a) { return cross_entropy(a[0], std::span<const int>(labels)); }, q).max_relative_error);
    }
    {
      const Args p{random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 2}, rng)};
      run("concat", [](const Args& a) { return concat<double>({a[0], a[1]}, 2); }, p);
      run("flip", [](const Args& a) { return flip(a[0], 1); }, p);
      run("narrow", [](const Args& a) { return narrow(a[0], 2, 1, 2); }, p);
      run("reshape", [](const Args& a) { return reshape(a[0], {6, 4}); }, p);
    }
    {
      const std::size_t Bt = 2, L = 4, D = 3, N = 2;
      const Args p{random_tensor({Bt, L, D}, rng),    random_tensor({Bt, L, D}, rng, 0.1, 1.2),
                   random_tensor({D, N}, rng, -2, -0.3), random_tensor({Bt, L, N}, rng),
                   random_tensor({Bt, L, N}, rng),    random_tensor({D}, rng)};
      run("selective_scan.zoh", [](const Args& a) { return selective_scan(a[0], a[1], a[2], a[3], a[4], a[5]); }, p);
      run("selective_scan.euler",
          [](const Args& a) {
            return selective_scan(a[0], a[1], a[2], a[3], a[4], Tensor<double>(), {Discretization::euler});
          },
          p);
    }

    // Composite modules, weights scrambled so no path is negligible.
    {
      PositionalEmbedding<double> dpe(3, rng);
      run("dpe", [&](const Args& a) { return add(a[0], dpe.forward(a[0])); },
          {random_tensor({2, 3, 3, 3}, rng), dpe.conv.weight, dpe.conv.bias});
    }
    {
      SpatialMambaBlock<double> block(4, 2, {.d_state = 2}, rng);
      scramble(block, rng);
      run("spatial_mamba", [&](const Args& a) { return block.forward(a[0]); },
          with_weights({random_tensor({2, 3, 3, 4}, rng)}, block));
    }
    for (const bool bidirectional : {true, false}) {
      SpectralMambaBlock<double> block(5, 2, bidirectional, {.d_state = 2}, rng);
      scramble(block, rng);
      run(bidirectional ? "spectral_mamba.bidirectional" : "spectral_mamba.unidirectional",
          [&](const Args& a) { return block.forward(a[0]); }, with_weights({random_tensor({2, 3, 3, 5}, rng)}, block));
    }
    {
      CrossAttentionFusion<double> fuse(4, true);
      run("cross_attention", [&](const Args& a) { return fuse.forward(a[0], a[1], a[2]).fused; },
          {random_tensor({2, 1, 1, 4}, rng, -2, 2), random_tensor({2, 3, 3, 4}, rng, -2, 2),
           random_tensor({2, 3, 3, 4}, rng), fuse.norm_spe.gamma, fuse.norm_spa.beta});
    }
    for (const Mode mode : {Mode::train, Mode::eval}) {
      SpectralSpatialConv<double> conv(3, rng);
      run(mode == Mode::train ? "ls2rc.train" : "ls2rc.eval", [&](const Args& a) { return conv.forward(a[0], mode); },
          with_weights({random_tensor({3, 3, 3, 3}, rng)}, conv));
    }
    for (const auto s : {FusionStrategy::adaptive, FusionStrategy::sum, FusionStrategy::concat_linear,
                         FusionStrategy::learnable}) {
      GlobalLocalFusion<double> f(4, s, rng);
      scramble(f, rng, 1.0);
      run("fusion." + std::string(to_string(s)), [&](const Args& a) { return f.forward(a[0], a[1], Mode::train).fused; },
          with_weights({random_tensor({3, 3, 3, 4}, rng), random_tensor({3, 3, 3, 4}, rng)}, f));
    }
    {
      ModelConfig c;
      c.bands = 6;
      c.classes = 3;
      c.embed_dim = 4;
      c.state_dim = 2;
      c.patch = 3;
      c.embed_groups = 2;
      DualMamba<double> m(c, rng);
      scramble(m, rng);
      const std::vector<int> labels{0, 2};
      results.emplace_back("full_model", gradcheck(
                                             [&](const Args& a) {
                                               return cross_entropy(m.forward(a[0], Mode::train),
                                                                    std::span<const int>(labels));
                                             },
                                             with_weights({random_tensor({2, 3, 3, 6}, rng)}, m))
                                             .max_relative_error);
    }

    const auto worst = std::max_element(results.begin(), results.end(),
                                        [](const auto& a, const auto& b) { return a.second < b.second; });
    std::size_t failed = 0;
    std::string failures;
    for (const auto& [name, err] : results) {
      if (err <= kGradientTolerance) continue;
      ++failed;
      failures += " " + name + "=" + sci(err);
    }
    r.passed = failed == 0;
    r.detail = std::to_string(results.size()) + " checks, worst " + worst->first + " " + sci(worst->second) +
               " (tol " + sci(kGradientTolerance) + ")";
    if (failed) r.detail += ", failing:" + failures;
  });
}

CheckResult check_structural_isolation(std::size_t trials, std::uint64_t seed) {
  return timed("structural-isolation", [&](CheckResult& r) {
    Rng rng(seed);
    std::size_t channel_leaks = 0, pixel_leaks = 0, causal_leaks = 0, insensitive = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t D = pick(rng, 2, 8), P = 2 * pick(rng, 1, 3) + 1, Bt = pick(rng, 1, 3);
      SpectralSpatialConv<double> conv(D, rng);
      scramble(conv, rng);
      for (auto* bn : {&conv.band_norm, &conv.depthwise_norm}) {
        for (auto& v : bn->running_mean.data()) v = rng.uniform(-0.5, 0.5);
        for (auto& v : bn->running_var.data()) v = rng.uniform(0.5, 2.0);
      }
      const auto x = random_tensor({Bt, P, P, D}, rng);
      const std::size_t b = pick(rng, 0, Bt - 1), pix = pick(rng, 0, P * P - 1), ch = pick(rng, 0, D - 1);
      auto x2 = x.clone();
      x2[(b * P * P + pix) * D + ch] += rng.uniform(0.5, 2.0);

      // Depthwise: channels other than ch are untouched everywhere.
      const auto spa = conv.spatial_branch(x, Mode::eval), spa2 = conv.spatial_branch(x2, Mode::eval);
      // Band conv: pixels other than pix are untouched in every channel.
      const auto spe = conv.spectral_branch(x, Mode::eval), spe2 = conv.spectral_branch(x2, Mode::eval);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const std::size_t c = i % D, p = (i / D) % (P * P), bi = i / (D * P * P);
        if (c != ch && spa[i] != spa2[i]) ++channel_leaks;
        if ((bi != b || p != pix) && spe[i] != spe2[i]) ++pixel_leaks;
      }
      const std::size_t hit = (b * P * P + pix) * D + ch;
      if (spa[hit] == spa2[hit] || spe[hit] == spe2[hit]) ++insensitive;

      // Row-major scan: token s < tok is unaffected by a change at tok.
      SpatialMambaBlock<double> block(D, 2, {.d_state = pick(rng, 1, 4)}, rng);
      scramble(block, rng);
      const std::size_t tok = pick(rng, 0, P * P - 1);
      auto x3 = x.clone();
      for (std::size_t bb = 0; bb < Bt; ++bb)
        for (std::size_t d = 0; d < D; ++d) x3[(bb * P * P + tok) * D + d] += 0.3 * (d + 1.0);
      const auto y = block.branch(x), y3 = block.branch(x3);
      for (std::size_t bb = 0; bb < Bt; ++bb) {
        for (std::size_t s = 0; s < tok; ++s)
          for (std::size_t d = 0; d < D; ++d)
            if (y[(bb * P * P + s) * D + d] != y3[(bb * P * P + s) * D + d]) ++causal_leaks;
        if (y[(bb * P * P + tok) * D] == y3[(bb * P * P + tok) * D]) ++insensitive;
      }
    }
    r.passed = channel_leaks == 0 && pixel_leaks == 0 && causal_leaks == 0 && insensitive == 0;
    r.detail = std::to_string(trials) + " trials, leaks: channel " + std::to_string(channel_leaks) + ", pixel " +
               std::to_string(pixel_leaks) + ", causal " + std::to_string(causal_leaks) + "; unresponsive " +
               std::to_string(insensitive);
  });
}

CheckResult check_metrics_oracle() {
  return timed("metrics-oracle", [](CheckResult& r) {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 45);
    cm.add(0, 1, 5);
    cm.add(1, 0, 15);
    cm.add(1, 1, 35);
    const Metrics m = compute_metrics(cm);
    // Exact: each value is a single correctly rounded division.
    r.passed = m.kappa == 0.6 && m.overall_accuracy == 0.8 && m.average_accuracy == 0.8;
    std::ostringstream os;
    os.precision(17);
    os << "kappa " << m.kappa << ", OA " << m.overall_accuracy << ", AA " << m.average_accuracy
       << " (expect 0.6, 0.8, 0.8)";
    r.detail = os.str();
  });
}

CheckResult check_complexity_budget() {
  return timed("complexity-budget", [](CheckResult& r) {
    const CostReport rep = profile(ModelConfig{});
    const double params = static_cast<double>(rep.total_params());
    const double macs = static_cast<double>(rep.total_macs());
    const auto* dpe = rep.find("block0.dpe");
    const auto* head = rep.find("classifier");
    const bool params_ok = std::abs(params - 72940.0) <= 0.10 * 72940.0;
    // The published "FLOPs" follow the multiply-accumulate convention.
    const bool flops_ok = std::abs(macs - 4.19e6) <= 0.25 * 4.19e6;
    const bool dpe_ok = dpe && dpe->params == 640;
    const bool head_ok = head && head->params == 1040;
    r.passed = params_ok && flops_ok && dpe_ok && head_ok;
    std::ostringstream os;
    os << "params " << rep.total_params() << " (72940 +-10%), FLOPs as MACs " << rep.total_macs()
       << " (4.19M +-25%; 2*MAC count " << rep.total_flops() << "), dpe " << (dpe ? dpe->params : 0)
       << ", classifier " << (head ? head->params : 0);
    r.detail = os.str();
  });
}

std::vector<CheckResult> run_selftest() {
  return {check_scan_oracle(), check_gradients(), check_structural_isolation(), check_metrics_oracle(),
          check_complexity_budget()};
}

}  // namespace dualmamba
