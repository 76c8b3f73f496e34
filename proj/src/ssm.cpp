#include "dualmamba/ssm.hpp"

#include <cmath>
#include <vector>

#include "dualmamba/cost_trace.hpp"
#include "dualmamba/parallel.hpp"
#include "op_support.hpp"

namespace dualmamba {

using detail::attach;
using detail::grad_of;
using detail::require;
using detail::tape_for;
using detail::wants_grad;

namespace {

// Input-coupling factor phi with b_bar = phi * b, plus its partials.
template <typename T>
struct Coupling {
  T a_bar;
  T phi;
  T dphi_da;  // d phi / d a; d phi / d delta equals a_bar (ZOH) or 1 (Euler)
};

template <typename T>
Coupling<T> coupling(T a, T delta, Discretization mode) {
  const T x = delta * a;
  const T a_bar = std::exp(x);
  if (mode == Discretization::euler) return {a_bar, delta, T(0)};
  T phi;
  if (std::abs(x) < T(1e-4)) {
    phi = delta * (T(1) + x / T(2) + x * x / T(6));
  } else {
    phi = std::expm1(x) / a;
  }
  T dphi_da;
  if (std::abs(x) < T(1e-2)) {
    dphi_da = delta * delta * (T(0.5) + x / T(3) + x * x / T(8) + x * x * x / T(30));
  } else {
    dphi_da = (x * a_bar - std::expm1(x)) / (a * a);
  }
  return {a_bar, phi, dphi_da};
}

}  // namespace

template <typename T>
DiscreteStep<T> zoh_discretize(T a, T delta, T b) {
  if (!(delta > T(0))) throw NumericError("zoh_discretize: timestep must be positive");
  const auto c = coupling(a, delta, Discretization::zoh);
  return {c.a_bar, c.phi * b};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> zoh_discretize(const Tensor<T>& A, const Tensor<T>& B, const Tensor<T>& delta) {
  require(A.rank() == 2 && B.rank() == 2 && delta.rank() == 2, "zoh_discretize",
          "expected A (D,N), B (L,N), delta (L,D)");
  const std::size_t D = A.dim(0), N = A.dim(1), L = B.dim(0);
  require(B.dim(1) == N && delta.dim(0) == L && delta.dim(1) == D, "zoh_discretize",
          "inconsistent extents A " + shape_string(A.shape()) + ", B " + shape_string(B.shape()) + ", delta " +
              shape_string(delta.shape()));
  Tensor<T> a_bar(Shape{L, D, N}), b_bar(Shape{L, D, N});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        if (!(A[d * N + n] < T(0))) throw NumericError("zoh_discretize: A must be strictly negative");
        const auto s = zoh_discretize(A[d * N + n], delta[t * D + d], B[t * N + n]);
        a_bar[(t * D + d) * N + n] = s.a_bar;
        b_bar[(t * D + d) * N + n] = s.b_bar;
      }
  return {a_bar, b_bar};
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B,
                         const Tensor<T>& C, const Tensor<T>& skip, ScanOptions options) {
  require(x.rank() == 3, "selective_scan", "expected x (batch,L,D), got " + shape_string(x.shape()));
  const std::size_t Bt = x.dim(0), L = x.dim(1), D = x.dim(2);
  require(L >= 1, "selective_scan", "sequence length must be >= 1");
  require(A.rank() == 2 && A.dim(0) == D, "selective_scan",
          "A must be (" + std::to_string(D) + ",N), got " + shape_string(A.shape()));
  const std::size_t N = A.dim(1);
  require(delta.shape() == x.shape(), "selective_scan",
          "delta " + shape_string(delta.shape()) + " != x " + shape_string(x.shape()));
  const Shape bc{Bt, L, N};
  require(B.shape() == bc && C.shape() == bc, "selective_scan",
          "B/C must be " + shape_string(bc) + ", got " + shape_string(B.shape()) + " and " +
              shape_string(C.shape()));
  if (skip.defined()) require(skip.numel() == D, "selective_scan", "skip extent != D");
  for (T a : A.data()) {
    if (!(a < T(0))) throw NumericError("selective_scan: A must be strictly negative");
  }
  for (T dt : delta.data()) {
    if (!(dt > T(0))) throw NumericError("selective_scan: timestep delta must be positive");
  }

  Tape<T>* tape = tape_for<T>({&x, &delta, &A, &B, &C, &skip});
  const Discretization mode = options.discretization;
  Tensor<T> out(x.shape());
  // Hidden states per (b,t,d,n), kept only when a backward pass will need them.
  std::vector<T> states(tape != nullptr ? Bt * L * D * N : 0);

  const T* xv = x.data().data();
  const T* dv = delta.data().data();
  const T* av = A.data().data();
  const T* bv = B.data().data();
  const T* cv = C.data().data();
  const T* sv = skip.defined() ? skip.data().data() : nullptr;
  T* y = out.data().data();
  T* hs = states.empty() ? nullptr : states.data();

  parallel_for(Bt, [&](std::size_t b0, std::size_t b1) {
    std::vector<T> h(D * N);
    for (std::size_t b = b0; b < b1; ++b) {
      std::fill(h.begin(), h.end(), T(0));
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t tok = b * L + t;
        const T* Bt_ = bv + tok * N;
        const T* Ct_ = cv + tok * N;
        for (std::size_t d = 0; d < D; ++d) {
          const T dt = dv[tok * D + d];
          const T xt = xv[tok * D + d];
          T* hd = h.data() + d * N;
          T acc = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const auto c = coupling(av[d * N + n], dt, mode);
            hd[n] = c.a_bar * hd[n] + c.phi * Bt_[n] * xt;
            acc += Ct_[n] * hd[n];
          }
          if (sv != nullptr) acc += sv[d] * xt;
          y[tok * D + d] = acc;
          if (hs != nullptr) std::copy(hd, hd + N, hs + (tok * D + d) * N);
        }
      }
      for (T v : h) {
        if (!std::isfinite(v)) throw NumericError("selective_scan: non-finite hidden state");
      }
    }
  });
  const std::uint64_t macs = kScanMacsPerState * Bt * L * D * N;
  trace::count(2 * macs, macs);
  check_finite(out, "selective_scan");

  if (tape != nullptr) {
    attach(out, tape, [X = x.handle(), Dl = delta.handle(), Ah = A.handle(), Bh = B.handle(), Ch = C.handle(),
                       Sk = skip.handle(), O = out.handle(), states = std::move(states), Bt, L, D, N, mode] {
      if (O->grad.empty()) return;
      const T* gy = O->grad.data();
      const T* xv = X->value.data();
      const T* dv = Dl->value.data();
      const T* av = Ah->value.data();
      const T* bv = Bh->value.data();
      const T* cv = Ch->value.data();
      const T* sv = Sk ? Sk->value.data() : nullptr;
      T* gx = wants_grad(X) ? grad_of(*X).data() : nullptr;
      T* gdelta = wants_grad(Dl) ? grad_of(*Dl).data() : nullptr;
      T* gB = wants_grad(Bh) ? grad_of(*Bh).data() : nullptr;
      T* gC = wants_grad(Ch) ? grad_of(*Ch).data() : nullptr;
      const bool want_a = wants_grad(Ah);
      const bool want_skip = wants_grad(Sk);
      // Parameter gradients are reduced over the batch in index order so the
      // result does not depend on the thread count.
      std::vector<T> ga_part(want_a ? Bt * D * N : 0);
      std::vector<T> gskip_part(want_skip ? Bt * D : 0);

      parallel_for(Bt, [&](std::size_t b0, std::size_t b1) {
        std::vector<T> gh(D * N);
        for (std::size_t b = b0; b < b1; ++b) {
          std::fill(gh.begin(), gh.end(), T(0));
          T* ga = want_a ? ga_part.data() + b * D * N : nullptr;
          for (std::size_t t = L; t-- > 0;) {
            const std::size_t tok = b * L + t;
            const T* Bt_ = bv + tok * N;
            const T* Ct_ = cv + tok * N;
            for (std::size_t d = 0; d < D; ++d) {
              const T g = gy[tok * D + d];
              const T xt = xv[tok * D + d];
              const T dt = dv[tok * D + d];
              const T* hcur = states.data() + (tok * D + d) * N;
              const T* hprev = t > 0 ? states.data() + ((tok - 1) * D + d) * N : nullptr;
              T* ghd = gh.data() + d * N;
              T gx_acc = 0, gdt_acc = 0;
              if (sv != nullptr) gx_acc += g * sv[d];
              if (want_skip) gskip_part[b * D + d] += g * xt;
              for (std::size_t n = 0; n < N; ++n) {
                const T a = av[d * N + n];
                const auto c = coupling(a, dt, mode);
                if (gC != nullptr) gC[tok * N + n] += g * hcur[n];
                const T gh_n = ghd[n] + g * Ct_[n];
                const T h_prev = hprev != nullptr ? hprev[n] : T(0);
                const T g_abar = gh_n * h_prev;
                const T g_bbar = gh_n * xt;
                const T b_in = Bt_[n];
                gx_acc += gh_n * c.phi * b_in;
                const T dphi_ddelta = mode == Discretization::zoh ? c.a_bar : T(1);
                gdt_acc += g_abar * a * c.a_bar + g_bbar * b_in * dphi_ddelta;
                if (ga != nullptr) ga[d * N + n] += g_abar * dt * c.a_bar + g_bbar * b_in * c.dphi_da;
                if (gB != nullptr) gB[tok * N + n] += g_bbar * c.phi;
                ghd[n] = gh_n * c.a_bar;
              }
              if (gx != nullptr) gx[tok * D + d] += gx_acc;
              if (gdelta != nullptr) gdelta[tok * D + d] += gdt_acc;
            }
          }
        }
      });
      if (want_a) {
        auto gA = grad_of(*Ah);
        for (std::size_t b = 0; b < Bt; ++b)
          for (std::size_t i = 0; i < D * N; ++i) gA[i] += ga_part[b * D * N + i];
      }
      if (want_skip) {
        auto gs = grad_of(*Sk);
        for (std::size_t b = 0; b < Bt; ++b)
          for (std::size_t d = 0; d < D; ++d) gs[d] += gskip_part[b * D + d];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> ssm_conv_oracle(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& C, const Tensor<T>& x) {
  require(a_bar.rank() == 3 && a_bar.shape() == b_bar.shape(), "ssm_conv_oracle",
          "a_bar and b_bar must both be (L,D,N)");
  const std::size_t L = a_bar.dim(0), D = a_bar.dim(1), N = a_bar.dim(2);
  require(C.shape() == Shape{L, N}, "ssm_conv_oracle", "C must be (L,N), got " + shape_string(C.shape()));
  require(x.shape() == Shape{L, D}, "ssm_conv_oracle", "x must be (L,D), got " + shape_string(x.shape()));
  for (std::size_t t = 1; t < L; ++t) {
    for (std::size_t i = 0; i < D * N; ++i) {
      if (a_bar[t * D * N + i] != a_bar[i] || b_bar[t * D * N + i] != b_bar[i]) {
        throw NumericError("ssm_conv_oracle: parameters vary over time; the convolutional form needs static ones");
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      if (C[t * N + n] != C[n]) throw NumericError("ssm_conv_oracle: C varies over time");
    }
  }
  // K[d][k] = sum_n C[n] * a^k * b.
  std::vector<T> kernel(D * L, T(0));
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) {
      const T a = a_bar[d * N + n];
      T power = T(1);
      for (std::size_t k = 0; k < L; ++k) {
        kernel[d * L + k] += C[n] * power * b_bar[d * N + n];
        power *= a;
      }
    }
  Tensor<T> y(Shape{L, D});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      T acc = 0;
      for (std::size_t k = 0; k <= t; ++k) acc += kernel[d * L + k] * x[(t - k) * D + d];
      y[t * D + d] = acc;
    }
  return y;
}

std::string_view to_string(ScanOrder order) {
  switch (order) {
    case ScanOrder::spatial_row_major: return "spatial-row-major";
    case ScanOrder::spectral_forward: return "spectral-forward";
    case ScanOrder::spectral_reversed: return "spectral-reversed";
  }
  return "unknown";
}

std::size_t auto_dt_rank(std::size_t d_inner) { return std::max<std::size_t>(1, (d_inner + 15) / 16); }

template <typename T>
SelectiveSsm<T>::SelectiveSsm(const SsmConfig& config, Rng& rng) : config_(config) {
  if (config.d_inner == 0 || config.d_state == 0) throw ConfigError("SelectiveSsm: d_inner and d_state must be positive");
  dt_rank_ = config.dt_rank == 0 ? auto_dt_rank(config.d_inner) : config.dt_rank;
  const std::size_t D = config.d_inner, N = config.d_state, R = dt_rank_;

  a_log = Tensor<T>(Shape{D, N});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) a_log[d * N + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));

  x_proj = truncated_normal<T>({D, R + 2 * N}, rng);

  const double bound = 1.0 / std::sqrt(static_cast<double>(R));
  dt_proj = Tensor<T>(Shape{R, D});
  for (auto& v : dt_proj.data()) v = static_cast<T>(rng.uniform(-bound, bound));

  // softplus(dt_bias) ~ U[1e-3, 1e-1]; inverse softplus is dt + log(-expm1(-dt)).
  dt_bias = Tensor<T>(Shape{D});
  for (auto& v : dt_bias.data()) {
    const double dt = rng.uniform(1e-3, 1e-1);
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  if (config.d_skip) skip = Tensor<T>(Shape{D}, T(1));
}

template <typename T>
Tensor<T> SelectiveSsm<T>::A() const {
  const trace::Pause weight_side;
  return scale(exp(a_log), T(-1));
}

template <typename T>
typename SelectiveSsm<T>::Projection SelectiveSsm<T>::project(const ScanSequence<T>& seq) const {
  require(seq.tokens.rank() == 3, "project_bcdelta",
          "tokens must be (batch,L,D_inner), got " + shape_string(seq.tokens.shape()));
  require(seq.width() == config_.d_inner, "project_bcdelta",
          "token width " + std::to_string(seq.width()) + " != D_inner " + std::to_string(config_.d_inner));
  require(seq.length() >= 1, "project_bcdelta", "empty sequence");
  const std::size_t N = config_.d_state, R = dt_rank_;
  Tensor<T> none;
  const Tensor<T> xp = linear(seq.tokens, x_proj, none);
  const Tensor<T> dt_low = narrow(xp, 2, 0, R);
  Projection p;
  p.B = narrow(xp, 2, R, N);
  p.C = narrow(xp, 2, R + N, N);
  p.delta = softplus(linear(dt_low, dt_proj, dt_bias));
  return p;
}

template <typename T>
Tensor<T> SelectiveSsm<T>::forward(const ScanSequence<T>& seq) const {
  const auto p = project(seq);
  return selective_scan(seq.tokens, p.delta, A(), p.B, p.C, skip, ScanOptions{config_.discretization});
}

template <typename T>
void SelectiveSsm<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  fn(join_name(prefix, "A_log"), a_log, ParamKind::weight);
  fn(join_name(prefix, "x_proj"), x_proj, ParamKind::weight);
  fn(join_name(prefix, "dt_proj"), dt_proj, ParamKind::weight);
  fn(join_name(prefix, "dt_bias"), dt_bias, ParamKind::weight);
  if (skip.defined()) fn(join_name(prefix, "skip"), skip, ParamKind::weight);
}

#define DUALMAMBA_INSTANTIATE_SSM(T)                                                                       \
  template DiscreteStep<T> zoh_discretize<T>(T, T, T);                                                     \
  template std::pair<Tensor<T>, Tensor<T>> zoh_discretize<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                             const Tensor<T>&);                            \
  template Tensor<T> selective_scan<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                       const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ScanOptions); \
  template Tensor<T> ssm_conv_oracle<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                        const Tensor<T>&);                                                 \
  template class SelectiveSsm<T>;

DUALMAMBA_INSTANTIATE_SSM(float)
DUALMAMBA_INSTANTIATE_SSM(double)

}  // namespace dualmamba
