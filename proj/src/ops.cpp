#include "dualmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualmamba/cost_trace.hpp"
#include "op_support.hpp"

namespace dualmamba {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {
void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}
}  // namespace detail

using detail::attach;
using detail::grad_of;
using detail::require;
using detail::tape_for;
using detail::wants_grad;

template <typename T>
void check_finite(const Tensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
}

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
  return s;
}

// Calls f(out_index, a_index, b_index) over every element of `out`, where
// sa/sb are strides into the operands (0 on broadcast axes).
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  require(a.size() == b.size(), op,
          "rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  BroadcastPlan p;
  p.same = a == b;
  p.out.resize(a.size());
  auto ra = strides_of(a), rb = strides_of(b);
  p.sa.resize(a.size());
  p.sb.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    require(a[d] == b[d] || a[d] == 1 || b[d] == 1, op,
            "dimension " + std::to_string(d) + " mismatch " + shape_string(a) + " vs " +
                shape_string(b));
    p.out[d] = std::max(a[d], b[d]);
    p.sa[d] = a[d] == 1 ? 0 : ra[d];
    p.sb[d] = b[d] == 1 ? 0 : rb[d];
  }
  return p;
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* op) {
  auto plan = plan_broadcast(a.shape(), b.shape(), op);
  Tensor<T> out(plan.out);
  auto y = out.data();
  auto av = a.data();
  auto bv = b.data();
  auto apply = [kind](T x, T z) {
    switch (kind) {
      case BinaryKind::add: return x + z;
      case BinaryKind::sub: return x - z;
      default: return x * z;
    }
  };
  if (plan.same) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(plan.out, plan.sa, plan.sb,
                       [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = apply(av[ia], bv[ib]); });
  }
  trace::count(out.numel(), 0);
  check_finite(out, op);
  if (auto* tape = tape_for<T>({&a, &b})) {
    attach(out, tape, [A = a.handle(), B = b.handle(), O = out.handle(), plan, kind] {
      if (O->grad.empty()) return;
      const auto& g = O->grad;
      const bool ga_on = wants_grad(A), gb_on = wants_grad(B);
      std::span<T> ga, gb;
      if (ga_on) ga = grad_of(*A);
      if (gb_on) gb = grad_of(*B);
      const auto& av = A->value;
      const auto& bv = B->value;
      for_each_broadcast(plan.out, plan.sa, plan.sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
          case BinaryKind::add:
            if (ga_on) ga[ia] += g[i];
            if (gb_on) gb[ib] += g[i];
            break;
          case BinaryKind::sub:
            if (ga_on) ga[ia] += g[i];
            if (gb_on) gb[ib] -= g[i];
            break;
          case BinaryKind::mul:
            if (ga_on) ga[ia] += g[i] * bv[ib];
            if (gb_on) gb[ib] += g[i] * av[ia];
            break;
        }
      });
    });
  }
  return out;
}

// Elementwise unary op: y = f(x), dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, DF df) {
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  trace::count(out.numel(), 0);
  check_finite(out, op);
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle(), df] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += O->grad[i] * df(X->value[i], O->value[i]);
    });
  }
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
  // log(1 + e^x) without overflow.
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Splits `shape` around `axis` into outer * extent * inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d < axis) s.outer *= shape[d];
    else if (d == axis) s.extent = shape[d];
    else s.inner *= shape[d];
  }
  return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, "scale", [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, "sigmoid", [](T v) { return sigmoid_scalar(v); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(x, "softplus", [](T v) { return softplus_scalar(v); },
               [](T v, T) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  trace::count(x.numel(), 0);
  check_finite(out, "sum");
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for (auto& g : gx) g += O->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean", "empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  Shape out_shape = x.shape();
  std::size_t count = 1;
  for (auto a : axes) {
    require(a < x.rank(), "mean_axes", "axis " + std::to_string(a) + " out of range for " +
                                           shape_string(x.shape()));
    count *= out_shape[a];
    out_shape[a] = 1;
  }
  require(count > 0, "mean_axes", "reducing over an empty axis");
  Tensor<T> out(out_shape);
  auto in_strides = strides_of(x.shape());
  auto out_strides = strides_of(out_shape);
  for (auto a : axes) out_strides[a] = 0;
  const T inv = T(1) / static_cast<T>(count);
  auto xv = x.data();
  auto y = out.data();
  for_each_broadcast(x.shape(), in_strides, out_strides,
                     [&](std::size_t i, std::size_t, std::size_t io) { y[io] += xv[i] * inv; });
  trace::count(x.numel(), 0);
  check_finite(out, "mean_axes");
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle(), in_strides, out_strides, inv] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for_each_broadcast(X->shape, in_strides, out_strides,
                         [&](std::size_t i, std::size_t, std::size_t io) { gx[i] += O->grad[io] * inv; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul",
          "expected rank-2 operands, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul",
          "inner dims differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> bias;
  return linear(a, b, bias);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() >= 1 && weight.rank() == 2, "linear",
          "expected x (...,in) and weight (in,out), got " + shape_string(x.shape()) + " and " +
              shape_string(weight.shape()));
  const std::size_t in = weight.dim(0), outw = weight.dim(1);
  require(x.shape().back() == in, "linear",
          "input width " + std::to_string(x.shape().back()) + " != weight rows " + std::to_string(in));
  if (bias.defined()) {
    require(bias.numel() == outw, "linear",
            "bias has " + std::to_string(bias.numel()) + " entries, expected " + std::to_string(outw));
  }
  Shape out_shape = x.shape();
  out_shape.back() = outw;
  Tensor<T> out(out_shape);
  const std::size_t rows = x.numel() / in;
  const T* xv = x.data().data();
  const T* w = weight.data().data();
  T* y = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y + r * outw;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), yr);
    const T* xr = xv + r * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xr[k];
      const T* wk = w + k * outw;
      for (std::size_t j = 0; j < outw; ++j) yr[j] += xk * wk[j];
    }
  }
  const std::uint64_t macs = static_cast<std::uint64_t>(rows) * in * outw;
  trace::count(2 * macs, macs);
  check_finite(out, "linear");
  if (auto* tape = tape_for<T>({&x, &weight, &bias})) {
    attach(out, tape, [X = x.handle(), W = weight.handle(), Bi = bias.handle(), O = out.handle(), rows,
                       in, outw] {
      if (O->grad.empty()) return;
      const T* g = O->grad.data();
      const T* xv = X->value.data();
      const T* w = W->value.data();
      if (wants_grad(X)) {
        T* gx = grad_of(*X).data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g + r * outw;
          for (std::size_t k = 0; k < in; ++k) {
            const T* wk = w + k * outw;
            T acc = 0;
            for (std::size_t j = 0; j < outw; ++j) acc += gr[j] * wk[j];
            gx[r * in + k] += acc;
          }
        }
      }
      if (wants_grad(W)) {
        T* gw = grad_of(*W).data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g + r * outw;
          const T* xr = xv + r * in;
          for (std::size_t k = 0; k < in; ++k) {
            const T xk = xr[k];
            T* gwk = gw + k * outw;
            for (std::size_t j = 0; j < outw; ++j) gwk[j] += xk * gr[j];
          }
        }
      }
      if (wants_grad(Bi)) {
        T* gb = grad_of(*Bi).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outw; ++j) gb[j] += g[r * outw + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t groups) {
  require(x.rank() == 4, "conv2d", "expected input (B,H,W,C), got " + shape_string(x.shape()));
  require(weight.rank() == 4, "conv2d",
          "expected weight (kh,kw,Cin/groups,Cout), got " + shape_string(weight.shape()));
  require(groups >= 1, "conv2d", "groups must be >= 1");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t kh = weight.dim(0), kw = weight.dim(1), cig = weight.dim(2), Cout = weight.dim(3);
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d", "same padding needs odd kernel, got " +
                                                    std::to_string(kh) + "x" + std::to_string(kw));
  require(Cin % groups == 0 && Cout % groups == 0, "conv2d",
          "channels " + std::to_string(Cin) + "->" + std::to_string(Cout) + " not divisible by groups " +
              std::to_string(groups));
  require(cig == Cin / groups, "conv2d",
          "weight expects " + std::to_string(cig) + " input channels per group, input has " +
              std::to_string(Cin / groups));
  if (bias.defined()) require(bias.numel() == Cout, "conv2d", "bias extent != Cout");
  const std::size_t cog = Cout / groups;
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);

  Tensor<T> out(Shape{B, H, W, Cout});
  const T* xv = x.data().data();
  const T* w = weight.data().data();
  T* y = out.data().data();
  // Visits (output pixel, input pixel, weight tap) triples inside the image.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < H; ++oy)
        for (std::size_t ox = 0; ox < W; ++ox) {
          const std::size_t opix = (b * H + oy) * W + ox;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - ph;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pw;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t ipix = (b * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
              fn(opix, ipix, (ky * kw + kx) * cig * Cout);
            }
          }
        }
  };
  if (bias.defined()) {
    for (std::size_t p = 0; p < B * H * W; ++p) std::copy(bias.data().begin(), bias.data().end(), y + p * Cout);
  }
  for_taps([&](std::size_t opix, std::size_t ipix, std::size_t wtap) {
    T* yo = y + opix * Cout;
    const T* xi = xv + ipix * Cin;
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t ci = 0; ci < cig; ++ci) {
        const T xval = xi[g * cig + ci];
        const T* wr = w + wtap + ci * Cout + g * cog;
        T* yg = yo + g * cog;
        for (std::size_t co = 0; co < cog; ++co) yg[co] += xval * wr[co];
      }
    }
  });
  const std::uint64_t macs = static_cast<std::uint64_t>(kh) * kw * cig * Cout * H * W * B;
  trace::count(2 * macs, macs);
  check_finite(out, "conv2d");
  if (auto* tape = tape_for<T>({&x, &weight, &bias})) {
    attach(out, tape, [X = x.handle(), Wt = weight.handle(), Bi = bias.handle(), O = out.handle(), for_taps,
                       groups, cig, cog, Cin, Cout, B, H, W] {
      if (O->grad.empty()) return;
      const T* g = O->grad.data();
      const T* xv = X->value.data();
      const T* w = Wt->value.data();
      T* gx = wants_grad(X) ? grad_of(*X).data() : nullptr;
      T* gw = wants_grad(Wt) ? grad_of(*Wt).data() : nullptr;
      for_taps([&](std::size_t opix, std::size_t ipix, std::size_t wtap) {
        const T* go = g + opix * Cout;
        const T* xi = xv + ipix * Cin;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const T* gg = go + gi * cog;
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t woff = wtap + ci * Cout + gi * cog;
            if (gx != nullptr) {
              const T* wr = w + woff;
              T acc = 0;
              for (std::size_t co = 0; co < cog; ++co) acc += gg[co] * wr[co];
              gx[ipix * Cin + gi * cig + ci] += acc;
            }
            if (gw != nullptr) {
              const T xval = xi[gi * cig + ci];
              T* gwr = gw + woff;
              for (std::size_t co = 0; co < cog; ++co) gwr[co] += xval * gg[co];
            }
          }
        }
      });
      if (wants_grad(Bi)) {
        T* gb = grad_of(*Bi).data();
        for (std::size_t p = 0; p < B * H * W; ++p)
          for (std::size_t c = 0; c < Cout; ++c) gb[c] += g[p * Cout + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 4, "depthwise_conv2d", "expected input (B,H,W,C), got " + shape_string(x.shape()));
  require(weight.rank() == 3, "depthwise_conv2d",
          "expected weight (kh,kw,C), got " + shape_string(weight.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t kh = weight.dim(0), kw = weight.dim(1);
  require(weight.dim(2) == C, "depthwise_conv2d",
          "weight channels " + std::to_string(weight.dim(2)) + " != input channels " + std::to_string(C));
  require(kh % 2 == 1 && kw % 2 == 1, "depthwise_conv2d", "same padding needs an odd kernel");
  if (bias.defined()) require(bias.numel() == C, "depthwise_conv2d", "bias extent != C");
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);

  auto for_taps = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < H; ++oy)
        for (std::size_t ox = 0; ox < W; ++ox) {
          const std::size_t opix = (b * H + oy) * W + ox;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - ph;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pw;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t ipix = (b * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
              fn(opix, ipix, (ky * kw + kx) * C);
            }
          }
        }
  };

  Tensor<T> out(x.shape());
  const T* xv = x.data().data();
  const T* w = weight.data().data();
  T* y = out.data().data();
  if (bias.defined()) {
    for (std::size_t p = 0; p < B * H * W; ++p) std::copy(bias.data().begin(), bias.data().end(), y + p * C);
  }
  for_taps([&](std::size_t opix, std::size_t ipix, std::size_t wtap) {
    T* yo = y + opix * C;
    const T* xi = xv + ipix * C;
    const T* wr = w + wtap;
    for (std::size_t c = 0; c < C; ++c) yo[c] += xi[c] * wr[c];
  });
  const std::uint64_t macs = static_cast<std::uint64_t>(kh) * kw * C * H * W * B;
  trace::count(2 * macs, macs);
  check_finite(out, "depthwise_conv2d");
  if (auto* tape = tape_for<T>({&x, &weight, &bias})) {
    attach(out, tape, [X = x.handle(), Wt = weight.handle(), Bi = bias.handle(), O = out.handle(), for_taps, C,
                       B, H, W] {
      if (O->grad.empty()) return;
      const T* g = O->grad.data();
      const T* xv = X->value.data();
      const T* w = Wt->value.data();
      T* gx = wants_grad(X) ? grad_of(*X).data() : nullptr;
      T* gw = wants_grad(Wt) ? grad_of(*Wt).data() : nullptr;
      for_taps([&](std::size_t opix, std::size_t ipix, std::size_t wtap) {
        const T* go = g + opix * C;
        if (gx != nullptr) {
          T* gxi = gx + ipix * C;
          const T* wr = w + wtap;
          for (std::size_t c = 0; c < C; ++c) gxi[c] += go[c] * wr[c];
        }
        if (gw != nullptr) {
          const T* xi = xv + ipix * C;
          T* gwr = gw + wtap;
          for (std::size_t c = 0; c < C; ++c) gwr[c] += go[c] * xi[c];
        }
      });
      if (wants_grad(Bi)) {
        T* gb = grad_of(*Bi).data();
        for (std::size_t p = 0; p < B * H * W; ++p)
          for (std::size_t c = 0; c < C; ++c) gb[c] += g[p * C + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> band_conv3(const Tensor<T>& x, const Tensor<T>& weight) {
  require(x.rank() >= 1, "band_conv3", "input must have a channel axis");
  require(weight.numel() == 3, "band_conv3",
          "kernel must have exactly 3 taps, got " + std::to_string(weight.numel()));
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(C, 1);
  Tensor<T> out(x.shape());
  const T* xv = x.data().data();
  const T* w = weight.data().data();
  T* y = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * C;
    T* yr = y + r * C;
    for (std::size_t c = 0; c < C; ++c) {
      T acc = w[1] * xr[c];
      if (c > 0) acc += w[0] * xr[c - 1];
      if (c + 1 < C) acc += w[2] * xr[c + 1];
      yr[c] = acc;
    }
  }
  const std::uint64_t macs = 3 * static_cast<std::uint64_t>(x.numel());
  trace::count(2 * macs, macs);
  check_finite(out, "band_conv3");
  if (auto* tape = tape_for<T>({&x, &weight})) {
    attach(out, tape, [X = x.handle(), Wt = weight.handle(), O = out.handle(), rows, C] {
      if (O->grad.empty()) return;
      const T* g = O->grad.data();
      const T* xv = X->value.data();
      const T* w = Wt->value.data();
      T* gx = wants_grad(X) ? grad_of(*X).data() : nullptr;
      T gw[3] = {0, 0, 0};
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv + r * C;
        const T* gr = g + r * C;
        for (std::size_t c = 0; c < C; ++c) {
          gw[1] += gr[c] * xr[c];
          if (c > 0) gw[0] += gr[c] * xr[c - 1];
          if (c + 1 < C) gw[2] += gr[c] * xr[c + 1];
          if (gx != nullptr) {
            T* gxr = gx + r * C;
            gxr[c] += w[1] * gr[c];
            if (c > 0) gxr[c - 1] += w[0] * gr[c];
            if (c + 1 < C) gxr[c + 1] += w[2] * gr[c];
          }
        }
      }
      if (wants_grad(Wt)) {
        auto gws = grad_of(*Wt);
        for (int k = 0; k < 3; ++k) gws[k] += gw[k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax", "axis " + std::to_string(axis) + " out of range for " +
                                         shape_string(x.shape()));
  const auto s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = xv[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      T z = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(xv[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) y[base + k * s.inner] /= z;
    }
  trace::count(3 * static_cast<std::uint64_t>(x.numel()), 0);
  check_finite(out, "softmax");
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle(), s] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      const auto& y = O->value;
      const auto& g = O->grad;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          T dot = 0;
          for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t j = base + k * s.inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1 && x.shape().back() > 0, "layer_norm", "input needs a non-empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (gamma.defined()) require(gamma.numel() == n, "layer_norm", "gamma extent != normalized width");
  if (beta.defined()) require(beta.numel() == n, "layer_norm", "beta extent != normalized width");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * n;
    T mu = 0;
    for (std::size_t k = 0; k < n; ++k) mu += xr[k];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t k = 0; k < n; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t k = 0; k < n; ++k) {
      const T h = (xr[k] - mu) * rstd[r];
      xhat[r * n + k] = h;
      T v = gamma.defined() ? h * gamma[k] : h;
      if (beta.defined()) v += beta[k];
      y[r * n + k] = v;
    }
  }
  trace::count((gamma.defined() ? 4 : 3) * static_cast<std::uint64_t>(x.numel()), 0);
  check_finite(out, "layer_norm");
  if (auto* tape = tape_for<T>({&x, &gamma, &beta})) {
    attach(out, tape, [X = x.handle(), G = gamma.handle(), Be = beta.handle(), O = out.handle(),
                       xhat = std::move(xhat), rstd = std::move(rstd), rows, n] {
      if (O->grad.empty()) return;
      const auto& g = O->grad;
      if (wants_grad(X)) {
        auto gx = grad_of(*X);
        std::vector<T> gh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T m1 = 0, m2 = 0;
          for (std::size_t k = 0; k < n; ++k) {
            gh[k] = G ? g[r * n + k] * G->value[k] : g[r * n + k];
            m1 += gh[k];
            m2 += gh[k] * xhat[r * n + k];
          }
          m1 /= static_cast<T>(n);
          m2 /= static_cast<T>(n);
          for (std::size_t k = 0; k < n; ++k) gx[r * n + k] += rstd[r] * (gh[k] - m1 - xhat[r * n + k] * m2);
        }
      }
      if (wants_grad(G)) {
        auto gg = grad_of(*G);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < n; ++k) gg[k] += g[r * n + k] * xhat[r * n + k];
      }
      if (wants_grad(Be)) {
        auto gb = grad_of(*Be);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < n; ++k) gb[k] += g[r * n + k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum, T eps) {
  require(x.rank() >= 2, "batch_norm", "expected (..., C) with at least one batch axis, got " +
                                           shape_string(x.shape()));
  const std::size_t C = x.shape().back();
  const std::size_t M = x.numel() / C;
  require(M > 0, "batch_norm", "empty batch");
  require(running_mean.numel() == C && running_var.numel() == C, "batch_norm",
          "running statistics extent != channel count " + std::to_string(C));
  if (gamma.defined()) require(gamma.numel() == C, "batch_norm", "gamma extent != C");
  if (beta.defined()) require(beta.numel() == C, "batch_norm", "beta extent != C");

  std::vector<T> mu(C, 0), var(C, 0), rstd(C);
  auto xv = x.data();
  if (training) {
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c) mu[c] += xv[m * C + c];
    for (auto& v : mu) v /= static_cast<T>(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c) {
        const T d = xv[m * C + c] - mu[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= static_cast<T>(M);
    const T unbias = M > 1 ? static_cast<T>(M) / static_cast<T>(M - 1) : T(1);
    for (std::size_t c = 0; c < C; ++c) {
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu[c];
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }
  for (std::size_t c = 0; c < C; ++c) rstd[c] = T(1) / std::sqrt(var[c] + eps);

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  auto y = out.data();
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = m * C + c;
      xhat[i] = (xv[i] - mu[c]) * rstd[c];
      T v = gamma.defined() ? xhat[i] * gamma[c] : xhat[i];
      if (beta.defined()) v += beta[c];
      y[i] = v;
    }
  trace::count((training ? 4 : 2) * static_cast<std::uint64_t>(x.numel()), 0);
  check_finite(out, "batch_norm");
  if (auto* tape = tape_for<T>({&x, &gamma, &beta})) {
    attach(out, tape, [X = x.handle(), G = gamma.handle(), Be = beta.handle(), O = out.handle(),
                       xhat = std::move(xhat), rstd = std::move(rstd), M, C, training] {
      if (O->grad.empty()) return;
      const auto& g = O->grad;
      if (wants_grad(X)) {
        auto gx = grad_of(*X);
        std::vector<T> m1(C, 0), m2(C, 0);
        auto gh = [&](std::size_t i, std::size_t c) { return G ? g[i] * G->value[c] : g[i]; };
        if (training) {
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = m * C + c;
              m1[c] += gh(i, c);
              m2[c] += gh(i, c) * xhat[i];
            }
          for (std::size_t c = 0; c < C; ++c) {
            m1[c] /= static_cast<T>(M);
            m2[c] /= static_cast<T>(M);
          }
        }
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = m * C + c;
            gx[i] += rstd[c] * (gh(i, c) - m1[c] - xhat[i] * m2[c]);
          }
      }
      if (wants_grad(G)) {
        auto gg = grad_of(*G);
        for (std::size_t i = 0; i < g.size(); ++i) gg[i % C] += g[i] * xhat[i];
      }
      if (wants_grad(Be)) {
        auto gb = grad_of(*Be);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % C] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no operands");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat", "axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat", "rank mismatch " + shape_string(p.shape()) + " vs " +
                                                    shape_string(first));
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) {
        require(p.dim(d) == first[d], "concat",
                "dimension " + std::to_string(d) + " mismatch " + shape_string(p.shape()) + " vs " +
                    shape_string(first));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  const auto s = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  auto y = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.begin() + o * ext * s.inner, ext * s.inner,
                  y.begin() + (o * s.extent + offset) * s.inner);
    offset += ext;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  Tape<T>* tape = any ? Tape<T>::active() : nullptr;
  if (tape != nullptr) {
    std::vector<std::shared_ptr<TensorStorage<T>>> handles;
    for (const auto& p : parts) handles.push_back(p.handle());
    attach(out, tape, [handles, offsets, O = out.handle(), s, axis] {
      if (O->grad.empty()) return;
      for (std::size_t k = 0; k < handles.size(); ++k) {
        if (!wants_grad(handles[k])) continue;
        auto gp = grad_of(*handles[k]);
        const std::size_t ext = handles[k]->shape[axis];
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < ext * s.inner; ++j)
            gp[o * ext * s.inner + j] += O->grad[(o * s.extent + offsets[k]) * s.inner + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "flip", "axis " + std::to_string(axis) + " out of range for " +
                                      shape_string(x.shape()));
  const auto s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto y = out.data();
  auto index = [s](std::size_t o, std::size_t k, std::size_t i) { return (o * s.extent + k) * s.inner + i; };
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) y[index(o, s.extent - 1 - k, i)] = xv[index(o, k, i)];
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle(), s, index] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) gx[index(o, k, i)] += O->grad[index(o, s.extent - 1 - k, i)];
    });
  }
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.rank(), "narrow", "axis out of range for " + shape_string(x.shape()));
  require(start + length <= x.dim(axis), "narrow",
          "range [" + std::to_string(start) + "," + std::to_string(start + length) + ") exceeds extent " +
              std::to_string(x.dim(axis)));
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + (o * s.extent + start) * s.inner, length * s.inner,
                y.begin() + o * length * s.inner);
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle(), s, start, length] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < length * s.inner; ++j)
          gx[(o * s.extent + start) * s.inner + j] += O->grad[o * length * s.inner + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape",
          "cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = tape_for<T>({&x})) {
    attach(out, tape, [X = x.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      auto gx = grad_of(*X);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += O->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy", "expected logits (B,K), got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  require(labels.size() == B, "cross_entropy",
          std::to_string(labels.size()) + " labels for a batch of " + std::to_string(B));
  require(B > 0 && K > 0, "cross_entropy", "empty logits");
  std::vector<T> prob(B * K);
  T total = 0;
  auto z = logits.data();
  for (std::size_t b = 0; b < B; ++b) {
    require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < K, "cross_entropy",
            "label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    const T* zr = z.data() + b * K;
    const T mx = *std::max_element(zr, zr + K);
    T se = 0;
    for (std::size_t k = 0; k < K; ++k) {
      prob[b * K + k] = std::exp(zr[k] - mx);
      se += prob[b * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) prob[b * K + k] /= se;
    total += mx + std::log(se) - zr[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(B));
  trace::count(3 * static_cast<std::uint64_t>(logits.numel()), 0);
  check_finite(out, "cross_entropy");
  if (auto* tape = tape_for<T>({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    attach(out, tape, [Z = logits.handle(), O = out.handle(), prob = std::move(prob), lab = std::move(lab), B, K] {
      if (O->grad.empty()) return;
      auto gz = grad_of(*Z);
      const T s = O->grad[0] / static_cast<T>(B);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
          const T target = static_cast<int>(k) == lab[b] ? T(1) : T(0);
          gz[b * K + k] += s * (prob[b * K + k] - target);
        }
    });
  }
  return out;
}

#define DUALMAMBA_INSTANTIATE_OPS(T)                                                                      \
  template void check_finite<T>(const Tensor<T>&, const char*);                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                           \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                          \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                          \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                       \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                                      \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                           \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                          \
  template Tensor<T> mean_axes<T>(const Tensor<T>&, const std::vector<std::size_t>&);                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);       \
  template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> band_conv3<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,     \
                                   Tensor<T>&, bool, T, T);                                              \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                              \
  template Tensor<T> flip<T>(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> narrow<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);

DUALMAMBA_INSTANTIATE_OPS(float)
DUALMAMBA_INSTANTIATE_OPS(double)

}  // namespace dualmamba
