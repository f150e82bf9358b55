#include "hourglass/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "hourglass/flop_counter.hpp"

namespace hourglass {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
CMatMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
  }
}

void require_same_graph(const void* a, const void* b) {
  if (a != b) throw UsageError("operands belong to different graphs");
}

// Number of elements of `a` sharing one element of `b` under scalar or
// trailing-suffix broadcast; throws when shapes are incompatible.
std::size_t broadcast_period(const Shape& a, const Shape& b) {
  const std::size_t nb = numel(b);
  if (nb == 1) return 1;
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return nb;
  throw DimensionError("cannot broadcast " + shape_str(b) + " against " + shape_str(a));
}

enum class BinaryKind { add, sub, mul };

// Calls f(base) for base = 0, period, 2*period, ... < n.
template <typename T, typename F>
void for_blocks(std::size_t n, std::size_t period, F f) {
  for (std::size_t base = 0; base < n; base += period) f(base);
}

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, BinaryKind kind) {
  require_same_graph(&a.graph(), &b.graph());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  broadcast_period(av.shape(), bv.shape());
  const std::size_t n = av.size();
  const std::size_t m = bv.size();  // b repeats every m elements of a
  Tensor<T> out(av.shape());
  const T* pa = av.ptr();
  const T* pb = bv.ptr();
  T* po = out.ptr();
  for_blocks<T>(n, m, [&](std::size_t base) {
    switch (kind) {
      case BinaryKind::add:
        for (std::size_t j = 0; j < m; ++j) po[base + j] = pa[base + j] + pb[j];
        break;
      case BinaryKind::sub:
        for (std::size_t j = 0; j < m; ++j) po[base + j] = pa[base + j] - pb[j];
        break;
      case BinaryKind::mul:
        for (std::size_t j = 0; j < m; ++j) po[base + j] = pa[base + j] * pb[j];
        break;
    }
  });
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib, m, kind](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    const T* pg = go.ptr();
    const std::size_t n = go.size();
    const T* pa = g.value(ia).ptr();
    const T* pb = g.value(ib).ptr();
    if (Tensor<T>* ga = g.grad_sink(ia)) {
      T* d = ga->ptr();
      if (kind == BinaryKind::mul) {
        for_blocks<T>(n, m, [&](std::size_t base) {
          for (std::size_t j = 0; j < m; ++j) d[base + j] += pg[base + j] * pb[j];
        });
      } else {
        for (std::size_t i = 0; i < n; ++i) d[i] += pg[i];
      }
    }
    if (Tensor<T>* gb = g.grad_sink(ib)) {
      T* d = gb->ptr();
      for_blocks<T>(n, m, [&](std::size_t base) {
        switch (kind) {
          case BinaryKind::add:
            for (std::size_t j = 0; j < m; ++j) d[j] += pg[base + j];
            break;
          case BinaryKind::sub:
            for (std::size_t j = 0; j < m; ++j) d[j] -= pg[base + j];
            break;
          case BinaryKind::mul:
            for (std::size_t j = 0; j < m; ++j) d[j] += pg[base + j] * pa[base + j];
            break;
        }
      });
    }
  });
}

// Applies f pointwise; df(x, y) is the local derivative given input and output.
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, df](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    const Tensor<T>& xv = g.value(ix);
    const Tensor<T>& yv = g.value(self);
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * df(xv[i], yv[i]);
  });
}

// Shared pass-through backward for pure index remaps: out[i] = in[src[i]].
template <typename T>
Var<T> remap(Var<T> x, Shape shape, std::vector<std::size_t> src) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, src = std::move(src)](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t i = 0; i < src.size(); ++i) (*gx)[src[i]] += go[i];
  });
}

template <typename T>
constexpr T gelu_c() {
  return static_cast<T>(0.79788456080286535587989211986876);  // sqrt(2/pi)
}

}  // namespace

// ---- linear algebra ----------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_graph(&a.graph(), &b.graph());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t m = sa[0], p = sa[1], n = sb[1];
  Tensor<T> out(Shape{m, n});
  as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, p) * as_matrix(b.value(), p, n);
  FlopCounter::add(2ull * m * p * n);
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib, m, p, n](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    if (Tensor<T>* ga = g.grad_sink(ia)) {
      as_matrix(*ga, m, p).noalias() += as_matrix(go, m, n) * as_matrix(g.value(ib), p, n).transpose();
    }
    if (Tensor<T>* gb = g.grad_sink(ib)) {
      as_matrix(*gb, p, n).noalias() += as_matrix(g.value(ia), m, p).transpose() * as_matrix(go, m, n);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> bias) {
  require_same_graph(&x.graph(), &w.graph());
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.size() != 2 || sx.empty() || sx.back() != sw[0]) {
    throw DimensionError("linear shape mismatch: " + shape_str(sx) + " x " + shape_str(sw));
  }
  const std::size_t in = sw[0], outd = sw[1];
  const std::size_t rows = x.value().size() / in;
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != outd)) {
    throw DimensionError("linear bias shape " + shape_str(bias->shape()) + " does not match " +
                         std::to_string(outd) + " outputs");
  }
  const std::size_t slab = sx.size() >= 3 ? sx[sx.size() - 2] : rows;
  Shape so = sx;
  so.back() = outd;
  Tensor<T> out(so);
  const auto wm = as_matrix(w.value(), in, outd);
  for (std::size_t r0 = 0; r0 < rows; r0 += slab) {
    MatMap<T> om(out.ptr() + r0 * outd, static_cast<Eigen::Index>(slab), static_cast<Eigen::Index>(outd));
    CMatMap<T> xm(x.value().ptr() + r0 * in, static_cast<Eigen::Index>(slab), static_cast<Eigen::Index>(in));
    om.noalias() = xm * wm;
  }
  FlopCounter::add(2ull * rows * in * outd);
  std::vector<NodeId> inputs{x.id(), w.id()};
  if (bias) {
    const Tensor<T>& bv = bias->value();
    for (std::size_t r = 0; r < rows; ++r) {
      T* o = out.ptr() + r * outd;
      for (std::size_t c = 0; c < outd; ++c) o[c] += bv[c];
    }
    FlopCounter::add(rows * outd);
    inputs.push_back(bias->id());
  }
  const NodeId ix = x.id(), iw = w.id();
  const std::optional<NodeId> ib = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return x.graph().record(std::move(out), std::move(inputs),
                          [ix, iw, ib, rows, in, outd](Graph<T>& g, NodeId self) {
                            const Tensor<T>& go = *g.grad(Var<T>(&g, self));
                            const auto gm = as_matrix(go, rows, outd);
                            if (Tensor<T>* gx = g.grad_sink(ix)) {
                              as_matrix(*gx, rows, in).noalias() += gm * as_matrix(g.value(iw), in, outd).transpose();
                            }
                            if (Tensor<T>* gw = g.grad_sink(iw)) {
                              as_matrix(*gw, in, outd).noalias() += as_matrix(g.value(ix), rows, in).transpose() * gm;
                            }
                            if (ib) {
                              if (Tensor<T>* gb = g.grad_sink(*ib)) {
                                for (std::size_t r = 0; r < rows; ++r) {
                                  const T* gr = go.ptr() + r * outd;
                                  for (std::size_t c = 0; c < outd; ++c) (*gb)[c] += gr[c];
                                }
                              }
                            }
                          });
}

// ---- elementwise -------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::add);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::sub);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::mul);
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
T gelu_fast_value(T x) {
  const T u = gelu_c<T>() * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
Var<T> gelu_fast(Var<T> x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Tensor<T>& xv = x.value();
  const Eigen::Index n = static_cast<Eigen::Index>(xv.size());
  const Eigen::Map<const Arr> xa(xv.ptr(), n);
  Tensor<T> th(xv.shape());
  Eigen::Map<Arr> ta(th.ptr(), n);
  ta = (gelu_c<T>() * (xa + T(0.044715) * xa.cube())).tanh();
  Tensor<T> out(xv.shape());
  Eigen::Map<Arr>(out.ptr(), n) = T(0.5) * xa * (T(1) + ta);
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, n, th = std::move(th)](Graph<T>& g, NodeId self) {
    const Eigen::Map<const Arr> go(g.grad(Var<T>(&g, self))->ptr(), n);
    const Eigen::Map<const Arr> xa(g.value(ix).ptr(), n);
    const Eigen::Map<const Arr> ta(th.ptr(), n);
    Eigen::Map<Arr> gx(g.grad_sink(ix)->ptr(), n);
    const Arr du = gelu_c<T>() * (T(1) + T(3 * 0.044715) * xa.square());
    gx += go * (T(0.5) * (T(1) + ta) + T(0.5) * xa * (T(1) - ta.square()) * du);
  });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x) {
  return unary<T>(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  const NodeId ix = x.id();
  return x.graph().record(Tensor<T>::scalar(s), {ix}, [ix](Graph<T>& g, NodeId self) {
    const T go = (*g.grad(Var<T>(&g, self)))[0];
    Tensor<T>* gx = g.grad_sink(ix);
    for (auto& v : gx->data()) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

// ---- normalizers -------------------------------------------------------

template <typename T>
Var<T> softmax_lastaxis(Var<T> x, const Tensor<T>* mask, SoftmaxStatus* status) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.last();
  const std::size_t rows = xv.rows();
  const std::size_t period = mask ? broadcast_period(xv.shape(), mask->shape()) : 0;
  Tensor<T> out(xv.shape());
  std::size_t fully_masked = 0;
  std::vector<T> z(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * n;
    T* yr = out.ptr() + r * n;
    bool any_open = mask == nullptr;
    for (std::size_t c = 0; c < n; ++c) {
      T m = 0;
      if (mask) {
        m = (*mask)[period == 1 ? 0 : (r * n + c) % period];
        if (m > static_cast<T>(kMaskValue)) any_open = true;
      }
      z[c] = xr[c] + m;
    }
    if (!any_open) {
      ++fully_masked;
      continue;  // row stays zero
    }
    const T mx = *std::max_element(z.begin(), z.end());
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) {
      yr[c] = std::exp(z[c] - mx);
      s += yr[c];
    }
    for (std::size_t c = 0; c < n; ++c) yr[c] /= s;
  }
  if (status) status->fully_masked_rows = fully_masked;
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, n, rows](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    const Tensor<T>& y = g.value(self);
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = go.ptr() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
      T* dr = gx->ptr() + r * n;
      for (std::size_t c = 0; c < n; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.last();
  const std::size_t rows = xv.rows();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layernorm gain/bias must have " + std::to_string(d) + " entries");
  }
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(rows);
  const T* gv = gain.value().ptr();
  const T* bv = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    T* hr = xhat.ptr() + r * d;
    T* yr = out.ptr() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mu) * rs;
      yr[c] = hr[c] * gv[c] + bv[c];
    }
  }
  const NodeId ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, NodeId self) {
        const Tensor<T>& go = *g.grad(Var<T>(&g, self));
        const T* gv = g.value(ig).ptr();
        if (Tensor<T>* gx = g.grad_sink(ix)) {
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = go.ptr() + r * d;
            const T* hr = xhat.ptr() + r * d;
            T m1 = 0, m2 = 0;
            for (std::size_t c = 0; c < d; ++c) {
              dh[c] = gr[c] * gv[c];
              m1 += dh[c];
              m2 += dh[c] * hr[c];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            T* xr = gx->ptr() + r * d;
            for (std::size_t c = 0; c < d; ++c) xr[c] += rstd[r] * (dh[c] - m1 - hr[c] * m2);
          }
        }
        Tensor<T>* gg = g.grad_sink(ig);
        Tensor<T>* gb = g.grad_sink(ib);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = go.ptr() + r * d;
          const T* hr = xhat.ptr() + r * d;
          for (std::size_t c = 0; c < d; ++c) {
            if (gg) (*gg)[c] += gr[c] * hr[c];
            if (gb) (*gb)[c] += gr[c];
          }
        }
      });
}

// ---- index remapping ---------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
  });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = x.value().size() / (r * c);
  Shape so = s;
  std::swap(so[so.size() - 2], so.back());
  std::vector<std::size_t> src(x.value().size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < r; ++j) src[b * r * c + i * r + j] = b * r * c + j * c + i;
  return remap(x, std::move(so), std::move(src));
}

template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  require_rank(x.shape(), 3, "split_heads");
  const std::size_t B = x.shape()[0], L = x.shape()[1], D = x.shape()[2];
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("split_heads: " + std::to_string(D) + " not divisible by " + std::to_string(heads));
  }
  const std::size_t dh = D / heads;
  std::vector<std::size_t> src(x.value().size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t e = 0; e < dh; ++e) src[o++] = (b * L + l) * D + h * dh + e;
  return remap(x, Shape{B, heads, L, dh}, std::move(src));
}

template <typename T>
Var<T> merge_heads(Var<T> x) {
  require_rank(x.shape(), 4, "merge_heads");
  const std::size_t B = x.shape()[0], H = x.shape()[1], L = x.shape()[2], dh = x.shape()[3];
  std::vector<std::size_t> src(x.value().size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t e = 0; e < dh; ++e) src[o++] = ((b * H + h) * L + l) * dh + e;
  return remap(x, Shape{B, L, H * dh}, std::move(src));
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat axis out of range for " + shape_str(s0));
  Shape so = s0;
  so[axis] = 0;
  for (const auto& p : parts) {
    require_same_graph(&p.graph(), &parts[0].graph());
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat shape mismatch: " + shape_str(s) + " vs " + shape_str(s0));
    so[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  Tensor<T> out(so);
  std::vector<NodeId> ids;
  std::vector<std::size_t> inner;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    inner.push_back(p.value().size() / outer);
  }
  const std::size_t row = numel(so) / outer;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].value().ptr() + o * inner[k];
      std::copy(src, src + inner[k], out.ptr() + off);
      off += inner[k];
    }
  }
  return parts[0].graph().record(std::move(out), ids, [ids, inner, outer, row](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    std::size_t col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor<T>* gk = g.grad_sink(ids[k])) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = go.ptr() + o * row + col;
          T* dst = gk->ptr() + o * inner[k];
          for (std::size_t i = 0; i < inner[k]; ++i) dst[i] += src[i];
        }
      }
      col += inner[k];
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t start, std::size_t count) {
  const Shape& s = x.shape();
  if (s.empty() || count == 0 || start + count > s[0]) {
    throw IndexError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(s));
  }
  const std::size_t row = x.value().size() / s[0];
  Shape so = s;
  so[0] = count;
  std::vector<std::size_t> src(count * row);
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = start * row + i;
  return remap(x, std::move(so), std::move(src));
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> indices) {
  require_rank(table.shape(), 2, "gather_rows");
  const std::size_t V = table.shape()[0], d = table.shape()[1];
  if (indices.empty()) throw UsageError("gather_rows with no indices");
  std::vector<std::size_t> src(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto id = indices[i];
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw IndexError("gather index " + std::to_string(id) + " out of range [0, " + std::to_string(V) + ")");
    }
    for (std::size_t c = 0; c < d; ++c) src[i * d + c] = static_cast<std::size_t>(id) * d + c;
  }
  return remap(table, Shape{indices.size(), d}, std::move(src));
}

// ---- sequence ops ------------------------------------------------------

template <typename T>
Var<T> shift_right(Var<T> x, std::size_t s) {
  require_rank(x.shape(), 3, "shift_right");
  const std::size_t B = x.shape()[0], L = x.shape()[1], d = x.shape()[2];
  if (s >= L) {
    throw UsageError("shift_right by " + std::to_string(s) + " needs sequence length > shift, got " +
                     std::to_string(L));
  }
  const Tensor<T>& xv = x.value();
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = xv.ptr() + b * L * d;
    std::copy(src, src + (L - s) * d, out.ptr() + (b * L + s) * d);
  }
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, B, L, d, s](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t b = 0; b < B; ++b) {
      const T* src = go.ptr() + (b * L + s) * d;
      T* dst = gx->ptr() + b * L * d;
      for (std::size_t i = 0; i < (L - s) * d; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t k) {
  require_rank(x.shape(), 3, "avg_pool");
  const std::size_t B = x.shape()[0], L = x.shape()[1], d = x.shape()[2];
  if (k == 0 || L % k != 0) {
    throw UsageError("avg_pool: sequence length " + std::to_string(L) + " not divisible by factor " +
                     std::to_string(k));
  }
  const std::size_t G = L / k;
  const T inv = T(1) / static_cast<T>(k);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(Shape{B, G, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t gi = 0; gi < G; ++gi) {
      T* o = out.ptr() + (b * G + gi) * d;
      for (std::size_t j = 0; j < k; ++j) {
        const T* src = xv.ptr() + (b * L + gi * k + j) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
      }
      for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
    }
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, B, L, d, k, G, inv](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < L; ++p) {
        const T* src = go.ptr() + (b * G + p / k) * d;
        T* dst = gx->ptr() + (b * L + p) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c] * inv;
      }
  });
}

template <typename T>
Var<T> repeat_upsample(Var<T> x, std::size_t k) {
  require_rank(x.shape(), 3, "repeat_upsample");
  if (k == 0) throw UsageError("repeat_upsample factor must be positive");
  const std::size_t B = x.shape()[0], G = x.shape()[1], d = x.shape()[2];
  const std::size_t L = G * k;
  std::vector<std::size_t> src(B * L * d);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < L; ++p)
      for (std::size_t c = 0; c < d; ++c) src[(b * L + p) * d + c] = (b * G + p / k) * d + c;
  return remap(x, Shape{B, L, d}, std::move(src));
}

// ---- stochastic --------------------------------------------------------

template <typename T>
Var<T> dropout(Var<T> x, T rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= T(0) && rate < T(1))) throw UsageError("dropout rate must lie in [0, 1)");
  if (!training || rate == T(0)) return x;
  const Tensor<T>& xv = x.value();
  const T keep_scale = T(1) / (T(1) - rate);
  Tensor<T> mask(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    // 53 random bits -> uniform [0, 1); independent of <random> distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  const NodeId ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, mask = std::move(mask)](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    Tensor<T>* gx = g.grad_sink(ix);
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * mask[i];
  });
}

// ---- losses ------------------------------------------------------------

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  const Tensor<T>& lv = logits.value();
  const std::size_t V = lv.last();
  const std::size_t rows = lv.rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " logits rows");
  }
  if (!mask.empty() && mask.size() != rows) {
    throw DimensionError("cross_entropy: mask size " + std::to_string(mask.size()) + " != " + std::to_string(rows));
  }
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) count += mask.empty() || mask[r] != 0;
  if (count == 0) throw UsageError("cross_entropy: loss mask selects no positions");

  Tensor<T> probs(lv.shape());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = lv.ptr() + r * V;
    T* pr = probs.ptr() + r * V;
    const T mx = *std::max_element(x, x + V);
    T s = 0;
    for (std::size_t c = 0; c < V; ++c) {
      pr[c] = std::exp(x[c] - mx);
      s += pr[c];
    }
    for (std::size_t c = 0; c < V; ++c) pr[c] /= s;
    if (!mask.empty() && mask[r] == 0) continue;
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("target " + std::to_string(t) + " out of range [0, " + std::to_string(V) + ")");
    }
    total += (mx + std::log(s)) - x[t];
  }
  const T inv = T(1) / static_cast<T>(count);
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  const NodeId il = logits.id();
  return logits.graph().record(
      Tensor<T>::scalar(total * inv), {il},
      [il, V, rows, inv, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk)](Graph<T>& g, NodeId self) {
        const T go = (*g.grad(Var<T>(&g, self)))[0] * inv;
        Tensor<T>* gl = g.grad_sink(il);
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mk.empty() && mk[r] == 0) continue;
          const T* pr = probs.ptr() + r * V;
          T* dr = gl->ptr() + r * V;
          for (std::size_t c = 0; c < V; ++c) dr[c] += go * pr[c];
          dr[tg[r]] -= go;
        }
      });
}

#define HOURGLASS_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                             \
  template Var<T> linear<T>(Var<T>, Var<T>, std::optional<Var<T>>);                                      \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                \
  template Var<T> scale<T>(Var<T>, T);                                                                   \
  template T gelu_fast_value<T>(T);                                                                      \
  template Var<T> gelu_fast<T>(Var<T>);                                                                  \
  template Var<T> exp<T>(Var<T>);                                                                        \
  template Var<T> log<T>(Var<T>);                                                                        \
  template Var<T> sum<T>(Var<T>);                                                                        \
  template Var<T> mean<T>(Var<T>);                                                                       \
  template Var<T> softmax_lastaxis<T>(Var<T>, const Tensor<T>*, SoftmaxStatus*);                          \
  template Var<T> layernorm<T>(Var<T>, Var<T>, Var<T>, T);                                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                                             \
  template Var<T> transpose<T>(Var<T>);                                                                  \
  template Var<T> split_heads<T>(Var<T>, std::size_t);                                                   \
  template Var<T> merge_heads<T>(Var<T>);                                                                \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                                       \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                                      \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::int32_t>);                                 \
  template Var<T> shift_right<T>(Var<T>, std::size_t);                                                   \
  template Var<T> avg_pool<T>(Var<T>, std::size_t);                                                      \
  template Var<T> repeat_upsample<T>(Var<T>, std::size_t);                                               \
  template Var<T> dropout<T>(Var<T>, T, std::mt19937_64&, bool);                                         \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const std::int32_t>, std::span<const std::uint8_t>);

HOURGLASS_INSTANTIATE_OPS(float)
HOURGLASS_INSTANTIATE_OPS(double)

}  // namespace hourglass
