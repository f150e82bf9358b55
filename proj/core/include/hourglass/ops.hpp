#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hourglass/graph.hpp"

namespace hourglass {

// Additive mask value for disallowed attention entries.
inline constexpr double kMaskValue = -1e9;

// ---- linear algebra ----------------------------------------------------

// [m,p] x [p,n] -> [m,n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// Projects the last axis: x[..., in] * w[in, out] (+ bias[out]). Leading
// axes beyond the last two are processed one slab at a time, so the result
// for one sequence never depends on what else is in the batch.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> bias = std::nullopt);

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  return linear(x, w, std::optional<Var<T>>(bias));
}

// ---- elementwise -------------------------------------------------------
// Binary ops broadcast `b` when it is a scalar or when its shape equals a
// trailing suffix of `a`'s shape. Anything else is a DimensionError.

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T c);
// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Var<T> gelu_fast(Var<T> x);
template <typename T>
Var<T> exp(Var<T> x);
template <typename T>
Var<T> log(Var<T> x);

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);

template <typename T>
T gelu_fast_value(T x);

// ---- normalizers -------------------------------------------------------

struct SoftmaxStatus {
  std::size_t fully_masked_rows = 0;
};

// Softmax over the last axis with an optional additive mask (broadcast like
// binary ops). Rows whose every entry is masked return zeros and are counted
// in `status`.
template <typename T>
Var<T> softmax_lastaxis(Var<T> x, const Tensor<T>* mask = nullptr, SoftmaxStatus* status = nullptr);

template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-6));

// ---- index remapping ---------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
// Swaps the last two axes.
template <typename T>
Var<T> transpose(Var<T> x);
// [B, L, H*dh] -> [B, H, L, dh]
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads);
// [B, H, L, dh] -> [B, L, H*dh]
template <typename T>
Var<T> merge_heads(Var<T> x);
// Concatenates along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
// Rows `start .. start+count` of the first axis.
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t start, std::size_t count);
// table[V, d], indices -> [n, d]. Backward scatter-adds into the table.
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> indices);

// ---- sequence ops on [B, L, d] -----------------------------------------

// Position p takes former p - s; the first s positions become zero vectors.
template <typename T>
Var<T> shift_right(Var<T> x, std::size_t s);
// Mean over non-overlapping groups of k positions: [B, L, d] -> [B, L/k, d].
template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t k);
// Position p of the result copies x[floor(p/k)]: [B, L/k, d] -> [B, L, d].
template <typename T>
Var<T> repeat_upsample(Var<T> x, std::size_t k);

// ---- stochastic --------------------------------------------------------

template <typename T>
Var<T> dropout(Var<T> x, T rate, std::mt19937_64& rng, bool training);

// ---- attention ---------------------------------------------------------

// Query i sits at absolute position q_stride*i + q_offset, key j at
// k_stride*j. Their relative offset is delta = qpos - kpos; key j is visible
// to query i iff 0 <= delta (and delta < window when window > 0).
struct AttentionGeometry {
  std::size_t q_stride = 1;
  std::size_t q_offset = 0;
  std::size_t k_stride = 1;
  std::size_t window = 0;

  std::int64_t qpos(std::size_t i) const { return static_cast<std::int64_t>(q_stride * i + q_offset); }
  std::int64_t kpos(std::size_t j) const { return static_cast<std::int64_t>(k_stride * j); }
  bool visible(std::int64_t delta) const {
    return delta >= 0 && (window == 0 || delta < static_cast<std::int64_t>(window));
  }
  // Relative embeddings needed for `lq` queries: offsets 0 .. qpos(lq-1).
  std::size_t rel_span(std::size_t lq) const { return q_stride * (lq - 1) + q_offset + 1; }
};

// Multi-head attention with relative-position scores:
//   s(i,j) = ((q_i + u) . k_j + (q_i + pb) . r_{delta(i,j)}) / sqrt(dh)
// q: [B, Lq, H*dh], k, v: [B, Lk, H*dh], r: [rel_span, H*dh] (row delta
// holds the projected embedding of offset delta), u, pb: [H, dh].
// Disallowed entries get weight exactly 0, the value exp(kMaskValue - max)
// underflows to. Returns the attention-weighted values [B, Lq, H*dh]
// (before any output projection).
template <typename T>
Var<T> rel_attention_core(Var<T> q, Var<T> k, Var<T> v, Var<T> r, Var<T> u, Var<T> pb,
                          std::size_t heads, const AttentionGeometry& geom);

// Forward-only variant of rel_attention_core that also returns the
// normalized weights [B, H, Lq, Lk]; used by tests and diagnostics.
template <typename T>
Tensor<T> rel_attention_weights(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& r,
                                const Tensor<T>& u, const Tensor<T>& pb, std::size_t heads,
                                const AttentionGeometry& geom);

// ---- losses ------------------------------------------------------------

// Mean negative log-likelihood (nats) of `targets` under softmax(logits)
// over positions with mask != 0 (all positions when mask is empty).
// logits: [..., V]; targets and mask hold one entry per logits row.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask = {});

}  // namespace hourglass
