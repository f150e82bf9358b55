#pragma once

#include <string>
#include <string_view>

#include "hourglass/nn.hpp"

namespace hourglass {

enum class ShortenMethod { avg_pool, linear_pool, attn_pool_avg, attn_pool_linear };
enum class UpsampleMethod { repeat, linear, attn_identityU, attn_linearU };

ShortenMethod parse_shorten_method(std::string_view name);
UpsampleMethod parse_upsample_method(std::string_view name);
std::string to_string(ShortenMethod m);
std::string to_string(UpsampleMethod m);

inline bool is_attention(ShortenMethod m) {
  return m == ShortenMethod::attn_pool_avg || m == ShortenMethod::attn_pool_linear;
}
inline bool is_attention(UpsampleMethod m) {
  return m == UpsampleMethod::attn_identityU || m == UpsampleMethod::attn_linearU;
}
// True when the method owns parameters whose shape depends on the factor.
inline bool factor_parametric(ShortenMethod m) {
  return m == ShortenMethod::linear_pool || m == ShortenMethod::attn_pool_linear;
}
inline bool factor_parametric(UpsampleMethod m) {
  return m == UpsampleMethod::linear || m == UpsampleMethod::attn_linearU;
}

struct ShortenSpec {
  ShortenMethod method = ShortenMethod::avg_pool;
  std::size_t factor = 2;
};

struct UpsampleSpec {
  UpsampleMethod method = UpsampleMethod::repeat;
  std::size_t factor = 2;
};

// Groups of k positions flattened to k*d features, projected back to d:
// [B, L, d] x W[k*d, d] -> [B, L/k, d].
template <typename T>
Var<T> linear_pool(Var<T> x, std::size_t k, Var<T> w);

// Each shortened vector projected to k*d features and unfolded into k
// positions: [B, L/k, d] x W[d, k*d] -> [B, L, d].
template <typename T>
Var<T> linear_upsample(Var<T> x, std::size_t k, Var<T> w);

// Pre-norm cross-attention block: z = q + Attn(LN(q), LN(kv)), then
// z + FF(LN(z)).
template <typename T>
struct CrossBlock {
  LayerNorm<T> ln_q;
  LayerNorm<T> ln_kv;
  RelAttention<T> attn;
  LayerNorm<T> ln_ff;
  FeedForward<T> ff;

  static CrossBlock make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg);
  Var<T> operator()(Var<T> q, Var<T> kv, Var<T> rel_table, const AttentionGeometry& geom,
                    const LayerContext<T>& ctx) const;
};

// Geometry of the block-causal masks. Pooling: shortened query g may see
// (shifted) full-resolution key p iff floor(p/k) <= g. Upsampling:
// full-resolution query p may see shortened key g iff g <= floor(p/k).
AttentionGeometry pooling_geometry(std::size_t k);
AttentionGeometry upsampling_geometry(std::size_t k);

// Shortening layer. Input is the already shifted full-resolution stream.
template <typename T>
struct Shortener {
  ShortenSpec spec;
  Parameter<T>* w_pool = nullptr;  // linear pooling projection
  CrossBlock<T> block;             // attention pooling only

  static Shortener make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg, ShortenSpec spec);
  // `k` overrides spec.factor for parameterless methods (shorten factor dropout).
  Var<T> operator()(Var<T> shifted, std::size_t k, Var<T> rel_table, const LayerContext<T>& ctx) const;
};

// Upsampling layer: (x before shortening, shortened x') -> full resolution.
template <typename T>
struct Upsampler {
  UpsampleSpec spec;
  Parameter<T>* w_up = nullptr;  // linear upsampling projection
  CrossBlock<T> block;           // attention upsampling only

  static Upsampler make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg, UpsampleSpec spec);
  Var<T> operator()(Var<T> x, Var<T> shortened, std::size_t k, Var<T> rel_table, const LayerContext<T>& ctx) const;
};

}  // namespace hourglass
