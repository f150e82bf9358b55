#include "hourglass/resample.hpp"

namespace hourglass {

ShortenMethod parse_shorten_method(std::string_view name) {
  if (name == "avg_pool") return ShortenMethod::avg_pool;
  if (name == "linear_pool") return ShortenMethod::linear_pool;
  if (name == "attn_pool_avg") return ShortenMethod::attn_pool_avg;
  if (name == "attn_pool_linear") return ShortenMethod::attn_pool_linear;
  throw ConfigError("unknown shortening method '" + std::string(name) +
                    "' (expected avg_pool, linear_pool, attn_pool_avg, attn_pool_linear)");
}

UpsampleMethod parse_upsample_method(std::string_view name) {
  if (name == "repeat") return UpsampleMethod::repeat;
  if (name == "linear") return UpsampleMethod::linear;
  if (name == "attn_identityU") return UpsampleMethod::attn_identityU;
  if (name == "attn_linearU") return UpsampleMethod::attn_linearU;
  throw ConfigError("unknown upsampling method '" + std::string(name) +
                    "' (expected repeat, linear, attn_identityU, attn_linearU)");
}

std::string to_string(ShortenMethod m) {
  switch (m) {
    case ShortenMethod::avg_pool: return "avg_pool";
    case ShortenMethod::linear_pool: return "linear_pool";
    case ShortenMethod::attn_pool_avg: return "attn_pool_avg";
    case ShortenMethod::attn_pool_linear: return "attn_pool_linear";
  }
  return "?";
}

std::string to_string(UpsampleMethod m) {
  switch (m) {
    case UpsampleMethod::repeat: return "repeat";
    case UpsampleMethod::linear: return "linear";
    case UpsampleMethod::attn_identityU: return "attn_identityU";
    case UpsampleMethod::attn_linearU: return "attn_linearU";
  }
  return "?";
}

template <typename T>
Var<T> linear_pool(Var<T> x, std::size_t k, Var<T> w) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("linear_pool expects [B, L, d], got " + shape_str(s));
  if (k == 0 || s[1] % k != 0) {
    throw UsageError("linear_pool: sequence length " + std::to_string(s[1]) + " not divisible by factor " +
                     std::to_string(k));
  }
  if (w.shape() != Shape{k * s[2], s[2]}) {
    throw DimensionError("linear_pool weight " + shape_str(w.shape()) + " should be " +
                         shape_str({k * s[2], s[2]}));
  }
  return linear(reshape(x, Shape{s[0], s[1] / k, k * s[2]}), w);
}

template <typename T>
Var<T> linear_upsample(Var<T> x, std::size_t k, Var<T> w) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("linear_upsample expects [B, L/k, d], got " + shape_str(s));
  if (w.shape() != Shape{s[2], k * s[2]}) {
    throw DimensionError("linear_upsample weight " + shape_str(w.shape()) + " should be " +
                         shape_str({s[2], k * s[2]}));
  }
  return reshape(linear(x, w), Shape{s[0], s[1] * k, s[2]});
}

AttentionGeometry pooling_geometry(std::size_t k) {
  // Query g stands at the last position of its group, g*k + k - 1.
  return AttentionGeometry{k, k - 1, 1, 0};
}

AttentionGeometry upsampling_geometry(std::size_t k) {
  // Shortened key g stands at the first position of its group, g*k.
  return AttentionGeometry{1, 0, k, 0};
}

template <typename T>
CrossBlock<T> CrossBlock<T>::make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg) {
  CrossBlock b;
  b.ln_q = LayerNorm<T>::make(store, path + "/ln_q", cfg.d_model);
  b.ln_kv = LayerNorm<T>::make(store, path + "/ln_kv", cfg.d_model);
  b.attn = RelAttention<T>::make(store, path + "/attn", cfg.d_model, cfg.n_heads);
  b.ln_ff = LayerNorm<T>::make(store, path + "/ln_ff", cfg.d_model);
  b.ff = FeedForward<T>::make(store, path + "/ff", cfg.d_model, cfg.d_ff);
  return b;
}

template <typename T>
Var<T> CrossBlock<T>::operator()(Var<T> q, Var<T> kv, Var<T> rel_table, const AttentionGeometry& geom,
                                 const LayerContext<T>& ctx) const {
  Var<T> z = add(q, ctx.drop(attn(ln_q(q), ln_kv(kv), rel_table, geom)));
  return add(z, ctx.drop(ff(ln_ff(z))));
}

template <typename T>
Shortener<T> Shortener<T>::make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg,
                                ShortenSpec spec) {
  if (spec.factor < 2) throw ConfigError("shorten factor must be at least 2");
  Shortener s;
  s.spec = spec;
  if (factor_parametric(spec.method)) {
    s.w_pool = &store.add(path + "/w_pool", {spec.factor * cfg.d_model, cfg.d_model}, InitKind::normal);
  }
  if (is_attention(spec.method)) s.block = CrossBlock<T>::make(store, path + "/attn_pool", cfg);
  return s;
}

template <typename T>
Var<T> Shortener<T>::operator()(Var<T> shifted, std::size_t k, Var<T> rel_table, const LayerContext<T>& ctx) const {
  if (factor_parametric(spec.method) && k != spec.factor) {
    throw ConfigError(to_string(spec.method) + " was built for factor " + std::to_string(spec.factor) +
                      " and cannot run at factor " + std::to_string(k));
  }
  Graph<T>& g = shifted.graph();
  const bool linear_s = spec.method == ShortenMethod::linear_pool || spec.method == ShortenMethod::attn_pool_linear;
  Var<T> pooled = linear_s ? linear_pool(shifted, k, g.param(*w_pool)) : avg_pool(shifted, k);
  if (!is_attention(spec.method)) return pooled;
  return block(pooled, shifted, rel_table, pooling_geometry(k), ctx);
}

template <typename T>
Upsampler<T> Upsampler<T>::make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg,
                                UpsampleSpec spec) {
  if (spec.factor < 2) throw ConfigError("upsample factor must be at least 2");
  Upsampler u;
  u.spec = spec;
  if (factor_parametric(spec.method)) {
    u.w_up = &store.add(path + "/w_up", {cfg.d_model, spec.factor * cfg.d_model}, InitKind::normal);
  }
  if (is_attention(spec.method)) u.block = CrossBlock<T>::make(store, path + "/attn_up", cfg);
  return u;
}

template <typename T>
Var<T> Upsampler<T>::operator()(Var<T> x, Var<T> shortened, std::size_t k, Var<T> rel_table,
                                const LayerContext<T>& ctx) const {
  if (factor_parametric(spec.method) && k != spec.factor) {
    throw ConfigError(to_string(spec.method) + " was built for factor " + std::to_string(spec.factor) +
                      " and cannot run at factor " + std::to_string(k));
  }
  if (x.shape().size() != 3 || shortened.shape().size() != 3 || x.shape()[1] != k * shortened.shape()[1]) {
    throw UsageError("upsampling: full-resolution length must equal k * shortened length (" + shape_str(x.shape()) +
                     " vs " + shape_str(shortened.shape()) + ", k=" + std::to_string(k) + ")");
  }
  Graph<T>& g = x.graph();
  switch (spec.method) {
    case UpsampleMethod::repeat:
      return repeat_upsample(shortened, k);
    case UpsampleMethod::linear:
      return linear_upsample(shortened, k, g.param(*w_up));
    case UpsampleMethod::attn_identityU:
      return block(x, shortened, rel_table, upsampling_geometry(k), ctx);
    case UpsampleMethod::attn_linearU: {
      Var<T> u = add(x, linear_upsample(shortened, k, g.param(*w_up)));
      return block(u, shortened, rel_table, upsampling_geometry(k), ctx);
    }
  }
  throw ConfigError("unhandled upsampling method");
}

template Var<float> linear_pool<float>(Var<float>, std::size_t, Var<float>);
template Var<double> linear_pool<double>(Var<double>, std::size_t, Var<double>);
template Var<float> linear_upsample<float>(Var<float>, std::size_t, Var<float>);
template Var<double> linear_upsample<double>(Var<double>, std::size_t, Var<double>);
template struct CrossBlock<float>;
template struct CrossBlock<double>;
template struct Shortener<float>;
template struct Shortener<double>;
template struct Upsampler<float>;
template struct Upsampler<double>;

}  // namespace hourglass
