#include "hourglass/nn.hpp"

#include <cmath>
#include <numbers>

namespace hourglass {

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (d_model == 0 || d_ff == 0) throw ConfigError("d_model and d_ff must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_len == 0) throw ConfigError("max_len must be positive");
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---- ParamStore --------------------------------------------------------

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& path, Shape shape, InitKind init) {
  if (index_.count(path)) throw ConfigError("duplicate parameter path '" + path + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->path = path;
  p->value = Tensor<T>(std::move(shape), init == InitKind::ones ? T(1) : T(0));
  index_.emplace(path, params_.size());
  params_.push_back(std::move(p));
  init_.push_back(init);
  return *params_.back();
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("unknown parameter path '" + path + "'");
  return *params_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("unknown parameter path '" + path + "'");
  return *params_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
std::vector<std::string> ParamStore<T>::paths() const {
  std::vector<std::string> out;
  for (const auto& p : params_) out.push_back(p->path);
  return out;
}

template <typename T>
void ParamStore<T>::initialize(std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& v = params_[i]->value;
    switch (init_[i]) {
      case InitKind::zeros:
        v.fill(T(0));
        break;
      case InitKind::ones:
        v.fill(T(1));
        break;
      case InitKind::normal:
        for (auto& x : v.data()) {
          double z;
          do {
            z = standard_normal(rng);
          } while (std::abs(z) > 2.0);
          x = static_cast<T>(z * sigma);
        }
        break;
    }
  }
}

template <typename T>
void ParamStore<T>::randomize(std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double centre = init_[i] == InitKind::ones ? 1.0 : 0.0;
    for (auto& x : params_[i]->value.data()) x = static_cast<T>(centre + sigma * standard_normal(rng));
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---- layers ------------------------------------------------------------

template <typename T>
Var<T> LayerContext<T>::drop(Var<T> x) const {
  if (!training || dropout == T(0)) return x;
  if (rng == nullptr) throw UsageError("training forward pass needs an rng for dropout");
  return hourglass::dropout(x, dropout, *rng, true);
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParamStore<T>& store, const std::string& path, std::size_t d) {
  return {&store.add(path + "/gain", {d}, InitKind::ones), &store.add(path + "/bias", {d}, InitKind::zeros)};
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Var<T> x) const {
  Graph<T>& g = x.graph();
  return layernorm(x, g.param(*gain), g.param(*bias));
}

template <typename T>
FeedForward<T> FeedForward<T>::make(ParamStore<T>& store, const std::string& path, std::size_t d, std::size_t d_ff) {
  FeedForward f;
  f.w_in = &store.add(path + "/w_in", {d, d_ff}, InitKind::normal);
  f.b_in = &store.add(path + "/b_in", {d_ff}, InitKind::zeros);
  f.w_out = &store.add(path + "/w_out", {d_ff, d}, InitKind::normal);
  f.b_out = &store.add(path + "/b_out", {d}, InitKind::zeros);
  return f;
}

template <typename T>
Var<T> FeedForward<T>::operator()(Var<T> x) const {
  Graph<T>& g = x.graph();
  Var<T> h = gelu_fast(linear(x, g.param(*w_in), g.param(*b_in)));
  return linear(h, g.param(*w_out), g.param(*b_out));
}

template <typename T>
RelAttention<T> RelAttention<T>::make(ParamStore<T>& store, const std::string& path, std::size_t d,
                                      std::size_t heads) {
  RelAttention a;
  a.w_q = &store.add(path + "/w_q", {d, d}, InitKind::normal);
  a.w_k = &store.add(path + "/w_k", {d, d}, InitKind::normal);
  a.w_v = &store.add(path + "/w_v", {d, d}, InitKind::normal);
  a.w_r = &store.add(path + "/w_r", {d, d}, InitKind::normal);
  a.w_o = &store.add(path + "/w_o", {d, d}, InitKind::normal);
  a.b_o = &store.add(path + "/b_o", {d}, InitKind::zeros);
  a.u = &store.add(path + "/u", {heads, d / heads}, InitKind::zeros);
  a.pb = &store.add(path + "/v", {heads, d / heads}, InitKind::zeros);
  a.heads = heads;
  return a;
}

template <typename T>
Var<T> RelAttention<T>::operator()(Var<T> queries, Var<T> keys, Var<T> rel_table,
                                   const AttentionGeometry& geom) const {
  Graph<T>& g = queries.graph();
  const std::size_t lq = queries.shape().at(1);
  const std::size_t span = geom.rel_span(lq);
  if (span > rel_table.shape().at(0)) {
    throw ConfigError("sequence needs " + std::to_string(span) + " relative offsets but the table covers " +
                      std::to_string(rel_table.shape()[0]) + "; raise max_len");
  }
  Var<T> q = linear(queries, g.param(*w_q));
  Var<T> k = linear(keys, g.param(*w_k));
  Var<T> v = linear(keys, g.param(*w_v));
  Var<T> r = linear(slice_rows(rel_table, 0, span), g.param(*w_r));
  Var<T> a = rel_attention_core(q, k, v, r, g.param(*u), g.param(*pb), heads, geom);
  return linear(a, g.param(*w_o), g.param(*b_o));
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg,
                                              std::size_t window) {
  TransformerBlock b;
  b.ln_attn = LayerNorm<T>::make(store, path + "/ln_attn", cfg.d_model);
  b.attn = RelAttention<T>::make(store, path + "/attn", cfg.d_model, cfg.n_heads);
  b.ln_ff = LayerNorm<T>::make(store, path + "/ln_ff", cfg.d_model);
  b.ff = FeedForward<T>::make(store, path + "/ff", cfg.d_model, cfg.d_ff);
  b.window = window;
  return b;
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(Var<T> x, Var<T> rel_table, const LayerContext<T>& ctx) const {
  AttentionGeometry geom;
  geom.window = window;
  Var<T> h = ln_attn(x);
  x = add(x, ctx.drop(attn(h, h, rel_table, geom)));
  return add(x, ctx.drop(ff(ln_ff(x))));
}

template <typename T>
Var<T> embed(Graph<T>& g, Parameter<T>& table, const TokenBatch& tokens) {
  if (tokens.tokens.size() != tokens.batch * tokens.length || tokens.tokens.empty()) {
    throw DimensionError("token batch holds " + std::to_string(tokens.tokens.size()) + " ids for shape (" +
                         std::to_string(tokens.batch) + "," + std::to_string(tokens.length) + ")");
  }
  const std::size_t d = table.value.extent(1);
  Var<T> rows = gather_rows(g.param(table), std::span<const std::int32_t>(tokens.tokens));
  rows = scale(rows, static_cast<T>(std::sqrt(static_cast<double>(d))));
  return reshape(rows, Shape{tokens.batch, tokens.length, d});
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct LayerContext<float>;
template struct LayerContext<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template struct RelAttention<float>;
template struct RelAttention<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template Var<float> embed<float>(Graph<float>&, Parameter<float>&, const TokenBatch&);
template Var<double> embed<double>(Graph<double>&, Parameter<double>&, const TokenBatch&);

}  // namespace hourglass
