#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hourglass/graph.hpp"
#include "hourglass/ops.hpp"

namespace hourglass {

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t n_heads = 4;
  double dropout = 0.15;
  // Local attention span for full-resolution self-attention; 0 = unlimited.
  std::size_t attention_window = 0;
  // Longest full-resolution sequence the relative tables must cover.
  std::size_t max_len = 512;

  void validate() const;
};

enum class InitKind { normal, zeros, ones };

// Ordered registry of learnable tensors keyed by unique path.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& path, Shape shape, InitKind init);
  Parameter<T>& get(const std::string& path);
  const Parameter<T>& get(const std::string& path) const;
  bool contains(const std::string& path) const { return index_.count(path) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }
  std::size_t scalar_count() const;
  std::vector<std::string> paths() const;

  // Draws every parameter according to its init kind: truncated normal
  // (sigma, cut at 2 sigma), zeros, or ones.
  void initialize(std::uint64_t seed, double sigma = 0.02);
  // Overwrites every parameter, biases and gains included, with N(0, sigma^2)
  // noise (gains centred at 1). Used by audits so no entry is exactly zero.
  void randomize(std::uint64_t seed, double sigma);
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<InitKind> init_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Standard normal from raw engine bits (Box-Muller), identical on every platform.
double standard_normal(std::mt19937_64& rng);

// Forward-pass state shared by all layers.
template <typename T>
struct LayerContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  T dropout = T(0);

  Var<T> drop(Var<T> x) const;
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  static LayerNorm make(ParamStore<T>& store, const std::string& path, std::size_t d);
  Var<T> operator()(Var<T> x) const;
};

template <typename T>
struct FeedForward {
  Parameter<T>* w_in = nullptr;
  Parameter<T>* b_in = nullptr;
  Parameter<T>* w_out = nullptr;
  Parameter<T>* b_out = nullptr;

  static FeedForward make(ParamStore<T>& store, const std::string& path, std::size_t d, std::size_t d_ff);
  // Linear(d -> d_ff) -> FastGelu -> Linear(d_ff -> d)
  Var<T> operator()(Var<T> x) const;
};

// Multi-head attention with Transformer-XL relative parametrization. The
// level's relative table R holds one learned d-vector per offset; each layer
// projects it through its own W_r and owns its content/position biases.
template <typename T>
struct RelAttention {
  Parameter<T>* w_q = nullptr;
  Parameter<T>* w_k = nullptr;
  Parameter<T>* w_v = nullptr;
  Parameter<T>* w_r = nullptr;
  Parameter<T>* w_o = nullptr;
  Parameter<T>* b_o = nullptr;
  Parameter<T>* u = nullptr;   // content bias [H, dh]
  Parameter<T>* pb = nullptr;  // position bias [H, dh]
  std::size_t heads = 1;

  static RelAttention make(ParamStore<T>& store, const std::string& path, std::size_t d, std::size_t heads);
  Var<T> operator()(Var<T> queries, Var<T> keys, Var<T> rel_table, const AttentionGeometry& geom) const;
};

// Pre-norm block: x + Attn(LN(x)), then x + FF(LN(x)); dropout on both
// sublayer outputs while training.
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln_attn;
  RelAttention<T> attn;
  LayerNorm<T> ln_ff;
  FeedForward<T> ff;
  std::size_t window = 0;

  static TransformerBlock make(ParamStore<T>& store, const std::string& path, const ModelConfig& cfg,
                               std::size_t window = 0);
  Var<T> operator()(Var<T> x, Var<T> rel_table, const LayerContext<T>& ctx) const;
};

// Row-major [batch, length] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> tokens;

  std::int32_t at(std::size_t b, std::size_t t) const { return tokens[b * length + t]; }
  std::span<const std::int32_t> row(std::size_t b) const { return {tokens.data() + b * length, length}; }
};

// Embedding lookup scaled by sqrt(d): [B, L] -> [B, L, d].
template <typename T>
Var<T> embed(Graph<T>& g, Parameter<T>& table, const TokenBatch& tokens);

}  // namespace hourglass
