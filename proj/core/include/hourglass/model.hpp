#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "hourglass/hierarchy.hpp"
#include "hourglass/nn.hpp"
#include "hourglass/resample.hpp"

namespace hourglass {

// Shorten factor dropout: one factor drawn uniformly from `factor_set`
// per training step.
struct SfdSpec {
  bool enabled = false;
  std::vector<std::size_t> factor_set;
};

struct ModelSpec {
  ModelConfig config;
  Hierarchy hierarchy = parse_hierarchy("2@1 8@3 2@1");
  ShortenMethod shorten = ShortenMethod::avg_pool;
  UpsampleMethod upsample = UpsampleMethod::attn_linearU;
  SfdSpec sfd;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout and factor draws; required when training
  // Shorten factor for this pass; 0 keeps the configured one (or draws one
  // when training with shorten factor dropout).
  std::size_t factor = 0;
  // Replaces the k-1 shift before every shortening. Used to build
  // deliberately leaky models for audits.
  std::optional<std::size_t> shift_override;
};

template <typename T>
struct ForwardResult {
  Var<T> logits;    // [B, L, V]; logits[p] models t_p given t_0..t_{p-1}
  Var<T> embedded;  // [B, L, d] token embeddings before the internal shift
  std::size_t factor = 0;  // outermost shorten factor used (0 without shortening)
};

template <typename T>
class HourglassModel {
 public:
  HourglassModel(ModelSpec spec, std::uint64_t seed);
  HourglassModel(const HourglassModel&) = delete;
  HourglassModel& operator=(const HourglassModel&) = delete;
  HourglassModel(HourglassModel&&) = default;
  HourglassModel& operator=(HourglassModel&&) = default;

  const ModelSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  // Every input length must be a multiple of this.
  std::size_t length_divisor(std::size_t factor = 0) const;
  // Throws UsageError explaining the divisibility rule when `length` cannot be processed.
  void check_length(std::size_t length, std::size_t factor = 0) const;
  // Factor actually used for a pass given a requested one (0 = configured).
  std::size_t resolve_factor(std::size_t factor) const;
  std::size_t draw_factor(std::mt19937_64& rng) const;

  ForwardResult<T> forward(Graph<T>& g, const TokenBatch& tokens, const ForwardOptions& opt = {}) const;

  // Argmax continuation of `prefix` by `steps` tokens, recomputing the full
  // forward pass per token.
  std::vector<std::int32_t> greedy_sample(const std::vector<std::int32_t>& prefix, std::size_t steps) const;

 private:
  struct Level {
    std::vector<TransformerBlock<T>> pre;
    Shortener<T> shorten;
    Upsampler<T> upsample;
    std::vector<TransformerBlock<T>> post;
  };

  Var<T> run(Graph<T>& g, std::size_t level, Var<T> x, std::size_t factor, const ForwardOptions& opt,
             const LayerContext<T>& ctx) const;

  ModelSpec spec_;
  ParamStore<T> store_;
  Parameter<T>* embedding_ = nullptr;
  std::vector<Parameter<T>*> rel_tables_;  // one per resolution level
  std::vector<Level> levels_;
  std::vector<TransformerBlock<T>> leaf_;
  LayerNorm<T> final_ln_;
  Parameter<T>* head_w_ = nullptr;
  Parameter<T>* head_b_ = nullptr;
};

}  // namespace hourglass
