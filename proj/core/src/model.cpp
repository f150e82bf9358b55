#include "hourglass/model.hpp"

#include <algorithm>

namespace hourglass {

void ModelSpec::validate() const {
  config.validate();
  if (!sfd.enabled) return;
  if (hierarchy.depth() != 1) {
    throw ConfigError("shorten factor dropout needs exactly one shortening level, hierarchy '" +
                      hierarchy.to_string() + "' has " + std::to_string(hierarchy.depth()));
  }
  if (shorten != ShortenMethod::avg_pool) {
    throw ConfigError("shorten factor dropout needs avg_pool shortening, got " + to_string(shorten));
  }
  if (upsample != UpsampleMethod::repeat && upsample != UpsampleMethod::attn_identityU) {
    throw ConfigError("shorten factor dropout needs repeat or attn_identityU upsampling, got " + to_string(upsample));
  }
  if (sfd.factor_set.empty()) throw ConfigError("shorten factor dropout needs a non-empty factor set");
  for (auto f : sfd.factor_set) {
    if (f < 2) throw ConfigError("shorten factor dropout factors must be at least 2");
  }
  const std::size_t k = hierarchy.levels[0].k;
  if (std::find(sfd.factor_set.begin(), sfd.factor_set.end(), k) == sfd.factor_set.end()) {
    throw ConfigError("hierarchy factor " + std::to_string(k) + " is not in the shorten factor dropout set");
  }
}

template <typename T>
HourglassModel<T>::HourglassModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const ModelConfig& cfg = spec_.config;
  const Hierarchy& h = spec_.hierarchy;

  embedding_ = &store_.add("embed/table", {cfg.vocab_size, cfg.d_model}, InitKind::normal);

  // Relative tables are sized for the smallest factor the level can run at.
  std::size_t cumulative = 1;
  for (std::size_t l = 0; l <= h.depth(); ++l) {
    const std::size_t rows = (cfg.max_len + cumulative - 1) / cumulative;
    rel_tables_.push_back(&store_.add("rel/l" + std::to_string(l), {rows, cfg.d_model}, InitKind::normal));
    if (l < h.depth()) {
      std::size_t k = h.levels[l].k;
      if (spec_.sfd.enabled) k = *std::min_element(spec_.sfd.factor_set.begin(), spec_.sfd.factor_set.end());
      cumulative *= k;
    }
  }

  auto blocks = [&](const std::string& prefix, std::size_t n, std::size_t window) {
    std::vector<TransformerBlock<T>> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(TransformerBlock<T>::make(store_, prefix + "/b" + std::to_string(i), cfg, window));
    }
    return out;
  };

  for (std::size_t l = 0; l < h.depth(); ++l) {
    const HierarchyLevel& hl = h.levels[l];
    const std::string p = "l" + std::to_string(l);
    const std::size_t window = l == 0 ? cfg.attention_window : 0;
    Level lv;
    lv.pre = blocks(p + "/pre", hl.pre, window);
    lv.shorten = Shortener<T>::make(store_, p + "/shorten", cfg, ShortenSpec{spec_.shorten, hl.k});
    lv.upsample = Upsampler<T>::make(store_, p + "/upsample", cfg, UpsampleSpec{spec_.upsample, hl.k});
    levels_.push_back(std::move(lv));
  }
  leaf_ = blocks("l" + std::to_string(h.depth()), h.leaf_layers, h.depth() == 0 ? cfg.attention_window : 0);
  // Post blocks are registered innermost first so paths follow data flow.
  for (std::size_t l = h.depth(); l-- > 0;) {
    const std::size_t window = l == 0 ? cfg.attention_window : 0;
    levels_[l].post = blocks("l" + std::to_string(l) + "/post", h.levels[l].post, window);
  }

  final_ln_ = LayerNorm<T>::make(store_, "final_ln", cfg.d_model);
  head_w_ = &store_.add("head/w", {cfg.d_model, cfg.vocab_size}, InitKind::normal);
  head_b_ = &store_.add("head/b", {cfg.vocab_size}, InitKind::zeros);
  store_.initialize(seed);
}

template <typename T>
std::size_t HourglassModel<T>::resolve_factor(std::size_t factor) const {
  const Hierarchy& h = spec_.hierarchy;
  if (h.depth() == 0) {
    if (factor > 1) throw ConfigError("hierarchy '" + h.to_string() + "' has no shortening; cannot run at factor " +
                                      std::to_string(factor));
    return 0;
  }
  const std::size_t configured = h.levels[0].k;
  if (factor == 0 || factor == configured) return configured;
  if (spec_.sfd.enabled) {
    const auto& set = spec_.sfd.factor_set;
    if (std::find(set.begin(), set.end(), factor) != set.end()) return factor;
    throw ConfigError("shorten factor " + std::to_string(factor) + " is outside the trained factor set");
  }
  throw ConfigError("model was built for shorten factor " + std::to_string(configured) + ", not " +
                    std::to_string(factor));
}

template <typename T>
std::size_t HourglassModel<T>::length_divisor(std::size_t factor) const {
  const std::size_t k = resolve_factor(factor);
  std::size_t d = 1;
  for (std::size_t l = 0; l < spec_.hierarchy.depth(); ++l) d *= l == 0 ? k : spec_.hierarchy.levels[l].k;
  return d;
}

template <typename T>
void HourglassModel<T>::check_length(std::size_t length, std::size_t factor) const {
  const std::size_t div = length_divisor(factor);
  if (length == 0 || length % div != 0) {
    throw UsageError("sequence length " + std::to_string(length) + " must be a positive multiple of " +
                     std::to_string(div) + ", the product of the shorten factors of '" +
                     spec_.hierarchy.to_string() + "'");
  }
  if (length > spec_.config.max_len) {
    throw UsageError("sequence length " + std::to_string(length) + " exceeds max_len " +
                     std::to_string(spec_.config.max_len));
  }
}

template <typename T>
std::size_t HourglassModel<T>::draw_factor(std::mt19937_64& rng) const {
  if (!spec_.sfd.enabled) return resolve_factor(0);
  const auto& set = spec_.sfd.factor_set;
  return set[static_cast<std::size_t>(rng() % set.size())];
}

template <typename T>
Var<T> HourglassModel<T>::run(Graph<T>& g, std::size_t level, Var<T> x, std::size_t factor,
                              const ForwardOptions& opt, const LayerContext<T>& ctx) const {
  Var<T> rel = g.param(*rel_tables_[level]);
  if (level == levels_.size()) {
    for (const auto& b : leaf_) x = b(x, rel, ctx);
    return x;
  }
  const Level& lv = levels_[level];
  const std::size_t k = level == 0 ? factor : spec_.hierarchy.levels[level].k;
  for (const auto& b : lv.pre) x = b(x, rel, ctx);
  const std::size_t s = opt.shift_override.value_or(k - 1);
  Var<T> shifted = s > 0 ? shift_right(x, s) : x;
  Var<T> shortened = lv.shorten(shifted, k, rel, ctx);
  shortened = run(g, level + 1, shortened, factor, opt, ctx);
  x = add(x, lv.upsample(x, shortened, k, rel, ctx));
  for (const auto& b : lv.post) x = b(x, rel, ctx);
  return x;
}

template <typename T>
ForwardResult<T> HourglassModel<T>::forward(Graph<T>& g, const TokenBatch& tokens, const ForwardOptions& opt) const {
  if (opt.training && opt.rng == nullptr) throw UsageError("training forward pass needs an rng");
  std::size_t factor = opt.factor;
  if (factor == 0 && opt.training && spec_.sfd.enabled) factor = draw_factor(*opt.rng);
  factor = resolve_factor(factor);
  check_length(tokens.length, factor);
  for (auto t : tokens.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= spec_.config.vocab_size) {
      throw IndexError("token " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(spec_.config.vocab_size));
    }
  }

  LayerContext<T> ctx{opt.training, opt.rng, static_cast<T>(spec_.config.dropout)};
  ForwardResult<T> out;
  out.factor = factor;
  out.embedded = embed(g, *embedding_, tokens);
  Var<T> x = tokens.length > 1 ? shift_right(out.embedded, 1)
                               : g.constant(Tensor<T>(out.embedded.shape()));
  x = run(g, 0, x, factor, opt, ctx);
  out.logits = linear(final_ln_(x), g.param(*head_w_), g.param(*head_b_));
  return out;
}

template <typename T>
std::vector<std::int32_t> HourglassModel<T>::greedy_sample(const std::vector<std::int32_t>& prefix,
                                                           std::size_t steps) const {
  std::vector<std::int32_t> seq = prefix;
  const std::size_t div = length_divisor();
  if (prefix.size() + steps > spec_.config.max_len) {
    throw UsageError("sampling " + std::to_string(steps) + " tokens after a prefix of " +
                     std::to_string(prefix.size()) + " exceeds max_len " + std::to_string(spec_.config.max_len));
  }
  const std::size_t vocab = spec_.config.vocab_size;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t pos = seq.size();
    // Trailing padding cannot influence position `pos` in a causal model.
    const std::size_t len = std::min(((pos + 1 + div - 1) / div) * div, spec_.config.max_len);
    TokenBatch batch{1, len, std::vector<std::int32_t>(len, 0)};
    std::copy(seq.begin(), seq.end(), batch.tokens.begin());
    Graph<T> g;
    g.set_grad_enabled(false);
    const Tensor<T>& logits = forward(g, batch).logits.value();
    const T* row = logits.ptr() + pos * vocab;
    seq.push_back(static_cast<std::int32_t>(std::max_element(row, row + vocab) - row));
  }
  return seq;
}

template class HourglassModel<float>;
template class HourglassModel<double>;

}  // namespace hourglass
