#include "hourglass/audit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hourglass/flop_counter.hpp"
#include "hourglass/train.hpp"

namespace hourglass {

namespace {

constexpr double kAuditSigma = 0.3;
constexpr std::size_t kMaxOffenders = 64;

void finish_verdict(AuditReport& r) {
  r.pass = true;
  r.worst = 0;
  r.worst_p = r.worst_j = 0;
  r.offenders.clear();
  for (std::size_t p = 0; p < r.length; ++p) {
    for (std::size_t j = p; j < r.length; ++j) {
      const double v = r.at(p, j);
      if (v > r.worst || (p == 0 && j == 0)) {
        r.worst = v;
        r.worst_p = p;
        r.worst_j = j;
      }
      if (v > r.tolerance) {
        r.pass = false;
        r.offenders.push_back({p, j, v});
      }
    }
  }
  std::stable_sort(r.offenders.begin(), r.offenders.end(),
                   [](const AuditOffender& a, const AuditOffender& b) { return a.value > b.value; });
  if (r.offenders.size() > kMaxOffenders) r.offenders.resize(kMaxOffenders);
  r.worst_path = r.pass ? "" : "logits[" + std::to_string(r.worst_p) + "] <- embedding[" + std::to_string(r.worst_j) + "]";
}

std::string spec_label(const ModelSpec& s) {
  return s.hierarchy.to_string() + " " + to_string(s.shorten) + "/" + to_string(s.upsample);
}

}  // namespace

AuditReport leak_audit(const AuditForward& forward, std::size_t length, std::size_t vocab, double tolerance,
                       std::uint64_t token_seed) {
  if (length == 0 || vocab == 0) throw UsageError("leak audit needs a positive length and vocabulary");
  std::mt19937_64 rng(token_seed);
  std::vector<std::int32_t> seq(length);
  for (auto& t : seq) t = static_cast<std::int32_t>(rng() % vocab);
  TokenBatch batch{vocab, length, {}};
  for (std::size_t v = 0; v < vocab; ++v) batch.tokens.insert(batch.tokens.end(), seq.begin(), seq.end());

  Graph<double> g;
  const ForwardResult<double> out = forward(g, batch);
  {
    Graph<double> again;
    again.set_grad_enabled(false);
    const ForwardResult<double> second = forward(again, batch);
    if (second.logits.value().data().size() != out.logits.value().data().size() ||
        !std::equal(out.logits.value().data().begin(), out.logits.value().data().end(),
                    second.logits.value().data().begin())) {
      throw AuditError("forward pass is not deterministic; two evaluations disagree");
    }
  }
  const Shape& ls = out.logits.shape();
  if (ls != Shape{vocab, length, vocab}) {
    throw AuditError("audited forward returned logits " + shape_str(ls) + ", expected [" + std::to_string(vocab) +
                     ", " + std::to_string(length) + ", " + std::to_string(vocab) + "]");
  }
  const std::size_t d = out.embedded.shape().at(2);

  AuditReport r;
  r.length = length;
  r.seeds = 1;
  r.tolerance = tolerance;
  r.matrix.assign(length * length, 0.0);
  Tensor<double> seed(ls);
  for (std::size_t p = 0; p < length; ++p) {
    g.zero_grad();
    std::fill(seed.data().begin(), seed.data().end(), 0.0);
    for (std::size_t v = 0; v < vocab; ++v) seed[(v * length + p) * vocab + v] = 1.0;
    g.backward(out.logits, seed, false);
    const Tensor<double>* grad = g.grad(out.embedded);
    if (grad == nullptr) continue;
    for (std::size_t v = 0; v < vocab; ++v) {
      for (std::size_t j = 0; j < length; ++j) {
        const double* row = grad->ptr() + (v * length + j) * d;
        double m = r.matrix[p * length + j];
        for (std::size_t c = 0; c < d; ++c) {
          if (!std::isfinite(row[c])) {
            throw AuditError("non-finite derivative of logits[" + std::to_string(p) + "] by embedding[" +
                             std::to_string(j) + "]");
          }
          m = std::max(m, std::abs(row[c]));
        }
        r.matrix[p * length + j] = m;
      }
    }
  }
  finish_verdict(r);
  return r;
}

AuditReport merge_reports(const std::vector<AuditReport>& reports) {
  if (reports.empty()) throw UsageError("no audit reports to merge");
  AuditReport r = reports.front();
  r.seeds = 0;
  for (const auto& o : reports) {
    if (o.length != r.length) throw UsageError("cannot merge audit reports of different lengths");
    for (std::size_t i = 0; i < r.matrix.size(); ++i) r.matrix[i] = std::max(r.matrix[i], o.matrix[i]);
    r.seeds += o.seeds;
  }
  finish_verdict(r);
  return r;
}

AuditReport audit_model(const AuditCase& c, std::size_t seeds, double tolerance, std::uint64_t base_seed) {
  if (seeds == 0) throw UsageError("audit needs at least one seed");
  std::vector<AuditReport> per_seed;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    HourglassModel<double> model(c.spec, seed);
    model.params().randomize(seed, kAuditSigma);
    ForwardOptions opt;
    opt.shift_override = c.shift_override;
    const AuditForward f = [&](Graph<double>& g, const TokenBatch& b) { return model.forward(g, b, opt); };
    per_seed.push_back(leak_audit(f, c.length, c.spec.config.vocab_size, tolerance, seed));
  }
  AuditReport r = merge_reports(per_seed);
  r.label = c.label.empty() ? spec_label(c.spec) : c.label;
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx",
                static_cast<unsigned long long>(fnv1a64(r.label + "|" + std::to_string(c.length) + "|" +
                                                        std::to_string(c.spec.config.d_model))));
  r.fingerprint = fp;
  return r;
}

ModelSpec audit_spec(const std::string& hierarchy, ShortenMethod shorten, UpsampleMethod upsample, std::size_t length,
                     std::size_t d_model, std::size_t vocab) {
  ModelSpec s;
  s.config.vocab_size = vocab;
  s.config.d_model = d_model;
  s.config.d_ff = 2 * d_model;
  s.config.n_heads = 2;
  s.config.dropout = 0;
  s.config.max_len = length;
  s.hierarchy = parse_hierarchy(hierarchy);
  s.shorten = shorten;
  s.upsample = upsample;
  s.validate();
  return s;
}

std::size_t audit_length(std::size_t divisor, std::size_t limit) {
  if (divisor == 0 || divisor > limit) throw UsageError("no audit length <= " + std::to_string(limit));
  return (limit / divisor) * divisor;
}

std::vector<AuditCase> audit_grid(bool sabotage, std::size_t d_model, std::size_t vocab, std::size_t length_limit) {
  const ShortenMethod shorteners[] = {ShortenMethod::avg_pool, ShortenMethod::linear_pool,
                                      ShortenMethod::attn_pool_avg, ShortenMethod::attn_pool_linear};
  const UpsampleMethod upsamplers[] = {UpsampleMethod::repeat, UpsampleMethod::linear, UpsampleMethod::attn_identityU,
                                       UpsampleMethod::attn_linearU};
  std::vector<AuditCase> cases;
  for (std::size_t depth = 1; depth <= 2; ++depth) {
    for (std::size_t k = sabotage ? 3 : 2; k <= 4; ++k) {
      const std::string h = depth == 1 ? "1@1 1@" + std::to_string(k) + " 1@1"
                                       : "1@1 1@" + std::to_string(k) + " 1@" + std::to_string(k * k) + " 1@" +
                                             std::to_string(k) + " 1@1";
      const std::size_t length = audit_length(depth == 1 ? k : k * k, length_limit);
      for (auto sh : shorteners) {
        for (auto up : upsamplers) {
          AuditCase c;
          c.spec = audit_spec(h, sh, up, length, d_model, vocab);
          c.length = length;
          c.label = spec_label(c.spec);
          if (!sabotage) {
            cases.push_back(c);
            continue;
          }
          for (std::size_t s = 1; s + 1 < k; ++s) {
            c.shift_override = s;
            c.label = spec_label(c.spec) + " shift=" + std::to_string(s);
            cases.push_back(c);
          }
        }
      }
    }
  }
  return cases;
}

std::vector<AuditReport> run_audits(const std::vector<AuditCase>& cases, std::size_t seeds, double tolerance,
                                    std::size_t threads) {
  std::vector<AuditReport> out(cases.size());
  std::vector<std::exception_ptr> errors(cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      try {
        out[i] = audit_model(cases[i], seeds, tolerance);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, cases.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string audit_csv(const AuditReport& r) {
  std::ostringstream os;
  os << "p,j,max_abs_derivative,verdict\n";
  char buf[96];
  for (std::size_t p = 0; p < r.length; ++p) {
    for (std::size_t j = 0; j < r.length; ++j) {
      const double v = r.at(p, j);
      const char* verdict = j < p ? "allowed" : (v <= r.tolerance ? "pass" : "fail");
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.6e,%s\n", p, j, v, verdict);
      os << buf;
    }
  }
  return os.str();
}

std::string audit_jsonl(const AuditReport& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["fingerprint"] = r.fingerprint;
  j["length"] = r.length;
  j["seeds"] = r.seeds;
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  j["worst"] = r.worst;
  j["worst_p"] = r.worst_p;
  j["worst_j"] = r.worst_j;
  j["worst_path"] = r.worst_path;
  auto off = nlohmann::json::array();
  for (const auto& o : r.offenders) off.push_back({{"p", o.p}, {"j", o.j}, {"value", o.value}});
  j["offenders"] = off;
  return j.dump();
}

// ---------------------------------------------------------------- cost model

std::uint64_t CostBreakdown::total() const {
  return attention_scores + position_scores + weighted_sum + projections + feed_forward + resampling + head;
}

CostBreakdown& CostBreakdown::operator+=(const CostBreakdown& o) {
  attention_scores += o.attention_scores;
  position_scores += o.position_scores;
  weighted_sum += o.weighted_sum;
  projections += o.projections;
  feed_forward += o.feed_forward;
  resampling += o.resampling;
  head += o.head;
  return *this;
}

CostBreakdown cross_block_cost(std::size_t lq, std::size_t lk, std::size_t lr, std::size_t d, std::size_t d_ff) {
  const std::uint64_t Q = lq, K = lk, R = lr, D = d, F = d_ff;
  CostBreakdown c;
  c.attention_scores = 2 * Q * K * D;
  c.position_scores = 2 * Q * R * D + 2 * R * D * D;
  c.weighted_sum = 2 * Q * K * D;
  c.projections = 2 * D * D * (2 * Q + 2 * K);
  c.feed_forward = 4 * Q * D * F;
  return c;
}

CostBreakdown block_cost(std::size_t l, std::size_t d, std::size_t d_ff) { return cross_block_cost(l, l, l, d, d_ff); }

namespace {

// Layer outputs plus saved attention probabilities of one block.
std::uint64_t block_words(std::size_t lq, std::size_t lk, std::size_t lr, const ModelConfig& cfg) {
  const std::uint64_t Q = lq, K = lk, R = lr, D = cfg.d_model, F = cfg.d_ff, H = cfg.n_heads;
  return 8 * Q * D + 2 * K * D + R * D + 2 * Q * F + H * Q * K + H * Q * R;
}

CostBreakdown scaled(CostBreakdown c, std::uint64_t n) {
  c.attention_scores *= n;
  c.position_scores *= n;
  c.weighted_sum *= n;
  c.projections *= n;
  c.feed_forward *= n;
  c.resampling *= n;
  c.head *= n;
  return c;
}

}  // namespace

CostEstimate estimate_cost(const Hierarchy& h, std::size_t length, const ModelConfig& cfg, ShortenMethod shorten,
                           UpsampleMethod upsample) {
  if (length == 0 || length % h.total_factor() != 0) {
    throw UsageError("cost length " + std::to_string(length) + " must be a positive multiple of " +
                     std::to_string(h.total_factor()));
  }
  const std::size_t d = cfg.d_model, dff = cfg.d_ff;
  CostEstimate e;
  auto blocks = [&](const std::string& name, std::size_t l, std::size_t n) {
    if (n == 0) return;
    CostStage s{name, l, n, scaled(block_cost(l, d, dff), n), n * block_words(l, l, l, cfg)};
    e.stages.push_back(s);
  };
  std::vector<std::vector<CostStage>> tail;  // per level: upsample, then post
  std::size_t l = length;
  for (std::size_t i = 0; i < h.levels.size(); ++i) {
    const auto& lv = h.levels[i];
    const std::size_t k = lv.k, ls = l / k;
    const std::string lvl = "l" + std::to_string(i);
    blocks(lvl + "/pre", l, lv.pre);

    CostStage sh{lvl + "/shorten", ls, 0, {}, 0};
    if (shorten == ShortenMethod::linear_pool || shorten == ShortenMethod::attn_pool_linear) {
      sh.flops.resampling = 2ull * ls * (k * d) * d;
    }
    if (is_attention(shorten)) {
      sh.layers = 1;
      sh.flops += cross_block_cost(ls, l, l, d, dff);
      sh.activation_words = block_words(ls, l, l, cfg);
    }
    e.stages.push_back(sh);

    CostStage up{lvl + "/upsample", l, 0, {}, 0};
    if (upsample == UpsampleMethod::linear || upsample == UpsampleMethod::attn_linearU) {
      up.flops.resampling = 2ull * ls * d * (k * d);
    }
    if (is_attention(upsample)) {
      up.layers = 1;
      up.flops += cross_block_cost(l, ls, l, d, dff);
      up.activation_words = block_words(l, ls, l, cfg);
    }
    tail.push_back({up});
    if (lv.post > 0) {
      tail.back().push_back(
          {lvl + "/post", l, lv.post, scaled(block_cost(l, d, dff), lv.post), lv.post * block_words(l, l, l, cfg)});
    }
    l = ls;
  }
  blocks("l" + std::to_string(h.levels.size()) + "/leaf", l, h.leaf_layers);
  for (auto it = tail.rbegin(); it != tail.rend(); ++it) e.stages.insert(e.stages.end(), it->begin(), it->end());
  CostStage head{"head", length, 0, {}, static_cast<std::uint64_t>(length) * cfg.vocab_size};
  head.flops.head = 2ull * length * d * cfg.vocab_size;
  e.stages.push_back(head);
  for (const auto& s : e.stages) {
    e.totals += s.flops;
    e.activation_words += s.activation_words;
  }
  e.total = e.totals.total();
  return e;
}

template <typename T>
std::uint64_t instrumented_flops(const HourglassModel<T>& model, std::size_t length) {
  TokenBatch b{1, length, std::vector<std::int32_t>(length, 0)};
  for (std::size_t i = 0; i < length; ++i) b.tokens[i] = static_cast<std::int32_t>(i % model.spec().config.vocab_size);
  Graph<T> g;
  g.set_grad_enabled(false);
  FlopCounter::Scope scope;
  model.forward(g, b);
  return scope.flops();
}

namespace {

std::string breakdown_fields(const CostBreakdown& c) {
  std::ostringstream os;
  os << c.attention_scores << ',' << c.position_scores << ',' << c.weighted_sum << ',' << c.projections << ','
     << c.feed_forward << ',' << c.resampling << ',' << c.head << ',' << c.total();
  return os.str();
}

nlohmann::json breakdown_json(const CostBreakdown& c) {
  return {{"attention_scores", c.attention_scores}, {"position_scores", c.position_scores},
          {"weighted_sum", c.weighted_sum},         {"projections", c.projections},
          {"feed_forward", c.feed_forward},         {"resampling", c.resampling},
          {"head", c.head},                         {"total", c.total()}};
}

}  // namespace

std::string cost_csv(const CostEstimate& e) {
  std::ostringstream os;
  os << "stage,length,layers,attention_scores,position_scores,weighted_sum,projections,feed_forward,resampling,head,"
        "total,activation_words\n";
  for (const auto& s : e.stages) {
    os << s.name << ',' << s.length << ',' << s.layers << ',' << breakdown_fields(s.flops) << ',' << s.activation_words
       << '\n';
  }
  std::size_t layers = 0;
  for (const auto& s : e.stages) layers += s.layers;
  os << "total,," << layers << ',' << breakdown_fields(e.totals) << ',' << e.activation_words << '\n';
  return os.str();
}

std::string cost_jsonl(const CostEstimate& e) {
  std::ostringstream os;
  for (const auto& s : e.stages) {
    nlohmann::json j{{"stage", s.name}, {"length", s.length}, {"layers", s.layers},
                     {"flops", breakdown_json(s.flops)}, {"activation_words", s.activation_words}};
    os << j.dump() << '\n';
  }
  nlohmann::json t{{"stage", "total"}, {"flops", breakdown_json(e.totals)}, {"activation_words", e.activation_words}};
  os << t.dump();
  return os.str();
}

template <typename T>
RunMeasurement measure_run(HourglassModel<T>& model, const TrainConfig& cfg, std::span<const std::uint8_t> data,
                           std::size_t warmup, std::size_t steps) {
  if (steps == 0) throw UsageError("measure_run needs at least one timed step");
  BatchStream stream(data, cfg.seq_len, cfg.batch_size, cfg.seed);
  Adam<T> adam(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
  RunMeasurement m;
  std::vector<double> times;
  for (std::size_t n = 0; n < warmup + steps; ++n) {
    const auto t0 = std::chrono::steady_clock::now();
    const Batch batch = stream.at(n);
    std::mt19937_64 rng(step_seed(cfg.seed, n + 1));
    ForwardOptions opt;
    opt.training = true;
    opt.rng = &rng;
    Graph<T> g;
    const auto out = model.forward(g, batch.input, opt);
    const auto loss = lm_loss(out.logits, batch.input);
    g.backward(loss.nats);
    adam.step(lr_at(n + 1, cfg));
    model.params().zero_grad();
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (n >= warmup) times.push_back(dt);
    m.activation_words = std::max(m.activation_words, g.activation_words());
  }
  m.steps = times.size();
  m.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  double var = 0;
  for (double t : times) var += (t - m.mean_seconds) * (t - m.mean_seconds);
  m.cv = std::sqrt(var / static_cast<double>(times.size())) / m.mean_seconds;
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  m.median_seconds = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  return m;
}

// ------------------------------------------------------- expressivity driver

std::string ExpressivityConfig::hierarchy() const {
  const std::string core = std::to_string(shortened_layers) + "@" + std::to_string(k);
  if (vanilla_layers == 0) return core;
  const std::string v = std::to_string(vanilla_layers) + "@1";
  return v + " " + core + " " + v;
}

template <typename T>
ExpressivityPoint score_repeats(const HourglassModel<T>& model, const RepeatsData& data, std::size_t k) {
  const TokenBatch& tb = data.tokens;
  const std::size_t vocab = model.spec().config.vocab_size;
  std::size_t hit[3] = {0, 0, 0}, total[3] = {0, 0, 0}, hit_k = 0, total_k = 0;
  for (std::size_t s = 0; s < tb.batch; ++s) {
    Graph<T> g;
    g.set_grad_enabled(false);
    TokenBatch one{1, tb.length, std::vector<std::int32_t>(tb.row(s).begin(), tb.row(s).end())};
    const Tensor<T>& logits = model.forward(g, one).logits.value();
    for (std::size_t p = 0; p < tb.length; ++p) {
      const T* row = logits.ptr() + p * vocab;
      const bool ok = std::max_element(row, row + vocab) - row == tb.at(s, p);
      const auto c = static_cast<std::size_t>(data.classes[p]);
      hit[c] += ok;
      ++total[c];
      if ((p + 1) % k == 0) {
        hit_k += ok;
        ++total_k;
      }
    }
  }
  auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  ExpressivityPoint pt;
  pt.chunk_start = frac(hit[0], total[0]);
  pt.separator = frac(hit[1], total[1]);
  pt.chunk_end = frac(hit[2], total[2]);
  pt.divisible_by_k = frac(hit_k, total_k);
  pt.overall = frac(hit[0] + hit[1] + hit[2], total[0] + total[1] + total[2]);
  return pt;
}

template <typename T>
ExpressivityResult expressivity_experiment(const ExpressivityConfig& cfg,
                                           const std::function<void(const ExpressivityPoint&)>& on_point) {
  if (cfg.k < 2 || cfg.task.length % cfg.k != 0) {
    throw UsageError("repeats length " + std::to_string(cfg.task.length) + " must be divisible by k = " +
                     std::to_string(cfg.k));
  }
  ModelSpec spec;
  spec.config.vocab_size = cfg.task.vocab_size();
  spec.config.d_model = cfg.d_model;
  spec.config.d_ff = 4 * cfg.d_model;
  spec.config.n_heads = cfg.n_heads;
  spec.config.dropout = 0;
  spec.config.max_len = cfg.task.length;
  spec.hierarchy = parse_hierarchy(cfg.hierarchy());
  spec.shorten = cfg.shorten;
  spec.upsample = cfg.upsample;
  spec.validate();
  HourglassModel<T> model(spec, cfg.seed);

  TrainConfig tc;
  tc.lr_peak = cfg.lr;
  tc.warmup_steps = cfg.warmup;
  tc.steps = cfg.steps;
  tc.schedule = Schedule::cosine;
  Adam<T> adam(model.params(), tc.beta1, tc.beta2, tc.eps);
  const RepeatsData held_out = gen_repeats(cfg.task, cfg.eval_sequences, step_seed(cfg.seed, 0, 0x5eed));

  ExpressivityResult res;
  try {
    for (std::size_t n = 1; n <= cfg.steps; ++n) {
      const RepeatsData batch = gen_repeats(cfg.task, cfg.batch, step_seed(cfg.seed, n, 0xda7a));
      Graph<T> g;
      const auto out = model.forward(g, batch.tokens);
      const auto loss = lm_loss(out.logits, batch.tokens);
      if (!std::isfinite(loss.bpc)) throw DivergenceError("loss became non-finite at step " + std::to_string(n));
      g.backward(loss.nats);
      adam.step(lr_at(n, tc));
      model.params().zero_grad();
      if ((cfg.eval_every > 0 && n % cfg.eval_every == 0) || n == cfg.steps) {
        ExpressivityPoint pt = score_repeats(model, held_out, cfg.k);
        pt.step = n;
        pt.train_bpc = loss.bpc;
        res.points.push_back(pt);
        if (on_point) on_point(pt);
      }
    }
  } catch (const DivergenceError& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

template std::uint64_t instrumented_flops<float>(const HourglassModel<float>&, std::size_t);
template std::uint64_t instrumented_flops<double>(const HourglassModel<double>&, std::size_t);
template RunMeasurement measure_run<float>(HourglassModel<float>&, const TrainConfig&, std::span<const std::uint8_t>,
                                           std::size_t, std::size_t);
template RunMeasurement measure_run<double>(HourglassModel<double>&, const TrainConfig&, std::span<const std::uint8_t>,
                                            std::size_t, std::size_t);
template ExpressivityPoint score_repeats<float>(const HourglassModel<float>&, const RepeatsData&, std::size_t);
template ExpressivityPoint score_repeats<double>(const HourglassModel<double>&, const RepeatsData&, std::size_t);
template ExpressivityResult expressivity_experiment<float>(const ExpressivityConfig&,
                                                           const std::function<void(const ExpressivityPoint&)>&);
template ExpressivityResult expressivity_experiment<double>(const ExpressivityConfig&,
                                                            const std::function<void(const ExpressivityPoint&)>&);

}  // namespace hourglass
