#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hourglass/config.hpp"
#include "hourglass/data.hpp"
#include "hourglass/model.hpp"

namespace hourglass {

// ---------------------------------------------------------------- leak audit

struct AuditOffender {
  std::size_t p = 0;  // output position
  std::size_t j = 0;  // input position, j >= p
  double value = 0;
};

// matrix(p, j) = max over seeds, logit components and embedding components of
// |d logits[p] / d embedding[j]|. Pass iff every entry with j >= p is at most
// `tolerance`.
struct AuditReport {
  std::string label;
  std::string fingerprint;
  std::size_t length = 0;
  std::size_t seeds = 0;
  double tolerance = 0;
  std::vector<double> matrix;  // length * length, row-major in p
  bool pass = true;
  double worst = 0;  // largest entry with j >= p
  std::size_t worst_p = 0;
  std::size_t worst_j = 0;
  std::string worst_path;              // empty when passing
  std::vector<AuditOffender> offenders;  // entries above tolerance, largest first

  double at(std::size_t p, std::size_t j) const { return matrix[p * length + j]; }
};

using AuditForward = std::function<ForwardResult<double>(Graph<double>&, const TokenBatch&)>;

// Exact jacobian of a forward closure on one random token sequence: the
// sequence is replicated once per vocabulary entry and row v of the batch
// seeds output component v, so one backward pass per output position yields
// every derivative. Throws AuditError when two forward passes disagree or a
// derivative is not finite.
AuditReport leak_audit(const AuditForward& forward, std::size_t length, std::size_t vocab, double tolerance,
                       std::uint64_t token_seed = 1);

// Combines per-seed reports by elementwise maximum and recomputes the verdict.
AuditReport merge_reports(const std::vector<AuditReport>& reports);

struct AuditCase {
  std::string label;
  ModelSpec spec;
  std::size_t length = 0;
  std::optional<std::size_t> shift_override;
};

// Audits `spec` with `seeds` independently randomized parameter sets.
AuditReport audit_model(const AuditCase& c, std::size_t seeds, double tolerance, std::uint64_t base_seed = 1);

// Tiny-width model for audits: vocab_size and d_model as given, two heads,
// d_ff = 2 d_model, no dropout, max_len = length.
ModelSpec audit_spec(const std::string& hierarchy, ShortenMethod shorten, UpsampleMethod upsample, std::size_t length,
                     std::size_t d_model = 16, std::size_t vocab = 16);

// Longest length <= limit divisible by `divisor`.
std::size_t audit_length(std::size_t divisor, std::size_t limit = 48);

// Every shortener x upsampler x k in {2,3,4} x depth in {1,2}. With
// `sabotage`, only k in {3,4} with each shift 0 < s < k-1.
std::vector<AuditCase> audit_grid(bool sabotage, std::size_t d_model = 16, std::size_t vocab = 16,
                                  std::size_t length_limit = 48);

// Runs cases on `threads` workers; each case owns its models.
std::vector<AuditReport> run_audits(const std::vector<AuditCase>& cases, std::size_t seeds, double tolerance,
                                    std::size_t threads = 1);

std::string audit_csv(const AuditReport& r);    // p,j,max_abs_derivative,verdict
std::string audit_jsonl(const AuditReport& r);  // one JSON object, no trailing newline

// ---------------------------------------------------------------- cost model

// Floating-point operations (2 per multiply-add) by category.
struct CostBreakdown {
  std::uint64_t attention_scores = 0;  // content scores q.k
  std::uint64_t position_scores = 0;   // q.r scores and the r projection
  std::uint64_t weighted_sum = 0;
  std::uint64_t projections = 0;  // q, k, v, output
  std::uint64_t feed_forward = 0;
  std::uint64_t resampling = 0;  // linear pooling / upsampling matrices
  std::uint64_t head = 0;

  std::uint64_t total() const;
  CostBreakdown& operator+=(const CostBreakdown& o);
};

struct CostStage {
  std::string name;
  std::size_t length = 0;  // query length at this stage
  std::size_t layers = 0;
  CostBreakdown flops;
  std::uint64_t activation_words = 0;
};

struct CostEstimate {
  std::vector<CostStage> stages;
  CostBreakdown totals;
  std::uint64_t total = 0;
  std::uint64_t activation_words = 0;
};

// One pre-norm self-attention block over a sequence of length l.
CostBreakdown block_cost(std::size_t l, std::size_t d, std::size_t d_ff);
// One cross-attention resampling block (queries lq, keys lk, relative rows lr).
CostBreakdown cross_block_cost(std::size_t lq, std::size_t lk, std::size_t lr, std::size_t d, std::size_t d_ff);

// Closed-form count for one length-L sequence. Bias additions and
// normalizations are not counted.
CostEstimate estimate_cost(const Hierarchy& h, std::size_t length, const ModelConfig& cfg, ShortenMethod shorten,
                           UpsampleMethod upsample);

// Tally of the op counter over one forward pass of a single sequence.
template <typename T>
std::uint64_t instrumented_flops(const HourglassModel<T>& model, std::size_t length);

std::string cost_csv(const CostEstimate& e);
std::string cost_jsonl(const CostEstimate& e);

struct RunMeasurement {
  double median_seconds = 0;
  double mean_seconds = 0;
  double cv = 0;  // standard deviation / mean of per-step times
  std::size_t steps = 0;
  std::size_t activation_words = 0;  // op-output words of one training graph
};

// Times `steps` full optimizer steps (forward, backward, update) after
// `warmup` untimed ones, on batches drawn from `data`.
template <typename T>
RunMeasurement measure_run(HourglassModel<T>& model, const TrainConfig& cfg, std::span<const std::uint8_t> data,
                           std::size_t warmup = 3, std::size_t steps = 20);

// ------------------------------------------------------- expressivity driver

struct ExpressivityConfig {
  RepeatsTask task;
  std::size_t k = 3;
  std::size_t vanilla_layers = 1;  // before and after the shortened stack
  std::size_t shortened_layers = 4;
  ShortenMethod shorten = ShortenMethod::avg_pool;
  UpsampleMethod upsample = UpsampleMethod::attn_linearU;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t batch = 4;
  std::size_t steps = 5000;
  std::size_t eval_every = 250;
  std::size_t eval_sequences = 32;
  double lr = 1e-3;
  std::size_t warmup = 100;
  std::uint64_t seed = 1;

  std::string hierarchy() const;
};

struct ExpressivityPoint {
  std::size_t step = 0;
  double train_bpc = 0;
  double chunk_start = 0;
  double separator = 0;
  double chunk_end = 0;
  double divisible_by_k = 0;  // positions p with (p + 1) % k == 0
  double overall = 0;
};

struct ExpressivityResult {
  std::vector<ExpressivityPoint> points;
  bool failed = false;
  std::string error;
};

inline constexpr const char* kExpressivityHeader =
    "variant,step,train_bpc,chunk_start_acc,separator_acc,chunk_end_acc,divisible_by_k_acc,overall_acc";

// Argmax accuracies of `model` on held-out sequences, by position class.
template <typename T>
ExpressivityPoint score_repeats(const HourglassModel<T>& model, const RepeatsData& data, std::size_t k);

// Trains a fresh model on the repeats task, scoring at every eval point.
// Divergence is reported in the result rather than thrown.
template <typename T>
ExpressivityResult expressivity_experiment(const ExpressivityConfig& cfg,
                                           const std::function<void(const ExpressivityPoint&)>& on_point = {});

}  // namespace hourglass
