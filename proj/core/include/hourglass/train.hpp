#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hourglass/config.hpp"
#include "hourglass/data.hpp"
#include "hourglass/model.hpp"

namespace hourglass {

inline constexpr double kLn2 = 0.69314718055994530941723212145818;

template <typename T>
struct LossResult {
  Var<T> nats;  // mean cross-entropy over selected positions
  double bpc = 0;
};

// Mean next-token cross-entropy of logits [B, L, V] against targets [B, L];
// `mask` (one byte per position, nonzero = counted) may be empty.
template <typename T>
LossResult<T> lm_loss(Var<T> logits, const TokenBatch& targets, std::span<const std::uint8_t> mask = {});

double lr_at(std::size_t step, const TrainConfig& cfg);

// Adam with bias correction; no weight decay, no clipping.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& params, double beta1, double beta2, double eps);

  // Applies one update from the accumulated gradients. Throws
  // DivergenceError naming the parameter if any gradient is not finite.
  void step(double lr);

  std::uint64_t steps_taken() const { return t_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps_taken(std::uint64_t t) { t_ = t; }

 private:
  ParamStore<T>* params_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0;
  double train_bpc = 0;
  std::optional<double> val_bpc;
  double wall_seconds = 0;
  std::size_t sfd_k = 0;
};

inline constexpr const char* kMetricsHeader = "step,lr,train_bpc,val_bpc,wall_seconds,sfd_k";
std::string format_metrics_row(const MetricsRow& row);

struct EvalResult {
  double bpc = 0;
  double nats = 0;            // summed over scored positions
  std::size_t scored = 0;
  std::size_t windows = 0;
  std::string warning;       // set when the stream was too short for the requested window
};

// Scores every position of `stream` exactly once. The first window scores
// all of its positions; each later window, `stride` further on, scores only
// its last `tail` positions (tail must equal stride); one end-aligned window
// scores whatever remains. A stream shorter than `window` is scored in one
// pass over its longest processable prefix, with a warning.
template <typename T>
EvalResult eval_overlapping(const HourglassModel<T>& model, std::span<const std::uint8_t> stream, std::size_t window,
                            std::size_t stride, std::size_t tail, std::size_t batch = 8, std::size_t factor = 0,
                            std::vector<std::uint32_t>* score_counts = nullptr);

// Non-overlapping windows scoring all their positions.
template <typename T>
EvalResult eval_chunked(const HourglassModel<T>& model, std::span<const std::uint8_t> stream, std::size_t window,
                        std::size_t batch = 8, std::size_t factor = 0,
                        std::vector<std::uint32_t>* score_counts = nullptr);

// Mixes a seed with a step index into an independent stream seed.
std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t salt = 0);

// Owns the optimizer state of one training run. Batch n and the dropout
// stream of step n depend only on (seed, n), so a run restored from a
// checkpoint continues exactly as the uninterrupted run would.
template <typename T>
class Trainer {
 public:
  Trainer(HourglassModel<T>& model, const Corpus& corpus, RunConfig cfg);

  // Runs optimizer steps until `step()` reaches `last` (at most the
  // configured step count), evaluating and checkpointing at eval points
  // when an output directory is set.
  void run_until(std::size_t last);
  void run() { run_until(cfg_.train.steps); }

  // One optimizer step; returns its metrics row (without validation).
  MetricsRow train_step();
  double validate() const;

  std::size_t step() const { return step_; }
  const std::vector<MetricsRow>& history() const { return history_; }
  Adam<T>& optimizer() { return adam_; }
  const RunConfig& config() const { return cfg_; }
  double wall_offset() const { return wall_offset_; }

  // Writes metrics.csv, eval.csv, resources.csv and checkpoint.bin here.
  void set_output_dir(std::filesystem::path dir);
  void save(const std::filesystem::path& path) const;
  void restore(const std::filesystem::path& path);

  std::function<void(const MetricsRow&)> on_row;

 private:
  void append_csv(const std::string& file, const std::string& header, const std::string& line) const;

  HourglassModel<T>* model_;
  const Corpus* corpus_;
  RunConfig cfg_;
  Adam<T> adam_;
  BatchStream stream_;
  std::size_t step_ = 0;
  double wall_offset_ = 0;
  std::vector<MetricsRow> history_;
  std::filesystem::path out_dir_;
};

// Peak resident set size of this process in bytes (0 when unavailable).
std::size_t peak_rss_bytes();

}  // namespace hourglass
