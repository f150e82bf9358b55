#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hourglass/model.hpp"

namespace hourglass {

enum class Schedule { cosine, inv_sqrt };

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t seq_len = 512;
  std::size_t steps = 2000;
  double lr_peak = 4e-4;
  std::size_t warmup_steps = 200;
  Schedule schedule = Schedule::cosine;
  std::size_t cycle_steps = 0;  // cosine cycle length; 0 means `steps`
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::uint64_t seed = 1;
  std::size_t eval_every = 250;
  std::size_t eval_bytes = 65536;  // validation prefix scored at each eval; 0 = whole split
  bool record_wall_time = true;

  void validate() const;
};

// Every setting of every subcommand, settable from a flat `key = value`
// file and overridable per key on the command line.
struct RunConfig {
  // model
  std::string hierarchy = "2@1 8@3 2@1";
  ShortenMethod shorten = ShortenMethod::avg_pool;
  UpsampleMethod upsample = UpsampleMethod::attn_linearU;
  ModelConfig model;
  std::vector<std::size_t> sfd_factors;  // empty disables shorten factor dropout

  TrainConfig train;

  // paths
  std::string corpus;
  std::string out_dir = "runs";
  std::string checkpoint;
  bool resume = false;

  // evaluation
  std::string eval_split = "test";
  std::size_t eval_window = 512;
  std::size_t eval_stride = 128;
  std::size_t eval_tail = 128;
  std::size_t eval_batch = 8;

  // leak audit
  bool audit_grid = false;
  std::size_t audit_seeds = 3;
  std::size_t audit_d_model = 16;
  std::size_t audit_vocab = 16;
  std::size_t audit_length = 0;  // 0 picks the smallest convenient length <= 48
  double audit_tolerance = 1e-12;
  std::int64_t sabotage_shift = -1;  // >= 0 replaces every k-1 shift

  // cost model
  std::size_t cost_length = 2048;

  // synthetic repeats experiment
  std::size_t synth_alphabet = 4;
  std::size_t synth_length = 384;
  std::size_t synth_k = 3;
  std::size_t synth_vanilla_layers = 1;
  std::size_t synth_shortened_layers = 4;
  std::string synth_variant = "both";  // with | without | both
  std::size_t synth_steps = 5000;
  std::size_t synth_eval_every = 250;
  std::size_t synth_eval_sequences = 32;
  std::size_t synth_batch = 4;
  std::size_t synth_d_model = 32;
  double synth_lr = 1e-3;

  ModelSpec model_spec() const;
  // Identifies the experiment: every key except seed and output paths.
  std::uint64_t fingerprint() const;
  std::string run_dir_name() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Sets one key; accepts '-' in place of '_'. Throws ConfigError naming the
// key for unknown keys and malformed values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Applies a `key = value` text ('#' starts a comment). Errors name the key
// and the 1-based line.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Canonical `key = value` rendering of every key.
std::string render_config(const RunConfig& cfg);

Schedule parse_schedule(const std::string& name);
std::string to_string(Schedule s);

}  // namespace hourglass
