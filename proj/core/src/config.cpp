#include "hourglass/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hourglass/data.hpp"

namespace hourglass {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
  if (!(lr_peak > 0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam_eps must be positive");
}

Schedule parse_schedule(const std::string& name) {
  if (name == "cosine") return Schedule::cosine;
  if (name == "inv_sqrt") return Schedule::inv_sqrt;
  throw ConfigError("unknown schedule '" + name + "' (expected cosine or inv_sqrt)");
}

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "inv_sqrt"; }

ModelSpec RunConfig::model_spec() const {
  ModelSpec s;
  s.config = model;
  s.hierarchy = parse_hierarchy(hierarchy);
  s.shorten = shorten;
  s.upsample = upsample;
  s.sfd.enabled = !sfd_factors.empty();
  s.sfd.factor_set = sfd_factors;
  s.validate();
  return s;
}

namespace {

const char* const kUnhashed[] = {"seed", "out_dir", "checkpoint", "resume", "corpus"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v, const char* what) {
  N out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) {
    throw ConfigError("key '" + key + "': expected " + what + ", got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return parse_number<std::size_t>(key, v, "a nonnegative integer");
}

double parse_real(const std::string& key, const std::string& v) { return parse_number<double>(key, v, "a number"); }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_real(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(key, item));
  }
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

#define HG_SIZE(NAME, FIELD, HELP)                                                                     \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(NAME, v); },             \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                     \
  }
#define HG_REAL(NAME, FIELD, HELP)                                                                     \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_real(NAME, v); },             \
        [](const RunConfig& c) { return fmt_real(c.FIELD); }                                           \
  }
#define HG_BOOL(NAME, FIELD, HELP)                                                                     \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); },             \
        [](const RunConfig& c) { return fmt_bool(c.FIELD); }                                           \
  }
#define HG_TEXT(NAME, FIELD, HELP)                                                                     \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = v; },                               \
        [](const RunConfig& c) { return c.FIELD; }                                                     \
  }

std::vector<ConfigKey> make_keys() {
  return {
      ConfigKey{"hierarchy", "stage list `N@f ...`, e.g. \"2@1 8@3 2@1\"",
                [](RunConfig& c, const std::string& v) {
                  parse_hierarchy(v);
                  c.hierarchy = v;
                },
                [](const RunConfig& c) { return c.hierarchy; }},
      ConfigKey{"shorten", "avg_pool | linear_pool | attn_pool_avg | attn_pool_linear",
                [](RunConfig& c, const std::string& v) { c.shorten = parse_shorten_method(v); },
                [](const RunConfig& c) { return to_string(c.shorten); }},
      ConfigKey{"upsample", "repeat | linear | attn_identityU | attn_linearU",
                [](RunConfig& c, const std::string& v) { c.upsample = parse_upsample_method(v); },
                [](const RunConfig& c) { return to_string(c.upsample); }},
      HG_SIZE("vocab_size", model.vocab_size, "token vocabulary (256 for bytes)"),
      HG_SIZE("d_model", model.d_model, "model width"),
      HG_SIZE("d_ff", model.d_ff, "feed-forward inner width"),
      HG_SIZE("n_heads", model.n_heads, "attention heads (must divide d_model)"),
      HG_REAL("dropout", model.dropout, "dropout rate on sublayer outputs while training"),
      HG_SIZE("attention_window", model.attention_window, "local attention span at full resolution; 0 = causal"),
      HG_SIZE("max_len", model.max_len, "longest sequence covered by relative position tables"),
      ConfigKey{"sfd_factors", "shorten factor dropout set, e.g. \"2,3\"; empty disables",
                [](RunConfig& c, const std::string& v) { c.sfd_factors = parse_list("sfd_factors", v); },
                [](const RunConfig& c) { return fmt_list(c.sfd_factors); }},

      HG_SIZE("batch_size", train.batch_size, "training windows per step"),
      HG_SIZE("seq_len", train.seq_len, "training window length"),
      HG_SIZE("steps", train.steps, "optimizer steps"),
      HG_REAL("lr", train.lr_peak, "peak learning rate"),
      HG_SIZE("warmup_steps", train.warmup_steps, "linear warmup steps"),
      ConfigKey{"schedule", "cosine | inv_sqrt",
                [](RunConfig& c, const std::string& v) { c.train.schedule = parse_schedule(v); },
                [](const RunConfig& c) { return to_string(c.train.schedule); }},
      HG_SIZE("cycle_steps", train.cycle_steps, "cosine cycle length; 0 = steps"),
      HG_REAL("adam_beta1", train.beta1, "Adam beta1"),
      HG_REAL("adam_beta2", train.beta2, "Adam beta2"),
      HG_REAL("adam_eps", train.eps, "Adam epsilon"),
      ConfigKey{"seed", "master seed for init, data order, dropout",
                [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v, "an unsigned integer"); },
                [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      HG_SIZE("eval_every", train.eval_every, "steps between validation evals and checkpoints; 0 = only at the end"),
      HG_SIZE("eval_bytes", train.eval_bytes, "validation bytes scored at each eval; 0 = whole split"),
      HG_BOOL("record_wall_time", train.record_wall_time, "write measured wall_seconds (false writes 0)"),

      HG_TEXT("corpus", corpus, "byte corpus file"),
      HG_TEXT("out_dir", out_dir, "parent directory of per-run directories"),
      HG_TEXT("checkpoint", checkpoint, "checkpoint file for eval/audit"),
      HG_BOOL("resume", resume, "continue training from the run directory's checkpoint"),

      HG_TEXT("eval_split", eval_split, "train | valid | test"),
      HG_SIZE("eval_window", eval_window, "evaluation window length"),
      HG_SIZE("eval_stride", eval_stride, "distance between evaluation windows"),
      HG_SIZE("eval_tail", eval_tail, "scored positions at the end of each window (must equal eval_stride)"),
      HG_SIZE("eval_batch", eval_batch, "windows per evaluation forward pass"),

      HG_BOOL("audit_grid", audit_grid, "audit every shortener x upsampler x k x depth cell"),
      HG_SIZE("audit_seeds", audit_seeds, "random parameter draws per audited model"),
      HG_SIZE("audit_d_model", audit_d_model, "model width used by audits"),
      HG_SIZE("audit_vocab", audit_vocab, "vocabulary used by audits"),
      HG_SIZE("audit_length", audit_length, "audited sequence length; 0 = automatic"),
      HG_REAL("audit_tolerance", audit_tolerance, "largest allowed |d logits[p] / d input[j]| for j >= p"),
      ConfigKey{"sabotage_shift", "replace every k-1 pre-shortening shift by this value; -1 = off",
                [](RunConfig& c, const std::string& v) {
                  c.sabotage_shift = parse_number<std::int64_t>("sabotage_shift", v, "an integer");
                },
                [](const RunConfig& c) { return std::to_string(c.sabotage_shift); }},

      HG_SIZE("cost_length", cost_length, "sequence length for the cost model"),

      HG_SIZE("synth_alphabet", synth_alphabet, "repeats task alphabet size"),
      HG_SIZE("synth_length", synth_length, "repeats task sequence length (multiple of 3)"),
      HG_SIZE("synth_k", synth_k, "shorten factor of the synthetic models"),
      HG_SIZE("synth_vanilla_layers", synth_vanilla_layers, "pre and post vanilla layers of the with-vanilla model"),
      HG_SIZE("synth_shortened_layers", synth_shortened_layers, "shortened layers of the synthetic models"),
      HG_TEXT("synth_variant", synth_variant, "with | without | both"),
      HG_SIZE("synth_steps", synth_steps, "training steps per synthetic model"),
      HG_SIZE("synth_eval_every", synth_eval_every, "steps between accuracy evaluations"),
      HG_SIZE("synth_eval_sequences", synth_eval_sequences, "held-out sequences per accuracy evaluation"),
      HG_SIZE("synth_batch", synth_batch, "sequences per synthetic training step"),
      HG_SIZE("synth_d_model", synth_d_model, "width of the synthetic models (d_ff = 4x)"),
      HG_REAL("synth_lr", synth_lr, "peak learning rate of the synthetic runs"),
  };
}

#undef HG_SIZE
#undef HG_REAL
#undef HG_BOOL
#undef HG_TEXT

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  std::string k = key;
  for (auto& ch : k) {
    if (ch == '-') ch = '_';
  }
  for (const auto& entry : config_keys()) {
    if (entry.name != k) continue;
    try {
      entry.set(cfg, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("key '" + k + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  apply_config_text(cfg, std::string(bytes.begin(), bytes.end()), path.string());
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::uint64_t RunConfig::fingerprint() const {
  std::string canon;
  for (const auto& k : config_keys()) {
    bool skip = false;
    for (const char* u : kUnhashed) skip = skip || k.name == u;
    if (!skip) canon += k.name + "=" + k.get(*this) + "\n";
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(canon.data());
  return fnv1a64(std::span<const std::uint8_t>(p, canon.size()));
}

std::string RunConfig::run_dir_name() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint()));
  return std::string(buf) + "-s" + std::to_string(train.seed);
}

}  // namespace hourglass
