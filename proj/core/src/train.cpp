#include "hourglass/train.hpp"

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hourglass/checkpoint.hpp"

namespace hourglass {

template <typename T>
LossResult<T> lm_loss(Var<T> logits, const TokenBatch& targets, std::span<const std::uint8_t> mask) {
  const Shape& s = logits.shape();
  if (s.size() != 3 || s[0] != targets.batch || s[1] != targets.length) {
    throw DimensionError("logits " + shape_str(s) + " do not match targets [" + std::to_string(targets.batch) + ", " +
                         std::to_string(targets.length) + "]");
  }
  LossResult<T> out;
  out.nats = cross_entropy(logits, std::span<const std::int32_t>(targets.tokens), mask);
  out.bpc = static_cast<double>(out.nats.value()[0]) / kLn2;
  return out;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const double peak = cfg.lr_peak;
  const auto s = static_cast<double>(step);
  // A warmup longer than the run ramps linearly over the whole run.
  const std::size_t warmup = std::min(cfg.warmup_steps, cfg.steps);
  const auto w = static_cast<double>(warmup);
  if (step == 0) return 0.0;
  if (step <= warmup) return peak * s / w;
  if (cfg.schedule == Schedule::inv_sqrt) return peak * std::sqrt(std::max(w, 1.0) / s);
  const std::size_t cycle = cfg.cycle_steps > 0 ? cfg.cycle_steps : cfg.steps;
  if (step >= cycle) return 0.0;
  const double progress = (s - w) / (static_cast<double>(cycle) - w);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Adam<T>::Adam(ParamStore<T>& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const Parameter<T>& p = (*params_)[i];
    if (p.grad.shape() != p.value.shape()) continue;
    for (T g : p.grad.data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergenceError("non-finite gradient in parameter '" + p.path + "' at optimizer step " +
                              std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter<T>& p = (*params_)[i];
    if (!p.requires_grad) continue;
    const bool has_grad = p.grad.shape() == p.value.shape();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    T* w = p.value.ptr();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = has_grad ? p.grad[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::string val;
  if (r.val_bpc) {
    char v[64];
    std::snprintf(v, sizeof v, "%.6f", *r.val_bpc);
    val = v;
  }
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%s,%.3f,%zu", r.step, r.lr, r.train_bpc, val.c_str(), r.wall_seconds,
                r.sfd_k);
  return buf;
}

namespace {

struct WindowPlan {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t first_scored = 0;
};

template <typename T>
EvalResult score_windows(const HourglassModel<T>& model, std::span<const std::uint8_t> stream,
                         const std::vector<WindowPlan>& plans, std::size_t batch, std::size_t factor,
                         std::vector<std::uint32_t>* counts) {
  if (batch == 0) throw UsageError("evaluation batch must be positive");
  EvalResult res;
  res.windows = plans.size();
  if (counts) counts->assign(stream.size(), 0);
  const std::size_t vocab = model.spec().config.vocab_size;
  for (std::size_t first = 0; first < plans.size();) {
    // Group consecutive windows of equal length into one forward pass.
    std::size_t last = first + 1;
    while (last < plans.size() && last - first < batch && plans[last].length == plans[first].length) ++last;
    const std::size_t len = plans[first].length;
    TokenBatch tb{last - first, len, std::vector<std::int32_t>((last - first) * len)};
    for (std::size_t w = first; w < last; ++w) {
      for (std::size_t t = 0; t < len; ++t) tb.tokens[(w - first) * len + t] = stream[plans[w].start + t];
    }
    Graph<T> g;
    g.set_grad_enabled(false);
    ForwardOptions opt;
    opt.factor = factor;
    const Tensor<T>& logits = model.forward(g, tb, opt).logits.value();
    for (std::size_t w = first; w < last; ++w) {
      const std::size_t row = w - first;
      for (std::size_t p = plans[w].first_scored; p < len; ++p) {
        const T* z = logits.ptr() + (row * len + p) * vocab;
        double mx = static_cast<double>(z[0]);
        for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(z[v]));
        double se = 0;
        for (std::size_t v = 0; v < vocab; ++v) se += std::exp(static_cast<double>(z[v]) - mx);
        const auto target = static_cast<std::size_t>(tb.tokens[row * len + p]);
        if (target >= vocab) throw IndexError("byte " + std::to_string(target) + " outside model vocabulary");
        res.nats += mx + std::log(se) - static_cast<double>(z[target]);
        ++res.scored;
        if (counts) ++(*counts)[plans[w].start + p];
      }
    }
    first = last;
  }
  res.bpc = res.nats / static_cast<double>(res.scored) / kLn2;
  return res;
}

}  // namespace

template <typename T>
EvalResult eval_overlapping(const HourglassModel<T>& model, std::span<const std::uint8_t> stream, std::size_t window,
                            std::size_t stride, std::size_t tail, std::size_t batch, std::size_t factor,
                            std::vector<std::uint32_t>* score_counts) {
  if (stride == 0 || stride > window) throw UsageError("evaluation stride must lie in [1, window]");
  if (tail != stride) {
    throw UsageError("evaluation tail (" + std::to_string(tail) + ") must equal the stride (" +
                     std::to_string(stride) + ") so every position is scored once");
  }
  const std::size_t n = stream.size();
  std::vector<WindowPlan> plans;
  std::string warning;
  if (n < window) {
    const std::size_t div = model.length_divisor(factor);
    const std::size_t len = (n / div) * div;
    if (len == 0) {
      throw UsageError("stream of " + std::to_string(n) + " bytes is shorter than one group of " +
                       std::to_string(div) + " tokens");
    }
    model.check_length(len, factor);
    warning = "stream of " + std::to_string(n) + " bytes is shorter than the window " + std::to_string(window) +
              "; scored one pass over the first " + std::to_string(len) + " bytes";
    plans.push_back({0, len, 0});
  } else {
    model.check_length(window, factor);
    plans.push_back({0, window, 0});
    std::size_t covered = window;
    for (std::size_t a = stride; a + window <= n; a += stride) {
      plans.push_back({a, window, window - stride});
      covered = a + window;
    }
    if (covered < n) plans.push_back({n - window, window, window - (n - covered)});
  }
  EvalResult res = score_windows(model, stream, plans, batch, factor, score_counts);
  res.warning = warning;
  return res;
}

template <typename T>
EvalResult eval_chunked(const HourglassModel<T>& model, std::span<const std::uint8_t> stream, std::size_t window,
                        std::size_t batch, std::size_t factor, std::vector<std::uint32_t>* score_counts) {
  return eval_overlapping(model, stream, window, window, window, batch, factor, score_counts);
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t salt) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ull ^ (step + 0x632be59bd9b4e019ull) * 0xbf58476d1ce4e5b9ull ^ salt;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::size_t peak_rss_bytes() {
  rusage u{};
  if (getrusage(RUSAGE_SELF, &u) != 0) return 0;
  return static_cast<std::size_t>(u.ru_maxrss) * 1024;
}

template <typename T>
Trainer<T>::Trainer(HourglassModel<T>& model, const Corpus& corpus, RunConfig cfg)
    : model_(&model),
      corpus_(&corpus),
      cfg_(std::move(cfg)),
      adam_(model.params(), cfg_.train.beta1, cfg_.train.beta2, cfg_.train.eps),
      stream_(corpus.train, cfg_.train.seq_len, cfg_.train.batch_size, cfg_.train.seed) {
  cfg_.train.validate();
  const auto& sfd = model.spec().sfd;
  if (sfd.enabled) {
    for (auto k : sfd.factor_set) model.check_length(cfg_.train.seq_len, k);
  } else {
    model.check_length(cfg_.train.seq_len);
  }
}

template <typename T>
MetricsRow Trainer<T>::train_step() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = step_ + 1;
  const Batch batch = stream_.at(step_);
  std::mt19937_64 rng(step_seed(cfg_.train.seed, n));
  ForwardOptions opt;
  opt.training = true;
  opt.rng = &rng;
  opt.factor = model_->spec().sfd.enabled ? model_->draw_factor(rng) : 0;

  Graph<T> g;
  const ForwardResult<T> out = model_->forward(g, batch.input, opt);
  // logits[p] already models input[p] from input[0..p-1].
  const LossResult<T> loss = lm_loss(out.logits, batch.input);
  if (!std::isfinite(loss.bpc)) {
    throw DivergenceError("training loss became non-finite at step " + std::to_string(n));
  }
  g.backward(loss.nats);
  const double lr = lr_at(n, cfg_.train);
  adam_.step(lr);
  model_->params().zero_grad();
  step_ = n;
  wall_offset_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  MetricsRow row;
  row.step = n;
  row.lr = lr;
  row.train_bpc = loss.bpc;
  row.wall_seconds = cfg_.train.record_wall_time ? wall_offset_ : 0.0;
  row.sfd_k = out.factor;
  return row;
}

template <typename T>
double Trainer<T>::validate() const {
  std::span<const std::uint8_t> valid = corpus_->valid;
  if (cfg_.train.eval_bytes > 0 && valid.size() > cfg_.train.eval_bytes) valid = valid.first(cfg_.train.eval_bytes);
  return eval_chunked(*model_, valid, cfg_.train.seq_len, cfg_.eval_batch).bpc;
}

template <typename T>
void Trainer<T>::append_csv(const std::string& file, const std::string& header, const std::string& line) const {
  const auto path = out_dir_ / file;
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  if (fresh) f << header << "\n";
  f << line << "\n";
}

template <typename T>
void Trainer<T>::set_output_dir(std::filesystem::path dir) {
  std::filesystem::create_directories(dir);
  out_dir_ = std::move(dir);
  if (step_ == 0) {
    for (const char* f : {"metrics.csv", "resources.csv"}) std::filesystem::remove(out_dir_ / f);
  }
}

template <typename T>
void Trainer<T>::run_until(std::size_t last) {
  last = std::min(last, cfg_.train.steps);
  while (step_ < last) {
    MetricsRow row = train_step();
    const bool eval_point =
        (cfg_.train.eval_every > 0 && step_ % cfg_.train.eval_every == 0) || step_ == cfg_.train.steps;
    if (eval_point) row.val_bpc = validate();
    history_.push_back(row);
    if (!out_dir_.empty()) {
      append_csv("metrics.csv", kMetricsHeader, format_metrics_row(row));
      if (eval_point) {
        save(out_dir_ / "checkpoint.bin");
        char buf[128];
        std::snprintf(buf, sizeof buf, "%zu,%.3f,%zu", step_, row.wall_seconds, peak_rss_bytes());
        append_csv("resources.csv", "step,wall_seconds,peak_rss_bytes", buf);
      }
    }
    if (on_row) on_row(row);
  }
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& path) const {
  CheckpointData d;
  d.config_text = render_config(cfg_);
  d.step = step_;
  d.seed = cfg_.train.seed;
  d.adam_steps = adam_.steps_taken();
  d.wall_seconds = wall_offset_;
  d.params = snapshot(model_->params());
  d.adam_m = snapshot(model_->params(), adam_.first_moments());
  d.adam_v = snapshot(model_->params(), adam_.second_moments());
  write_checkpoint(path, d);
}

template <typename T>
void Trainer<T>::restore(const std::filesystem::path& path) {
  const CheckpointData d = read_checkpoint(path);
  if (d.run_config().fingerprint() != cfg_.fingerprint() || d.seed != cfg_.train.seed) {
    throw UsageError("checkpoint '" + path.string() + "' was written by a different configuration");
  }
  restore_params(model_->params(), d.params);
  adam_.first_moments() = restore_moments(model_->params(), d.adam_m);
  adam_.second_moments() = restore_moments(model_->params(), d.adam_v);
  adam_.set_steps_taken(d.adam_steps);
  step_ = d.step;
  wall_offset_ = d.wall_seconds;
  history_.clear();
  if (out_dir_.empty()) return;
  // Drop metrics rows logged after the checkpoint; they will be recomputed.
  const auto metrics = out_dir_ / "metrics.csv";
  if (!std::filesystem::exists(metrics)) return;
  std::ifstream in(metrics);
  std::string line, kept;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const std::string first = line.substr(0, comma);
    if (first == "step" || (!first.empty() && std::stoull(first) <= step_)) kept += line + "\n";
  }
  in.close();
  std::ofstream(metrics, std::ios::trunc) << kept;
}

template LossResult<float> lm_loss<float>(Var<float>, const TokenBatch&, std::span<const std::uint8_t>);
template LossResult<double> lm_loss<double>(Var<double>, const TokenBatch&, std::span<const std::uint8_t>);
template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;
template EvalResult eval_overlapping<float>(const HourglassModel<float>&, std::span<const std::uint8_t>, std::size_t,
                                            std::size_t, std::size_t, std::size_t, std::size_t,
                                            std::vector<std::uint32_t>*);
template EvalResult eval_overlapping<double>(const HourglassModel<double>&, std::span<const std::uint8_t>,
                                             std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                                             std::vector<std::uint32_t>*);
template EvalResult eval_chunked<float>(const HourglassModel<float>&, std::span<const std::uint8_t>, std::size_t,
                                        std::size_t, std::size_t, std::vector<std::uint32_t>*);
template EvalResult eval_chunked<double>(const HourglassModel<double>&, std::span<const std::uint8_t>, std::size_t,
                                         std::size_t, std::size_t, std::vector<std::uint32_t>*);

}  // namespace hourglass
