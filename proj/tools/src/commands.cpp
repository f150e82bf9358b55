#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <thread>

#include "hourglass/audit.hpp"
#include "hourglass/checkpoint.hpp"
#include "hourglass/runtime.hpp"
#include "hourglass/train.hpp"

namespace hourglass::cli {
namespace fs = std::filesystem;

namespace {

fs::path prepare_run_dir(const RunConfig& cfg) {
  const fs::path dir = fs::path(cfg.out_dir) / cfg.run_dir_name();
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt", std::ios::trunc) << render_config(cfg);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
}

void append_row(const fs::path& path, const std::string& header, const std::string& row) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  if (fresh) f << header << '\n';
  f << row << '\n';
}

Corpus require_corpus(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw UsageError("no corpus given; set corpus = <file> or pass --corpus <file>");
  return load_corpus(cfg.corpus);
}

template <typename T>
int train_as(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Corpus corpus = require_corpus(cfg);
  HourglassModel<T> model(cfg.model_spec(), cfg.train.seed);
  Trainer<T> trainer(model, corpus, cfg);
  const fs::path dir = prepare_run_dir(cfg);
  trainer.set_output_dir(dir);
  const fs::path ckpt = cfg.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(cfg.checkpoint);
  if (cfg.resume) {
    if (!fs::exists(ckpt)) throw IoError("cannot resume: checkpoint '" + ckpt.string() + "' does not exist");
    trainer.restore(ckpt);
    err << "resumed from " << ckpt.string() << " at step " << trainer.step() << '\n';
  }
  err << "training " << cfg.hierarchy << " (" << model.parameter_count() << " parameters, "
      << to_string(precision_from_env()) << ") on " << corpus.source << ", " << corpus.train.size()
      << " training bytes; run directory " << dir.string() << '\n';
  trainer.on_row = [&](const MetricsRow& r) {
    if (!r.val_bpc) return;
    err << "step " << r.step << "  train_bpc " << std::fixed << std::setprecision(4) << r.train_bpc << "  val_bpc "
        << *r.val_bpc << "  wall " << std::setprecision(1) << r.wall_seconds << "s" << std::defaultfloat << '\n';
  };
  trainer.run();
  const auto& h = trainer.history();
  double val = 0;
  for (const auto& r : h) {
    if (r.val_bpc) val = *r.val_bpc;
  }
  out << "run_dir " << dir.string() << '\n' << "final_val_bpc " << std::fixed << std::setprecision(4) << val << '\n';
  return kOk;
}

template <typename T>
int eval_as(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::optional<HourglassModel<T>> model;
  if (!cfg.checkpoint.empty()) {
    model.emplace(load_model<T>(read_checkpoint(cfg.checkpoint)));
  } else {
    err << "warning: no checkpoint given; evaluating a freshly initialized model\n";
    model.emplace(cfg.model_spec(), cfg.train.seed);
  }
  std::vector<std::uint8_t> all;
  Corpus corpus;
  std::span<const std::uint8_t> stream;
  if (cfg.corpus.empty()) throw UsageError("no corpus given; set corpus = <file> or pass --corpus <file>");
  if (cfg.eval_split == "all") {
    all = read_bytes(cfg.corpus);
    stream = all;
  } else {
    corpus = load_corpus(cfg.corpus);
    stream = corpus.split(cfg.eval_split);
  }
  const EvalResult r =
      eval_overlapping(*model, stream, cfg.eval_window, cfg.eval_stride, cfg.eval_tail, cfg.eval_batch);
  if (!r.warning.empty()) err << "warning: " << r.warning << '\n';
  char row[512];
  std::snprintf(row, sizeof row, "%s,%s,%zu,%zu,%zu,%zu,%.6f", cfg.checkpoint.c_str(), cfg.eval_split.c_str(),
                cfg.eval_window, cfg.eval_stride, cfg.eval_tail, r.scored, r.bpc);
  const fs::path dir = prepare_run_dir(cfg);
  append_row(dir / "eval.csv", "checkpoint,split,window,stride,tail,scored,bpc", row);
  out << "bpc " << std::fixed << std::setprecision(4) << r.bpc << '\n';
  return kOk;
}

AuditCase single_case(const RunConfig& cfg) {
  const ModelSpec base = cfg.model_spec();
  const std::size_t divisor = base.hierarchy.total_factor();
  const std::size_t length = cfg.audit_length > 0 ? cfg.audit_length : audit_length(divisor);
  AuditCase c;
  c.spec = audit_spec(cfg.hierarchy, cfg.shorten, cfg.upsample, length, cfg.audit_d_model, cfg.audit_vocab);
  c.length = length;
  c.label = cfg.hierarchy + " " + to_string(cfg.shorten) + "/" + to_string(cfg.upsample);
  return c;
}

template <typename T>
int synth_as(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, std::size_t>> variants;
  if (cfg.synth_variant == "with" || cfg.synth_variant == "both") variants.emplace_back("with", cfg.synth_vanilla_layers);
  if (cfg.synth_variant == "without" || cfg.synth_variant == "both") variants.emplace_back("without", 0);
  if (variants.empty()) throw ConfigError("synth_variant must be with, without or both, got '" + cfg.synth_variant + "'");
  const fs::path dir = prepare_run_dir(cfg);
  const fs::path csv = dir / "synth.csv";
  fs::remove(csv);
  bool failed = false;
  for (const auto& [name, vanilla] : variants) {
    ExpressivityConfig ec;
    ec.task.alphabet = cfg.synth_alphabet;
    ec.task.length = cfg.synth_length;
    ec.k = cfg.synth_k;
    ec.vanilla_layers = vanilla;
    ec.shortened_layers = cfg.synth_shortened_layers;
    ec.shorten = cfg.shorten;
    ec.upsample = cfg.upsample;
    ec.d_model = cfg.synth_d_model;
    ec.n_heads = cfg.model.n_heads;
    ec.batch = cfg.synth_batch;
    ec.steps = cfg.synth_steps;
    ec.eval_every = cfg.synth_eval_every;
    ec.eval_sequences = cfg.synth_eval_sequences;
    ec.lr = cfg.synth_lr;
    ec.seed = cfg.train.seed;
    err << "synth variant " << name << ": hierarchy " << ec.hierarchy() << '\n';
    const auto res = expressivity_experiment<T>(ec, [&](const ExpressivityPoint& p) {
      char row[256];
      std::snprintf(row, sizeof row, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", name.c_str(), p.step, p.train_bpc,
                    p.chunk_start, p.separator, p.chunk_end, p.divisible_by_k, p.overall);
      append_row(csv, kExpressivityHeader, row);
      err << "  step " << p.step << "  chunk_end " << std::fixed << std::setprecision(3) << p.chunk_end
          << "  divisible_by_k " << p.divisible_by_k << std::defaultfloat << '\n';
    });
    if (res.failed) {
      err << "synth variant " << name << " failed: " << res.error << '\n';
      failed = true;
      continue;
    }
    const auto& last = res.points.back();
    out << name << " chunk_start " << std::fixed << std::setprecision(4) << last.chunk_start << " separator "
        << last.separator << " chunk_end " << last.chunk_end << " divisible_by_k " << last.divisible_by_k
        << std::defaultfloat << '\n';
  }
  out << "csv " << csv.string() << '\n';
  return failed ? kRuntime : kOk;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return precision_from_env() == Precision::f64 ? train_as<double>(cfg, out, err) : train_as<float>(cfg, out, err);
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return precision_from_env() == Precision::f64 ? eval_as<double>(cfg, out, err) : eval_as<float>(cfg, out, err);
}

int cmd_audit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  // Audits always run in binary64 regardless of HOURGLASS_PRECISION.
  std::vector<AuditCase> cases;
  std::vector<AuditReport> reports;
  if (cfg.audit_grid) {
    cases = audit_grid(false, cfg.audit_d_model, cfg.audit_vocab, cfg.audit_length > 0 ? cfg.audit_length : 48);
  } else if (!cfg.checkpoint.empty()) {
    const CheckpointData data = read_checkpoint(cfg.checkpoint);
    HourglassModel<double> model = load_model<double>(data);
    const std::size_t length =
        cfg.audit_length > 0 ? cfg.audit_length : audit_length(model.length_divisor());
    ForwardOptions opt;
    if (cfg.sabotage_shift >= 0) opt.shift_override = static_cast<std::size_t>(cfg.sabotage_shift);
    const AuditForward f = [&](Graph<double>& g, const TokenBatch& b) { return model.forward(g, b, opt); };
    AuditReport r = leak_audit(f, length, model.spec().config.vocab_size, cfg.audit_tolerance);
    r.label = "checkpoint " + cfg.checkpoint;
    reports.push_back(r);
  } else {
    cases.push_back(single_case(cfg));
  }
  if (cfg.sabotage_shift >= 0) {
    for (auto& c : cases) {
      c.shift_override = static_cast<std::size_t>(cfg.sabotage_shift);
      c.label += " shift=" + std::to_string(cfg.sabotage_shift);
    }
  }
  if (!cases.empty()) {
    err << "auditing " << cases.size() << " configuration(s), " << cfg.audit_seeds << " seed(s) each\n";
    reports = run_audits(cases, cfg.audit_seeds, cfg.audit_tolerance, std::thread::hardware_concurrency());
  }

  const fs::path dir = prepare_run_dir(cfg);
  std::string jsonl;
  std::size_t failures = 0;
  out << std::left << std::setw(56) << "configuration" << std::setw(8) << "verdict"
      << "worst(j>=p)\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    jsonl += audit_jsonl(r) + "\n";
    char worst[32];
    std::snprintf(worst, sizeof worst, "%.3e", r.worst);
    out << std::left << std::setw(56) << r.label << std::setw(8) << (r.pass ? "pass" : "FAIL") << worst << '\n';
    if (!r.pass) {
      ++failures;
      write_text(dir / ("audit_" + std::to_string(i) + ".csv"), audit_csv(r));
      out << "  offending (p, j):";
      for (std::size_t k = 0; k < std::min<std::size_t>(8, r.offenders.size()); ++k) {
        out << " (" << r.offenders[k].p << ", " << r.offenders[k].j << ")";
      }
      out << '\n';
    }
  }
  if (reports.size() == 1) write_text(dir / "audit.csv", audit_csv(reports.front()));
  write_text(dir / "audit.jsonl", jsonl);
  out << reports.size() - failures << "/" << reports.size() << " passed; reports in " << dir.string() << '\n';
  return failures == 0 ? kOk : kAuditFailure;
}

int cmd_cost(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const ModelSpec spec = cfg.model_spec();
  const CostEstimate e = estimate_cost(spec.hierarchy, cfg.cost_length, spec.config, spec.shorten, spec.upsample);
  const std::string baseline = std::to_string(spec.hierarchy.total_layers()) + "@1";
  const CostEstimate b =
      estimate_cost(parse_hierarchy(baseline), cfg.cost_length, spec.config, spec.shorten, spec.upsample);
  const fs::path dir = prepare_run_dir(cfg);
  write_text(dir / "cost.csv", cost_csv(e));
  write_text(dir / "cost.jsonl", cost_jsonl(e) + "\n");
  out << cost_csv(e);
  auto ratio = [](std::uint64_t a, std::uint64_t c) { return c ? static_cast<double>(a) / static_cast<double>(c) : 0.0; };
  out << "\nratio vs " << baseline << " at L=" << cfg.cost_length << '\n' << std::fixed << std::setprecision(4)
      << "attention_scores " << ratio(e.totals.attention_scores, b.totals.attention_scores) << '\n'
      << "feed_forward " << ratio(e.totals.feed_forward, b.totals.feed_forward) << '\n'
      << "total " << ratio(e.total, b.total) << '\n'
      << "activation_words " << ratio(e.activation_words, b.activation_words) << '\n';
  return kOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return precision_from_env() == Precision::f64 ? synth_as<double>(cfg, out, err) : synth_as<float>(cfg, out, err);
}

}  // namespace hourglass::cli
