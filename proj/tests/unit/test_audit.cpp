#include <doctest.h>

#include <json.hpp>
#include <set>
#include <sstream>

#include "hourglass/audit.hpp"
#include "support.hpp"

using namespace hourglass;

namespace {

// Forward closure whose logits[p] = W * (sum of embeddings at positions in [p - back, p + ahead]).
AuditForward window_forward(std::size_t vocab, std::size_t d, std::size_t back, std::size_t ahead) {
  auto store = std::make_shared<ParamStore<double>>();
  store->add("embed", {vocab, d}, InitKind::normal);
  store->add("w", {d, vocab}, InitKind::normal);
  store->randomize(3, 1.0);
  return [store, back, ahead](Graph<double>& g, const TokenBatch& t) {
    ForwardResult<double> r;
    r.embedded = embed(g, store->get("embed"), t);
    std::vector<Var<double>> parts;
    const std::size_t l = t.length;
    Var<double> acc = g.constant(Tensor<double>(r.embedded.shape()));
    for (std::size_t s = 1; s <= back && s < l; ++s) acc = add(acc, shift_right(r.embedded, s));
    if (ahead > 0) {
      // Future token: reverse-shift by concatenating a zero row after dropping the first.
      Var<double> flat = reshape(r.embedded, {t.batch * l, r.embedded.shape()[2]});
      std::vector<Var<double>> rows;
      for (std::size_t b = 0; b < t.batch; ++b) {
        rows.push_back(slice_rows(flat, b * l + 1, l - 1));
        rows.push_back(g.constant(Tensor<double>(Shape{1, r.embedded.shape()[2]})));
      }
      acc = add(acc, reshape(concat<double>(rows, 0), r.embedded.shape()));
    }
    r.logits = linear(acc, g.param(store->get("w")));
    return r;
  };
}

}  // namespace

TEST_SUITE("audit") {
  TEST_CASE("leak audit passes a causal closure and fails a leaky one") {
    const auto ok = leak_audit(window_forward(5, 4, 2, 0), 8, 5, 1e-12);
    CHECK(ok.pass);
    CHECK(ok.worst == 0.0);
    CHECK(ok.worst_path.empty());
    CHECK(ok.offenders.empty());
    for (std::size_t p = 0; p < 8; ++p) {
      for (std::size_t j = 0; j < 8; ++j) {
        const bool dep = j < p && p - j <= 2;
        CHECK((ok.at(p, j) > 0) == dep);
      }
    }

    const auto bad = leak_audit(window_forward(5, 4, 1, 1), 8, 5, 1e-12);
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst > 1e-6);
    CHECK_FALSE(bad.worst_path.empty());
    REQUIRE(bad.offenders.size() == 7);
    for (const auto& o : bad.offenders) {
      CHECK(o.j == o.p + 1);
      CHECK(o.value > 1e-6);
    }
    for (std::size_t i = 1; i < bad.offenders.size(); ++i) CHECK(bad.offenders[i - 1].value >= bad.offenders[i].value);
  }

  TEST_CASE("audit detects nondeterministic closures") {
    auto inner = window_forward(5, 4, 1, 0);
    int calls = 0;
    AuditForward flaky = [&](Graph<double>& g, const TokenBatch& t) {
      auto r = inner(g, t);
      r.logits = add(r.logits, g.constant(Tensor<double>::scalar(++calls * 1e-3)));
      return r;
    };
    CHECK_THROWS_AS(leak_audit(flaky, 6, 5, 1e-12), AuditError);
  }

  TEST_CASE("merged reports keep the elementwise maximum") {
    AuditReport a, b;
    a.length = b.length = 2;
    a.tolerance = b.tolerance = 1e-12;
    a.seeds = b.seeds = 1;
    a.matrix = {0, 0, 0.5, 0};
    b.matrix = {0, 1e-3, 0.2, 0};
    const auto m = merge_reports({a, b});
    CHECK(m.matrix == std::vector<double>{0, 1e-3, 0.5, 0});
    CHECK(m.seeds == 2);
    CHECK_FALSE(m.pass);
    CHECK(m.worst_p == 0);
    CHECK(m.worst_j == 1);
  }

  TEST_CASE("audit lengths and grids") {
    CHECK(audit_length(3) == 48);
    CHECK(audit_length(9) == 45);
    CHECK(audit_length(16) == 48);
    CHECK_THROWS_AS(audit_length(64), UsageError);
    const auto grid = audit_grid(false);
    CHECK(grid.size() == 4 * 4 * 3 * 2);
    std::set<std::string> labels;
    for (const auto& c : grid) {
      CHECK(c.length <= 48);
      CHECK(c.length % c.spec.hierarchy.total_factor() == 0);
      CHECK(c.spec.config.d_model == 16);
      CHECK(c.spec.config.dropout == 0.0);
      CHECK_FALSE(c.shift_override.has_value());
      labels.insert(c.label);
    }
    CHECK(labels.size() == grid.size());
    const auto sab = audit_grid(true);
    CHECK(sab.size() == 4 * 4 * 2 * (1 + 2));
    for (const auto& c : sab) {
      REQUIRE(c.shift_override.has_value());
      const std::size_t k = c.spec.hierarchy.levels[0].k;
      CHECK(*c.shift_override > 0);
      CHECK(*c.shift_override + 1 < k);
    }
  }

  TEST_CASE("plain decoder passes and a sabotaged shift fails") {
    AuditCase plain{"4@1", audit_spec("4@1", ShortenMethod::avg_pool, UpsampleMethod::repeat, 16), 16, std::nullopt};
    CHECK(audit_model(plain, 2, 1e-12).pass);

    AuditCase sab{"sabotage", audit_spec("1@1 1@3 1@1", ShortenMethod::avg_pool, UpsampleMethod::repeat, 24), 24, 1};
    const auto r = audit_model(sab, 1, 1e-12);
    CHECK_FALSE(r.pass);
    CHECK(r.worst > 1e-6);
    for (const auto& o : r.offenders) CHECK(o.j >= o.p);
    // After the embedding shift, group g pools inputs 3g-2..3g, so position 3g sees itself.
    CHECK(r.at(3, 3) > 1e-6);
    CHECK(r.at(2, 2) == 0.0);
  }

  TEST_CASE("parallel audits match serial ones") {
    std::vector<AuditCase> cases = {
        {"a", audit_spec("1@1 1@2 1@1", ShortenMethod::linear_pool, UpsampleMethod::linear, 16), 16, std::nullopt},
        {"b", audit_spec("1@1 1@2 1@1", ShortenMethod::avg_pool, UpsampleMethod::repeat, 16), 16, 0},
    };
    const auto serial = run_audits(cases, 1, 1e-12, 1);
    const auto parallel = run_audits(cases, 1, 1e-12, 2);
    REQUIRE(serial.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) CHECK(serial[i].matrix == parallel[i].matrix);
    CHECK(serial[0].pass);
    CHECK_FALSE(serial[1].pass);
  }

  TEST_CASE("audit serialization") {
    AuditCase c{"x", audit_spec("1@1 1@2 1@1", ShortenMethod::avg_pool, UpsampleMethod::repeat, 4), 4, std::nullopt};
    const auto r = audit_model(c, 1, 1e-12);
    const auto csv = audit_csv(r);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "p,j,max_abs_derivative,verdict");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK((line.ends_with(",allowed") || line.ends_with(",pass")));
    }
    CHECK(rows == 16);
    const auto j = nlohmann::json::parse(audit_jsonl(r));
    CHECK(j["label"] == "x");
    CHECK(j["pass"] == true);
    CHECK(j["length"] == 4);
  }

  TEST_CASE("cost identities per stage") {
    const std::size_t l = 2048, d = 128, dff = 512;
    for (std::size_t k : {2u, 3u, 4u, 8u}) {
      if (l % k) continue;
      const auto full = block_cost(l, d, dff);
      const auto shrt = block_cost(l / k, d, dff);
      CHECK(shrt.attention_scores * k * k == full.attention_scores);
      CHECK(shrt.weighted_sum * k * k == full.weighted_sum);
      CHECK(shrt.feed_forward * k == full.feed_forward);
      CHECK(shrt.projections * k == full.projections);
    }
    const auto b = block_cost(64, 16, 32);
    CHECK(b.attention_scores == 2ull * 64 * 64 * 16);
    CHECK(b.weighted_sum == 2ull * 64 * 64 * 16);
    CHECK(b.projections == 8ull * 64 * 16 * 16);
    CHECK(b.feed_forward == 4ull * 64 * 16 * 32);
  }

  TEST_CASE("estimates are consistent sums") {
    ModelConfig cfg;
    const auto e = estimate_cost(parse_hierarchy("2@1 1@2 4@4 1@2 2@1"), 1024, cfg, ShortenMethod::attn_pool_linear,
                                 UpsampleMethod::attn_linearU);
    CostBreakdown sum;
    std::uint64_t words = 0;
    for (const auto& s : e.stages) {
      sum += s.flops;
      words += s.activation_words;
    }
    CHECK(sum.total() == e.total);
    CHECK(e.totals.total() == e.total);
    CHECK(words == e.activation_words);
    CHECK(e.totals.attention_scores + e.totals.position_scores + e.totals.weighted_sum + e.totals.projections +
              e.totals.feed_forward + e.totals.resampling + e.totals.head ==
          e.total);
    CHECK_THROWS_AS(estimate_cost(parse_hierarchy("2@1 8@3 2@1"), 1000, cfg, ShortenMethod::avg_pool,
                                  UpsampleMethod::repeat),
                    UsageError);
  }

  TEST_CASE("estimate trends") {
    ModelConfig cfg;
    auto est = [&](const char* h, std::size_t l) {
      return estimate_cost(parse_hierarchy(h), l, cfg, ShortenMethod::avg_pool, UpsampleMethod::attn_linearU);
    };
    const auto a = est("6@1", 2048), b = est("6@1", 2048);
    CHECK(a.total == b.total);
    CHECK(a.totals.attention_scores == b.totals.attention_scores);
    CHECK(est("2@1 8@4 2@1", 2048).totals.attention_scores < est("12@1", 2048).totals.attention_scores);
    for (const char* h : {"6@1", "2@1 8@4 2@1"}) {
      CHECK(est(h, 2048).totals.attention_scores == 4 * est(h, 1024).totals.attention_scores);
    }
  }

  TEST_CASE("estimate agrees with the instrumented counter at small scale") {
    for (auto [s, u] : {std::pair{ShortenMethod::avg_pool, UpsampleMethod::attn_linearU},
                        std::pair{ShortenMethod::linear_pool, UpsampleMethod::linear},
                        std::pair{ShortenMethod::attn_pool_linear, UpsampleMethod::repeat}}) {
      CAPTURE(to_string(s));
      ModelSpec spec;
      spec.config.d_model = 64;
      spec.config.d_ff = 256;
      spec.config.max_len = 512;
      spec.hierarchy = parse_hierarchy("1@1 2@4 1@1");
      spec.shorten = s;
      spec.upsample = u;
      HourglassModel<float> m(spec, 1);
      const auto e = estimate_cost(spec.hierarchy, 512, spec.config, s, u);
      const double ratio = static_cast<double>(instrumented_flops(m, 512)) / static_cast<double>(e.total);
      CHECK(std::abs(ratio - 1.0) < 0.02);
    }
  }

  TEST_CASE("cost serialization") {
    ModelConfig cfg;
    const auto e = estimate_cost(parse_hierarchy("2@1 8@3 2@1"), 96, cfg, ShortenMethod::avg_pool, UpsampleMethod::repeat);
    const auto csv = cost_csv(e);
    CHECK(csv.starts_with(
        "stage,length,layers,attention_scores,position_scores,weighted_sum,projections,feed_forward,resampling,head,"
        "total,activation_words\n"));
    CHECK(csv.find("\ntotal,") != std::string::npos);
    std::istringstream in(cost_jsonl(e));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      CHECK_NOTHROW(nlohmann::json::parse(line));
      ++n;
    }
    CHECK(n >= e.stages.size());
  }

  TEST_CASE("measured runs report positive times") {
    ModelSpec spec;
    spec.config.d_model = 32;
    spec.config.d_ff = 64;
    spec.config.n_heads = 2;
    spec.config.max_len = 48;
    spec.hierarchy = parse_hierarchy("1@1 2@3 1@1");
    HourglassModel<float> m(spec, 1);
    TrainConfig t;
    t.seq_len = 48;
    t.batch_size = 2;
    std::vector<std::uint8_t> data(5000);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 7);
    const auto r = measure_run(m, t, data, 1, 20);
    CHECK(r.steps == 20);
    CHECK(r.median_seconds > 0);
    CHECK(r.cv >= 0);
    CHECK(r.activation_words > 0);
  }

  TEST_CASE("expressivity driver reports accuracies") {
    ExpressivityConfig cfg;
    cfg.task = RepeatsTask{1, 48};
    cfg.steps = 60;
    cfg.eval_every = 30;
    cfg.eval_sequences = 4;
    cfg.d_model = 16;
    cfg.lr = 3e-3;
    cfg.warmup = 5;
    CHECK(cfg.hierarchy() == "1@1 4@3 1@1");
    std::size_t calls = 0;
    const auto r = expressivity_experiment<float>(cfg, [&](const ExpressivityPoint&) { ++calls; });
    CHECK_FALSE(r.failed);
    REQUIRE(r.points.size() == 2);
    CHECK(calls == 2);
    CHECK(r.points.back().step == 60);
    // A one-letter alphabet is fully predictable.
    CHECK(r.points.back().overall == 1.0);
    cfg.vanilla_layers = 0;
    CHECK(cfg.hierarchy() == "4@3");
  }
}
