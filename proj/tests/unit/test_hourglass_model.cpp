#include <doctest.h>

#include <cmath>
#include <set>

#include "hourglass/audit.hpp"
#include "hourglass/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hourglass;

namespace {

ModelSpec small_spec(const std::string& h, ShortenMethod s = ShortenMethod::avg_pool,
                     UpsampleMethod u = UpsampleMethod::attn_linearU) {
  ModelSpec spec;
  spec.config.vocab_size = 13;
  spec.config.d_model = 16;
  spec.config.d_ff = 32;
  spec.config.n_heads = 2;
  spec.config.dropout = 0;
  spec.config.max_len = 48;
  spec.hierarchy = parse_hierarchy(h);
  spec.shorten = s;
  spec.upsample = u;
  return spec;
}

Tensor<double> logits_of(const HourglassModel<double>& m, const TokenBatch& t, std::size_t factor = 0) {
  Graph<double> g;
  g.set_grad_enabled(false);
  ForwardOptions opt;
  opt.factor = factor;
  return m.forward(g, t, opt).logits.value();
}

}  // namespace

TEST_SUITE("hourglass_model") {
  TEST_CASE("hierarchy examples") {
    auto h = parse_hierarchy("2@1 8@3 2@1");
    CHECK(h.stages == std::vector<Stage>{{2, 1}, {8, 3}, {2, 1}});
    REQUIRE(h.depth() == 1);
    CHECK(h.levels[0] == HierarchyLevel{2, 3, 2});
    CHECK(h.leaf_layers == 8);
    CHECK(h.total_factor() == 3);
    CHECK(h.total_layers() == 12);

    auto n = parse_hierarchy("2@1 1@2 4@4 1@2 2@1");
    REQUIRE(n.depth() == 2);
    CHECK(n.levels[0] == HierarchyLevel{2, 2, 2});
    CHECK(n.levels[1] == HierarchyLevel{1, 2, 1});
    CHECK(n.leaf_layers == 4);
    CHECK(n.total_factor() == 4);
    CHECK(n.factor_at(1) == 2);

    auto v = parse_hierarchy("6@1");
    CHECK(v.depth() == 0);
    CHECK(v.leaf_layers == 6);
    CHECK(v.total_factor() == 1);

    auto z = parse_hierarchy("0@1 8@3 0@1");
    REQUIRE(z.depth() == 1);
    CHECK(z.levels[0] == HierarchyLevel{0, 3, 0});

    auto implicit = parse_hierarchy("8@3");
    REQUIRE(implicit.depth() == 1);
    CHECK(implicit.levels[0] == HierarchyLevel{0, 3, 0});

    CHECK(parse_hierarchy("  2@1\t8@3   2@1 ").to_string() == "2@1 8@3 2@1");
    CHECK(parse_hierarchy("1@1 1@1 4@2 2@1").levels[0] == HierarchyLevel{2, 2, 2});
    CHECK(parse_hierarchy("1@1 1@2 1@4 1@8 1@4 1@2 1@1").depth() == 3);
  }

  TEST_CASE("hierarchy parse errors carry offsets") {
    auto offset_of = [](const std::string& text) -> std::size_t {
      try {
        parse_hierarchy(text);
      } catch (const ParseError& e) {
        return e.offset();
      }
      return 9999;
    };
    CHECK(offset_of("") == 0);
    CHECK(offset_of("2@1 x@3") == 4);
    CHECK(offset_of("2@1 8@") == 6);
    CHECK(offset_of("2@1 83 2@1") == 4);
    CHECK(offset_of("2@0") == 2);
    CHECK(offset_of("2@1 -1@3") == 4);
  }

  TEST_CASE("hierarchy validation rules") {
    auto rule = [](const std::string& text) -> std::string {
      try {
        parse_hierarchy(text);
      } catch (const ValidationError& e) {
        return e.what();
      }
      return "";
    };
    CHECK(rule("2@1 8@3 2@1 4@3 2@1").find("single peak") != std::string::npos);
    CHECK(rule("2@1 4@2 4@3 2@1").find("integer ratio") != std::string::npos);
    CHECK(rule("2@1 8@4 2@2 2@1").find("mirror") != std::string::npos);
    CHECK(rule("2@1 8@3").find("mirror") != std::string::npos);
    CHECK(rule("2@1 8@3 2@1").empty());
  }

  TEST_CASE("vanilla hierarchies create no resampling parameters") {
    HourglassModel<double> m(small_spec("6@1"), 1);
    for (const auto& p : m.params().paths()) {
      CHECK(p.find("shorten") == std::string::npos);
      CHECK(p.find("upsample") == std::string::npos);
    }
    CHECK(m.length_divisor() == 1);
  }

  TEST_CASE("parameter registry paths are deterministic and counts grow with layers") {
    HourglassModel<double> a(small_spec("2@1 8@4 2@1"), 1);
    HourglassModel<double> b(small_spec("2@1 8@4 2@1"), 2);
    CHECK(a.params().paths() == b.params().paths());
    HourglassModel<double> base(small_spec("6@1"), 1);
    CHECK(a.parameter_count() > base.parameter_count());
    CHECK(a.params().contains("l0/shorten/attn_pool/attn/w_q") == false);
    CHECK(a.params().contains("l0/upsample/w_up"));
    CHECK(a.params().contains("l1/b7/ff/w_in"));
  }

  TEST_CASE("degenerate hierarchy equals a directly built decoder") {
    for (std::size_t n : {2u, 4u}) {
      for (std::uint64_t seed : {3u, 8u}) {
        HourglassModel<double> m(small_spec(std::to_string(n) + "@1"), seed);
        m.params().randomize(seed, 0.3);
        const auto tokens = hgtest::random_tokens(2, 24, 13, seed);
        CHECK(hgtest::bit_equal(logits_of(m, tokens), hgtest::direct_decoder_logits(m, tokens)));
      }
    }
  }

  TEST_CASE("forward shape, divisibility and token range") {
    HourglassModel<double> m(small_spec("1@1 1@2 1@4 1@2 1@1"), 1);
    CHECK(m.length_divisor() == 4);
    const auto t = hgtest::random_tokens(3, 16, 13, 2);
    CHECK(logits_of(m, t).shape() == Shape{3, 16, 13});
    CHECK_THROWS_AS(logits_of(m, hgtest::random_tokens(1, 18, 13, 2)), UsageError);
    CHECK_THROWS_AS(logits_of(m, hgtest::random_tokens(1, 52, 13, 2)), UsageError);
    CHECK_THROWS_AS(logits_of(m, TokenBatch{1, 4, {0, 1, 13, 2}}), IndexError);
    Graph<double> g;
    ForwardOptions train;
    train.training = true;
    CHECK_THROWS_AS(m.forward(g, t, train), UsageError);
  }

  TEST_CASE("batch rows are independent") {
    HourglassModel<double> m(small_spec("1@1 2@3 1@1", ShortenMethod::attn_pool_linear), 4);
    m.params().randomize(4, 0.3);
    const auto one = hgtest::random_tokens(1, 24, 13, 5);
    TokenBatch two{2, 24, one.tokens};
    two.tokens.insert(two.tokens.end(), one.tokens.begin(), one.tokens.end());
    const auto a = logits_of(m, one);
    const auto b = logits_of(m, two);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] == b[i]);
      CHECK(a[i] == b[a.size() + i]);
    }
  }

  TEST_CASE("representative configurations are autoregressive") {
    struct Case {
      const char* h;
      ShortenMethod s;
      UpsampleMethod u;
    };
    const Case cases[] = {
        {"2@1 4@3 2@1", ShortenMethod::attn_pool_avg, UpsampleMethod::attn_linearU},
        {"1@1 1@2 1@4 1@2 1@1", ShortenMethod::linear_pool, UpsampleMethod::attn_identityU},
        {"4@1", ShortenMethod::avg_pool, UpsampleMethod::repeat},
        {"1@1 1@2 1@4 1@8 1@4 1@2 1@1", ShortenMethod::attn_pool_linear, UpsampleMethod::linear},
    };
    for (const auto& c : cases) {
      CAPTURE(c.h);
      const std::size_t len = audit_length(parse_hierarchy(c.h).total_factor(), 32);
      AuditCase ac{c.h, audit_spec(c.h, c.s, c.u, len), len, std::nullopt};
      const auto r = audit_model(ac, 1, 1e-12);
      CHECK(r.pass);
      CHECK(r.worst <= 1e-12);
      // The audit would see real dependencies: (p, p-1) is never zero.
      for (std::size_t p = 1; p < len; ++p) CHECK(r.at(p, p - 1) > 1e-6);
    }
  }

  TEST_CASE("zero vanilla layers cannot see the current group") {
    const std::size_t k = 3, len = 24;
    AuditCase without{"without", audit_spec("0@1 2@3 0@1", ShortenMethod::attn_pool_avg, UpsampleMethod::attn_linearU, len),
                      len, std::nullopt};
    const auto r = audit_model(without, 2, 1e-12);
    CHECK(r.pass);
    std::size_t zero_checked = 0;
    for (std::size_t p = 0; p < len; ++p) {
      const std::size_t start = (p / k) * k;
      for (std::size_t j = start; j + 2 <= p; ++j) {
        CHECK(r.at(p, j) == 0.0);
        ++zero_checked;
      }
      if (p >= 1) CHECK(r.at(p, p - 1) > 1e-6);
    }
    CHECK(zero_checked == len / k);  // one entry per chunk-end position

    AuditCase with{"with", audit_spec("1@1 2@3 1@1", ShortenMethod::attn_pool_avg, UpsampleMethod::attn_linearU, len),
                   len, std::nullopt};
    const auto rv = audit_model(with, 1, 1e-12);
    for (std::size_t p = k - 1; p < len; p += k) CHECK(rv.at(p, p - 2) > 1e-6);
  }

  TEST_CASE("shorten factor dropout rules") {
    auto spec = small_spec("1@1 2@2 1@1", ShortenMethod::avg_pool, UpsampleMethod::attn_identityU);
    spec.sfd = {true, {2, 3}};
    HourglassModel<double> m(spec, 1);
    m.params().randomize(2, 0.3);
    const auto paths = m.params().paths();
    const auto t = hgtest::random_tokens(1, 12, 13, 3);
    for (std::size_t k : {2u, 3u}) {
      const auto l = logits_of(m, t, k);
      for (double v : l.data()) CHECK(std::isfinite(v));
    }
    CHECK(m.params().paths() == paths);
    CHECK_THROWS_AS(logits_of(m, t, 4), ConfigError);
    CHECK_THROWS_AS(logits_of(m, hgtest::random_tokens(1, 10, 13, 3), 3), UsageError);

    auto bad = spec;
    bad.shorten = ShortenMethod::linear_pool;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.upsample = UpsampleMethod::attn_linearU;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.hierarchy = parse_hierarchy("1@1 1@2 1@4 1@2 1@1");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.sfd.factor_set = {3, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    std::mt19937_64 rng(9);
    std::size_t counts[4] = {};
    for (int i = 0; i < 4000; ++i) ++counts[m.draw_factor(rng)];
    CHECK(std::abs(counts[2] / 4000.0 - 0.5) < 0.05);
    CHECK(counts[2] + counts[3] == 4000);

    HourglassModel<double> fixed(small_spec("1@1 2@3 1@1"), 1);
    CHECK_THROWS_AS(logits_of(fixed, hgtest::random_tokens(1, 12, 13, 3), 2), ConfigError);
  }

  TEST_CASE("training forward records the drawn factor") {
    auto spec = small_spec("1@1 2@2 1@1", ShortenMethod::avg_pool, UpsampleMethod::repeat);
    spec.sfd = {true, {2, 3}};
    spec.config.dropout = 0.1;
    HourglassModel<double> m(spec, 1);
    const auto t = hgtest::random_tokens(1, 12, 13, 3);
    std::mt19937_64 rng(5);
    std::set<std::size_t> seen;
    for (int i = 0; i < 20; ++i) {
      Graph<double> g;
      ForwardOptions opt;
      opt.training = true;
      opt.rng = &rng;
      seen.insert(m.forward(g, t, opt).factor);
    }
    CHECK(seen == std::set<std::size_t>{2, 3});
  }

  TEST_CASE("greedy sampling") {
    HourglassModel<double> m(small_spec("1@1 2@3 1@1"), 6);
    m.params().randomize(6, 0.3);
    const std::vector<std::int32_t> prefix = {1, 2, 3, 4};
    CHECK(m.greedy_sample(prefix, 0) == prefix);
    const auto a = m.greedy_sample(prefix, 7);
    CHECK(a.size() == 11);
    CHECK(std::equal(prefix.begin(), prefix.end(), a.begin()));
    CHECK(a == m.greedy_sample(prefix, 7));
    CHECK_THROWS_AS(m.greedy_sample(prefix, 45), UsageError);
  }

  TEST_CASE("single precision model runs") {
    auto spec = small_spec("1@1 2@3 1@1");
    HourglassModel<float> m(spec, 1);
    const auto t = hgtest::random_tokens(2, 12, 13, 7);
    Graph<float> g;
    const auto l = m.forward(g, t).logits.value();
    for (float v : l.data()) CHECK(std::isfinite(v));
  }
}
