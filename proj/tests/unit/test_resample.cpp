#include <doctest.h>

#include <functional>

#include "hourglass/gradcheck.hpp"
#include "hourglass/resample.hpp"
#include "support.hpp"

using namespace hourglass;
using hgtest::random_tensor;

namespace {

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 7;
  c.d_model = 6;
  c.d_ff = 12;
  c.n_heads = 2;
  c.dropout = 0;
  c.max_len = 24;
  return c;
}

Var<double> weighted(Graph<double>& g, Var<double> y, std::uint64_t seed = 77) {
  return sum(mul(y, g.constant(random_tensor(y.shape(), seed))));
}

// Columns of input position `j` (all d features) that influence output row `p`.
Tensor<double> input_grad_for_row(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                                  const Tensor<double>& x, std::size_t p) {
  Graph<double> g;
  auto in = g.leaf(x, true);
  auto out = f(g, in);
  const std::size_t d = out.shape().back();
  Tensor<double> seed(out.shape());
  for (std::size_t c = 0; c < d; ++c) seed[p * d + c] = 1.0 + 0.5 * static_cast<double>(c);
  g.backward(out, seed, false);
  return g.grad(in) ? *g.grad(in) : Tensor<double>(x.shape());
}

double row_norm(const Tensor<double>& t, std::size_t row, std::size_t d) {
  double m = 0;
  for (std::size_t c = 0; c < d; ++c) m = std::max(m, std::abs(t[row * d + c]));
  return m;
}

}  // namespace

TEST_SUITE("resample") {
  TEST_CASE("method names round trip") {
    for (auto m : {ShortenMethod::avg_pool, ShortenMethod::linear_pool, ShortenMethod::attn_pool_avg,
                   ShortenMethod::attn_pool_linear}) {
      CHECK(parse_shorten_method(to_string(m)) == m);
    }
    for (auto m : {UpsampleMethod::repeat, UpsampleMethod::linear, UpsampleMethod::attn_identityU,
                   UpsampleMethod::attn_linearU}) {
      CHECK(parse_upsample_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_shorten_method("max_pool"), ConfigError);
    CHECK_THROWS_AS(parse_upsample_method("nearest"), ConfigError);
  }

  TEST_CASE("shift_right examples") {
    Graph<double> g;
    auto x = g.constant(Tensor<double>::from({1, 4, 1}, {1, 2, 3, 4}));
    CHECK(shift_right(x, 2).value() == Tensor<double>::from({1, 4, 1}, {0, 0, 1, 2}));
    CHECK(shift_right(x, 0).value() == x.value());
    CHECK_THROWS_AS(shift_right(x, 4), UsageError);

    const auto r = random_tensor({2, 9, 3}, 1);
    auto rv = g.constant(r);
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; a + b < 9; ++b) {
        CHECK(shift_right(shift_right(rv, a), b).value() == shift_right(rv, a + b).value());
      }
    }
  }

  TEST_CASE("avg_pool examples") {
    Graph<double> g;
    auto x = g.constant(Tensor<double>::from({1, 4, 1}, {1, 3, 5, 7}));
    CHECK(avg_pool(x, 2).value() == Tensor<double>::from({1, 2, 1}, {2, 6}));
    auto c = avg_pool(g.constant(Tensor<double>(Shape{2, 6, 3}, 1.25)), 3).value();
    for (double v : c.data()) CHECK(v == 1.25);
    CHECK_THROWS_AS(avg_pool(x, 3), UsageError);
  }

  TEST_CASE("linear_pool examples") {
    Graph<double> g;
    const auto x = random_tensor({2, 6, 3}, 2);
    auto xv = g.constant(x);
    Tensor<double> eye(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
    CHECK(linear_pool(xv, 1, g.constant(eye)).value() == x);
    auto z = linear_pool(xv, 2, g.constant(Tensor<double>(Shape{6, 3}))).value();
    for (double v : z.data()) CHECK(v == 0.0);
    auto d1 = g.constant(random_tensor({1, 8, 1}, 3));
    auto half = g.constant(Tensor<double>::from({2, 1}, {0.5, 0.5}));
    CHECK(hgtest::max_abs_diff(linear_pool(d1, 2, half).value(), avg_pool(d1, 2).value()) < 1e-15);
    CHECK_THROWS_AS(linear_pool(xv, 4, g.constant(Tensor<double>(Shape{12, 3}))), UsageError);
  }

  TEST_CASE("repeat and linear upsampling examples") {
    Graph<double> g;
    auto x = g.constant(Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4}));
    CHECK(repeat_upsample(x, 2).value() == Tensor<double>::from({1, 4, 2}, {1, 2, 1, 2, 3, 4, 3, 4}));
    CHECK(repeat_upsample(x, 1).value() == x.value());

    const std::size_t k = 3, d = 4;
    const auto s = random_tensor({2, 5, d}, 4);
    Tensor<double> stacked(Shape{d, k * d});
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t i = 0; i < d; ++i) stacked[i * k * d + r * d + i] = 1.0;
    }
    auto sv = g.constant(s);
    CHECK(linear_upsample(sv, k, g.constant(stacked)).value() == repeat_upsample(sv, k).value());
    auto z = linear_upsample(sv, k, g.constant(Tensor<double>(Shape{d, k * d}))).value();
    for (double v : z.data()) CHECK(v == 0.0);
  }

  TEST_CASE("pool of repeat of pool equals pool") {
    Graph<double> g;
    auto x = g.constant(random_tensor({2, 12, 3}, 5));
    for (std::size_t k : {2u, 3u, 4u}) {
      auto p = avg_pool(x, k);
      CHECK(hgtest::max_abs_diff(avg_pool(repeat_upsample(p, k), k).value(), p.value()) < 1e-15);
    }
  }

  TEST_CASE("dependency locality of attention-free resamplers") {
    const std::size_t k = 3, d = 4, l = 9;
    const auto wpool = random_tensor({k * d, d}, 6);
    const auto wup = random_tensor({d, k * d}, 7);
    const std::vector<std::pair<const char*, Fn>> pools = {
        {"avg_pool", [&](Graph<double>&, Var<double> x) { return avg_pool(x, k); }},
        {"linear_pool", [&](Graph<double>& g, Var<double> x) { return linear_pool(x, k, g.constant(wpool)); }},
    };
    const auto x = random_tensor({1, l, d}, 8);
    for (const auto& [name, f] : pools) {
      CAPTURE(name);
      for (std::size_t gi = 0; gi < l / k; ++gi) {
        const auto grad = input_grad_for_row(f, x, gi);
        for (std::size_t p = 0; p < l; ++p) {
          if (p / k == gi) {
            CHECK(row_norm(grad, p, d) > 0.0);
          } else {
            CHECK(row_norm(grad, p, d) == 0.0);
          }
        }
      }
    }
    const std::vector<std::pair<const char*, Fn>> ups = {
        {"repeat", [&](Graph<double>&, Var<double> s) { return repeat_upsample(s, k); }},
        {"linear", [&](Graph<double>& g, Var<double> s) { return linear_upsample(s, k, g.constant(wup)); }},
    };
    const auto s = random_tensor({1, l / k, d}, 9);
    for (const auto& [name, f] : ups) {
      CAPTURE(name);
      for (std::size_t p = 0; p < l; ++p) {
        const auto grad = input_grad_for_row(f, s, p);
        for (std::size_t gi = 0; gi < l / k; ++gi) {
          if (gi == p / k) {
            CHECK(row_norm(grad, gi, d) > 0.0);
          } else {
            CHECK(row_norm(grad, gi, d) == 0.0);
          }
        }
      }
    }
  }

  TEST_CASE("block-causal mask geometry") {
    for (std::size_t k : {2u, 3u, 4u}) {
      const auto pool = pooling_geometry(k);
      const auto up = upsampling_geometry(k);
      for (std::size_t gi = 0; gi < 5; ++gi) {
        for (std::size_t p = 0; p < 5 * k; ++p) {
          CHECK(pool.visible(pool.qpos(gi) - pool.kpos(p)) == (p / k <= gi));
          CHECK(up.visible(up.qpos(p) - up.kpos(gi)) == (gi <= p / k));
        }
      }
    }
  }

  TEST_CASE("cross-attention weights respect block-causal masks") {
    const std::size_t k = 3, h = 2, dh = 3, l = 12;
    const auto full = random_tensor({1, l, h * dh}, 10);
    const auto shrt = random_tensor({1, l / k, h * dh}, 11);
    const auto u = random_tensor({h, dh}, 12);
    const auto pb = random_tensor({h, dh}, 13);
    const auto r = random_tensor({l, h * dh}, 14);
    const auto wp = rel_attention_weights(shrt, full, r, u, pb, h, pooling_geometry(k));
    const auto wu = rel_attention_weights(full, shrt, r, u, pb, h, upsampling_geometry(k));
    for (std::size_t head = 0; head < h; ++head) {
      for (std::size_t gi = 0; gi < l / k; ++gi) {
        for (std::size_t p = 0; p < l; ++p) {
          if (p / k > gi) CHECK(wp[(head * (l / k) + gi) * l + p] < 1e-30);
          if (gi > p / k) CHECK(wu[(head * l + p) * (l / k) + gi] < 1e-30);
        }
      }
    }
  }

  TEST_CASE("attention resamplers reduce to their residual path") {
    const auto cfg = tiny_config();
    const auto x = random_tensor({2, 12, 6}, 15);
    const auto s = random_tensor({2, 4, 6}, 16);
    auto silence = [](CrossBlock<double>& b) {
      for (auto* p : {b.attn.w_o, b.attn.b_o, b.ff.w_out, b.ff.b_out}) p->value.fill(0.0);
    };
    for (auto method : {ShortenMethod::attn_pool_avg, ShortenMethod::attn_pool_linear}) {
      ParamStore<double> store;
      auto& rel = store.add("rel", {24, 6}, InitKind::normal);
      auto sh = Shortener<double>::make(store, "s", cfg, {method, 3});
      store.randomize(17, 0.3);
      silence(sh.block);
      Graph<double> g;
      auto xv = g.constant(x);
      auto base = method == ShortenMethod::attn_pool_avg ? avg_pool(xv, 3) : linear_pool(xv, 3, g.param(*sh.w_pool));
      CHECK(hgtest::bit_equal(sh(xv, 3, g.param(rel), LayerContext<double>{}).value(), base.value()));
    }
    ParamStore<double> store;
    auto& rel = store.add("rel", {24, 6}, InitKind::normal);
    auto up = Upsampler<double>::make(store, "u", cfg, {UpsampleMethod::attn_identityU, 3});
    store.randomize(18, 0.3);
    silence(up.block);
    Graph<double> g;
    CHECK(hgtest::bit_equal(up(g.constant(x), g.constant(s), 3, g.param(rel), LayerContext<double>{}).value(), x));
  }

  TEST_CASE("length algebra and shape errors") {
    const auto cfg = tiny_config();
    ParamStore<double> store;
    auto& rel = store.add("rel", {24, 6}, InitKind::normal);
    std::vector<Shortener<double>> shorteners;
    std::vector<Upsampler<double>> upsamplers;
    int i = 0;
    for (auto m : {ShortenMethod::avg_pool, ShortenMethod::linear_pool, ShortenMethod::attn_pool_avg,
                   ShortenMethod::attn_pool_linear}) {
      shorteners.push_back(Shortener<double>::make(store, "s" + std::to_string(i++), cfg, {m, 4}));
    }
    for (auto m : {UpsampleMethod::repeat, UpsampleMethod::linear, UpsampleMethod::attn_identityU,
                   UpsampleMethod::attn_linearU}) {
      upsamplers.push_back(Upsampler<double>::make(store, "u" + std::to_string(i++), cfg, {m, 4}));
    }
    store.randomize(19, 0.3);
    Graph<double> g;
    auto x = g.constant(random_tensor({2, 16, 6}, 20));
    auto s = g.constant(random_tensor({2, 4, 6}, 21));
    auto bad = g.constant(random_tensor({2, 3, 6}, 22));
    const LayerContext<double> ctx;
    for (const auto& sh : shorteners) {
      CHECK(sh(x, 4, g.param(rel), ctx).shape() == Shape{2, 4, 6});
      CHECK_THROWS_AS(sh(g.constant(random_tensor({2, 10, 6}, 23)), 4, g.param(rel), ctx), UsageError);
    }
    for (const auto& up : upsamplers) {
      CHECK(up(x, s, 4, g.param(rel), ctx).shape() == Shape{2, 16, 6});
      CHECK_THROWS_AS(up(x, bad, 4, g.param(rel), ctx), UsageError);
    }
    CHECK_THROWS_AS(shorteners[1](x, 2, g.param(rel), ctx), ConfigError);
    CHECK_THROWS_AS(Shortener<double>::make(store, "k1", cfg, {ShortenMethod::avg_pool, 1}), ConfigError);
  }

  TEST_CASE("resampler gradients match finite differences") {
    const auto cfg = tiny_config();
    const std::size_t k = 2;
    const auto x = random_tensor({1, 6, 6}, 24);
    const auto s = random_tensor({1, 3, 6}, 25);
    int i = 0;
    for (auto m : {ShortenMethod::avg_pool, ShortenMethod::linear_pool, ShortenMethod::attn_pool_avg,
                   ShortenMethod::attn_pool_linear}) {
      CAPTURE(to_string(m));
      ParamStore<double> store;
      auto& rel = store.add("rel", {24, 6}, InitKind::normal);
      auto sh = Shortener<double>::make(store, "s" + std::to_string(i++), cfg, {m, k});
      store.randomize(26, 0.3);
      const Fn f = [&](Graph<double>& g, Var<double> in) {
        return weighted(g, sh(in, k, g.param(rel), LayerContext<double>{}));
      };
      CHECK(finite_diff_check(f, x).max_rel_error < 1e-5);
    }
    for (auto m : {UpsampleMethod::repeat, UpsampleMethod::linear, UpsampleMethod::attn_identityU,
                   UpsampleMethod::attn_linearU}) {
      CAPTURE(to_string(m));
      ParamStore<double> store;
      auto& rel = store.add("rel", {24, 6}, InitKind::normal);
      auto up = Upsampler<double>::make(store, "u" + std::to_string(i++), cfg, {m, k});
      store.randomize(27, 0.3);
      const Fn fs = [&](Graph<double>& g, Var<double> in) {
        return weighted(g, up(g.constant(x), in, k, g.param(rel), LayerContext<double>{}));
      };
      CHECK(finite_diff_check(fs, s).max_rel_error < 1e-5);
      if (is_attention(m)) {
        const Fn fx = [&](Graph<double>& g, Var<double> in) {
          return weighted(g, up(in, g.constant(s), k, g.param(rel), LayerContext<double>{}));
        };
        CHECK(finite_diff_check(fx, x).max_rel_error < 1e-5);
      }
    }
  }
}
