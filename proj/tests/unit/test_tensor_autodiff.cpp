#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "hourglass/gradcheck.hpp"
#include "hourglass/ops.hpp"
#include "support.hpp"

using namespace hourglass;
using hgtest::random_tensor;

namespace {

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

double gelu_reference(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// Weighted sum so every output coordinate gets a distinct gradient.
Var<double> weighted(Graph<double>& g, Var<double> y, std::uint64_t seed = 99) {
  return sum(mul(y, g.constant(random_tensor(y.shape(), seed))));
}

}  // namespace

TEST_SUITE("tensor_autodiff") {
  TEST_CASE("tensor shape invariants") {
    Tensor<double> t(Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.reshaped(Shape{4}), DimensionError);
  }

  TEST_CASE("matmul identity and hand case") {
    Graph<double> g;
    auto eye = g.constant(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
    auto b = g.constant(Tensor<double>::from({2, 2}, {5, 6, 7, 8}));
    CHECK(matmul(eye, b).value() == Tensor<double>::from({2, 2}, {5, 6, 7, 8}));
    auto r = matmul(g.constant(Tensor<double>::from({1, 2}, {1, 2})), g.constant(Tensor<double>::from({2, 1}, {3, 4})));
    CHECK(r.value().shape() == Shape{1, 1});
    CHECK(r.value()[0] == 11.0);
  }

  TEST_CASE("matmul shape mismatch names both shapes") {
    Graph<double> g;
    auto a = g.constant(Tensor<double>(Shape{2, 3}));
    auto b = g.constant(Tensor<double>(Shape{4, 2}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(2,3)") != std::string::npos);
      CHECK(msg.find("(4,2)") != std::string::npos);
    }
  }

  TEST_CASE("matmul gradient matches finite differences") {
    const auto b = random_tensor({5, 3}, 2);
    const Fn fa = [&](Graph<double>& g, Var<double> a) { return weighted(g, matmul(a, g.constant(b))); };
    CHECK(finite_diff_check(fa, random_tensor({4, 5}, 1)).max_rel_error < 1e-6);
    const auto a = random_tensor({4, 5}, 1);
    const Fn fb = [&](Graph<double>& g, Var<double> x) { return weighted(g, matmul(g.constant(a), x)); };
    CHECK(finite_diff_check(fb, b).max_rel_error < 1e-6);
  }

  TEST_CASE("elementwise values") {
    Graph<double> g;
    auto a = g.constant(Tensor<double>::from({2}, {1, 2}));
    auto b = g.constant(Tensor<double>::from({2}, {3, 4}));
    CHECK(add(a, b).value() == Tensor<double>::from({2}, {4, 6}));
    CHECK(sub(a, b).value() == Tensor<double>::from({2}, {-2, -2}));
    CHECK(mul(a, b).value() == Tensor<double>::from({2}, {3, 8}));
    CHECK(scale(a, 3.0).value() == Tensor<double>::from({2}, {3, 6}));
    CHECK(gelu_fast_value(0.0) == 0.0);
    CHECK(std::abs(gelu_fast_value(3.0) - gelu_reference(3.0)) < 1e-12);
    auto gx = gelu_fast(g.constant(Tensor<double>::from({3}, {-1.5, 0.0, 3.0})));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(gx.value()[i] - gelu_reference(std::vector<double>{-1.5, 0.0, 3.0}[i])) < 1e-12);
    }
  }

  TEST_CASE("broadcast is limited to scalars and trailing suffixes") {
    Graph<double> g;
    auto x = g.constant(random_tensor({2, 3, 4}, 3));
    CHECK_NOTHROW(add(x, g.constant(random_tensor({4}, 4))));
    CHECK_NOTHROW(add(x, g.constant(random_tensor({3, 4}, 4))));
    CHECK_NOTHROW(mul(x, g.constant(Tensor<double>::scalar(2.0))));
    CHECK_THROWS_AS(add(x, g.constant(random_tensor({3}, 4))), DimensionError);
    CHECK_THROWS_AS(add(x, g.constant(random_tensor({2, 1, 4}, 4))), DimensionError);
  }

  TEST_CASE("elementwise gradients match finite differences") {
    const auto other = random_tensor({3, 4}, 5);
    const auto bias = random_tensor({4}, 6);
    const std::vector<std::pair<const char*, Fn>> fns = {
        {"add", [&](Graph<double>& g, Var<double> x) { return weighted(g, add(x, g.constant(other))); }},
        {"add_broadcast", [&](Graph<double>& g, Var<double> x) { return weighted(g, add(g.constant(other), x)); }},
        {"sub", [&](Graph<double>& g, Var<double> x) { return weighted(g, sub(g.constant(other), x)); }},
        {"mul", [&](Graph<double>& g, Var<double> x) { return weighted(g, mul(x, x)); }},
        {"scale", [&](Graph<double>& g, Var<double> x) { return weighted(g, scale(x, -1.7)); }},
        {"gelu_fast", [&](Graph<double>& g, Var<double> x) { return weighted(g, gelu_fast(x)); }},
        {"exp", [&](Graph<double>& g, Var<double> x) { return weighted(g, exp(x)); }},
        {"mean", [&](Graph<double>& g, Var<double> x) { return mean(mul(x, x)); }},
    };
    for (const auto& [name, f] : fns) {
      CAPTURE(name);
      const auto x = std::string(name) == "add_broadcast" ? bias : other;
      CHECK(finite_diff_check(f, x).max_rel_error < 1e-5);
    }
    const Fn flog = [](Graph<double>& g, Var<double> x) { return weighted(g, log(x)); };
    Tensor<double> pos = random_tensor({3, 4}, 7);
    for (auto& v : pos.data()) v = 0.5 + std::abs(v);
    CHECK(finite_diff_check(flog, pos).max_rel_error < 1e-5);
  }

  TEST_CASE("softmax examples") {
    Graph<double> g;
    auto s = softmax_lastaxis(g.constant(Tensor<double>::from({1, 3}, {0, 0, 0})));
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s.value()[i] - 1.0 / 3.0) < 1e-15);

    const auto mask = Tensor<double>::from({2}, {0, kMaskValue});
    auto m = softmax_lastaxis(g.constant(Tensor<double>::from({1, 2}, {50, 0})), &mask);
    CHECK(m.value()[0] == 1.0);
    CHECK(m.value()[1] == 0.0);

    auto r = softmax_lastaxis(g.constant(random_tensor({3, 7}, 8, 3.0)));
    for (std::size_t row = 0; row < 3; ++row) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(r.value()[row * 7 + c] >= 0.0);
        total += r.value()[row * 7 + c];
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("fully masked softmax rows are zero and flagged") {
    Graph<double> g;
    const auto mask = Tensor<double>::from({2, 3}, {0, kMaskValue, 0, kMaskValue, kMaskValue, kMaskValue});
    SoftmaxStatus status;
    auto s = softmax_lastaxis(g.constant(random_tensor({2, 3}, 9)), &mask, &status);
    CHECK(status.fully_masked_rows == 1);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(s.value()[3 + c] == 0.0);
      CHECK(std::isfinite(s.value()[c]));
    }
  }

  TEST_CASE("softmax and layernorm gradients") {
    const auto mask = Tensor<double>::from({5}, {0, 0, kMaskValue, 0, 0});
    const Fn fs = [&](Graph<double>& g, Var<double> x) { return weighted(g, softmax_lastaxis(x, &mask)); };
    CHECK(finite_diff_check(fs, random_tensor({3, 5}, 10)).max_rel_error < 1e-5);
    const auto gain = random_tensor({6}, 11);
    const auto bias = random_tensor({6}, 12);
    const Fn fl = [&](Graph<double>& g, Var<double> x) {
      return weighted(g, layernorm(x, g.constant(gain), g.constant(bias)));
    };
    CHECK(finite_diff_check(fl, random_tensor({4, 6}, 13)).max_rel_error < 1e-5);
  }

  TEST_CASE("index remapping round trips") {
    const auto x = random_tensor({6, 4}, 14);
    Graph<double> g;
    auto v = g.constant(x);
    CHECK(reshape(reshape(v, {2, 12}), {6, 4}).value() == x);
    CHECK(transpose(transpose(v)).value() == x);
    CHECK_THROWS_AS(reshape(v, {5, 5}), DimensionError);

    auto t = transpose(v).value();
    std::vector<double> a(x.data().begin(), x.data().end());
    std::vector<double> b(t.data().begin(), t.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    const auto h = random_tensor({2, 5, 6}, 15);
    auto hv = g.constant(h);
    CHECK(split_heads(hv, 3).value().shape() == Shape{2, 3, 5, 2});
    CHECK(merge_heads(split_heads(hv, 3)).value() == h);

    const std::vector<Var<double>> parts = {g.constant(random_tensor({2, 3}, 16)), g.constant(random_tensor({2, 2}, 17))};
    auto c = concat<double>(parts, 1);
    CHECK(c.value().shape() == Shape{2, 5});
    CHECK(c.value()[3] == parts[1].value()[0]);
    CHECK(slice_rows(v, 2, 3).value()[0] == x[8]);
  }

  TEST_CASE("gather_rows scatter-adds repeated indices") {
    const auto table = random_tensor({4, 3}, 18);
    Graph<double> g;
    auto tv = g.leaf(table, true);
    const std::vector<std::int32_t> idx = {2, 2};
    auto rows = gather_rows(tv, idx);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(rows.value()[c] == table[6 + c]);
      CHECK(rows.value()[3 + c] == table[6 + c]);
    }
    const auto seed = random_tensor({2, 3}, 19);
    g.backward(rows, seed);
    const auto& grad = *g.grad(tv);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(grad[6 + c] == seed[c] + seed[3 + c]);
      CHECK(grad[c] == 0.0);
    }
    const std::vector<std::int32_t> bad = {4};
    CHECK_THROWS_AS(gather_rows(tv, bad), IndexError);
  }

  TEST_CASE("remapping gradients match finite differences") {
    const std::vector<std::int32_t> idx = {0, 3, 3, 1};
    const std::vector<std::pair<const char*, Fn>> fns = {
        {"reshape", [](Graph<double>& g, Var<double> x) { return weighted(g, reshape(x, {3, 8})); }},
        {"transpose", [](Graph<double>& g, Var<double> x) { return weighted(g, transpose(x)); }},
        {"split_heads", [](Graph<double>& g, Var<double> x) { return weighted(g, split_heads(reshape(x, {1, 4, 6}), 2)); }},
        {"slice_rows", [](Graph<double>& g, Var<double> x) { return weighted(g, slice_rows(x, 1, 2)); }},
        {"gather_rows", [&](Graph<double>& g, Var<double> x) { return weighted(g, gather_rows(x, idx)); }},
        {"concat", [](Graph<double>& g, Var<double> x) {
           const std::vector<Var<double>> parts = {x, scale(x, 2.0)};
           return weighted(g, concat<double>(parts, 0));
         }},
    };
    for (const auto& [name, f] : fns) {
      const std::string label = name;
      const auto r = finite_diff_check(f, random_tensor({4, 6}, 20));
      CAPTURE(label);
      CAPTURE(r.autodiff);
      CAPTURE(r.numeric);
      CHECK(r.max_rel_error < 1e-5);
    }
  }

  TEST_CASE("backward of sum(w*x) yields x") {
    const auto x = random_tensor({5}, 21);
    Graph<double> g;
    auto w = g.leaf(random_tensor({5}, 22), true);
    auto xv = g.leaf(x, false);
    g.backward(sum(mul(w, xv)));
    CHECK(*g.grad(w) == x);
    CHECK(g.grad(xv) == nullptr);
  }

  TEST_CASE("backward needs a scalar") {
    Graph<double> g;
    auto w = g.leaf(random_tensor({3}, 23), true);
    CHECK_THROWS_AS(g.backward(scale(w, 2.0)), UsageError);
  }

  TEST_CASE("composite layernorm then feed-forward matches finite differences") {
    const auto w1 = random_tensor({4, 8}, 24, 0.5);
    const auto w2 = random_tensor({8, 4}, 25, 0.5);
    const auto gain = random_tensor({4}, 26);
    const auto bias = random_tensor({4}, 27);
    const Fn f = [&](Graph<double>& g, Var<double> x) {
      auto h = layernorm(x, g.constant(gain), g.constant(bias));
      h = linear(gelu_fast(linear(h, g.constant(w1))), g.constant(w2));
      return weighted(g, h);
    };
    CHECK(finite_diff_check(f, random_tensor({3, 4}, 28)).max_rel_error < 1e-5);
  }

  TEST_CASE("finite_diff_check oracle behaviour") {
    const Fn quad = [](Graph<double>&, Var<double> x) { return sum(mul(x, x)); };
    const auto r = finite_diff_check(quad, Tensor<double>::from({2}, {1, 2}));
    CHECK(r.max_rel_error < 1e-9);

    const Fn constant = [](Graph<double>& g, Var<double>) { return g.constant(Tensor<double>::scalar(3.0)); };
    CHECK(finite_diff_check(constant, random_tensor({3}, 29)).max_rel_error == 0.0);

    int calls = 0;
    const Fn flaky = [&](Graph<double>& g, Var<double> x) { return add(sum(x), g.constant(Tensor<double>::scalar(++calls))); };
    CHECK_THROWS_AS(finite_diff_check(flaky, random_tensor({2}, 30)), AuditError);
  }

  TEST_CASE("grad disabled graphs keep no backward rules") {
    Graph<double> g;
    g.set_grad_enabled(false);
    auto w = g.leaf(random_tensor({3}, 31), true);
    auto y = sum(mul(w, w));
    CHECK_FALSE(g.requires_grad(y.id()));
  }

  TEST_CASE("forward passes are bit-identical") {
    const auto x = random_tensor({4, 6}, 32);
    const auto w = random_tensor({6, 6}, 33);
    auto run = [&] {
      Graph<double> g;
      auto h = softmax_lastaxis(gelu_fast(linear(g.constant(x), g.constant(w))));
      return h.value();
    };
    CHECK(hgtest::bit_equal(run(), run()));
  }

  TEST_CASE("single precision follows the same code paths") {
    Graph<float> g;
    auto a = g.constant(Tensor<float>::from({1, 2}, {1, 2}));
    auto b = g.constant(Tensor<float>::from({2, 1}, {3, 4}));
    CHECK(matmul(a, b).value()[0] == 11.0f);
  }
}
