#include <benchmark/benchmark.h>

#include <random>

#include "hourglass/audit.hpp"
#include "hourglass/train.hpp"

using namespace hourglass;

namespace {

Tensor<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t(Shape{r, c});
  for (auto& x : t.data()) x = static_cast<float>(standard_normal(rng));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Graph<float> g;
    g.set_grad_enabled(false);
    benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512);

ModelSpec bench_spec(const char* hierarchy, std::size_t length) {
  ModelSpec spec;
  spec.config.d_model = 128;
  spec.config.d_ff = 512;
  spec.config.n_heads = 4;
  spec.config.max_len = length;
  spec.hierarchy = parse_hierarchy(hierarchy);
  spec.upsample = UpsampleMethod::linear;
  return spec;
}

TokenBatch bench_tokens(std::size_t batch, std::size_t length) {
  std::mt19937_64 rng(3);
  TokenBatch t{batch, length, std::vector<std::int32_t>(batch * length)};
  for (auto& x : t.tokens) x = static_cast<std::int32_t>(rng() % 256);
  return t;
}

// Self-attention block forward pass at full resolution.
void BM_BlockForward(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  HourglassModel<float> model(bench_spec("1@1", l), 1);
  const auto tokens = bench_tokens(1, l);
  for (auto _ : state) {
    Graph<float> g;
    g.set_grad_enabled(false);
    benchmark::DoNotOptimize(model.forward(g, tokens).logits.value().data().data());
  }
}
BENCHMARK(BM_BlockForward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

// Forward, backward and Adam update of one batch.
void train_step(benchmark::State& state, const char* hierarchy) {
  const std::size_t l = 576, b = 2;
  HourglassModel<float> model(bench_spec(hierarchy, l), 1);
  Adam<float> adam(model.params(), 0.9, 0.98, 1e-9);
  const auto tokens = bench_tokens(b, l);
  std::mt19937_64 rng(5);
  for (auto _ : state) {
    Graph<float> g;
    ForwardOptions opt;
    opt.training = true;
    opt.rng = &rng;
    const auto loss = lm_loss(model.forward(g, tokens, opt).logits, tokens);
    g.backward(loss.nats);
    adam.step(1e-4);
    model.params().zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(l * b));
}
void BM_TrainStepVanilla(benchmark::State& state) { train_step(state, "6@1"); }
void BM_TrainStepHourglass(benchmark::State& state) { train_step(state, "2@1 8@3 2@1"); }
BENCHMARK(BM_TrainStepVanilla)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStepHourglass)->Unit(benchmark::kMillisecond);

void BM_CostEstimate(benchmark::State& state) {
  const auto spec = bench_spec("2@1 8@4 2@1", 2048);
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_cost(spec.hierarchy, 2048, spec.config, spec.shorten, spec.upsample).total);
  }
}
BENCHMARK(BM_CostEstimate);

}  // namespace
BENCHMARK_MAIN();
