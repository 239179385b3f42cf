#include <benchmark/benchmark.h>

#include <random>

#include "anchorlab/concepts.hpp"
#include "anchorlab/denoiser.hpp"
#include "anchorlab/diffusion.hpp"
#include "anchorlab/neural.hpp"
#include "anchorlab/objectives.hpp"
#include "anchorlab/personalize.hpp"

using namespace anchorlab;

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (double& v : m.data) v = normal(rng);
  return m;
}

// Input width of the default denoiser: latent + time + concept + context embeddings.
constexpr std::size_t kDenoiserInput = 2 + 32 + 16 + 16;

void BM_MlpForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Mlp mlp(kDenoiserInput, {128, 128}, 2);
  mlp.init(1);
  const Matrix x = random_batch(batch, kDenoiserInput, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mlp.forward(x));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch));
}
BENCHMARK(BM_MlpForward)->Arg(16)->Arg(128)->Arg(256);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Mlp mlp(kDenoiserInput, {128, 128}, 2);
  mlp.init(1);
  if (state.range(1) > 0) mlp.enable_low_rank(static_cast<int>(state.range(1)), 1.0, 3);
  const Matrix x = random_batch(batch, kDenoiserInput, 2);
  const Matrix g = random_batch(batch, 2, 4);
  for (auto _ : state) {
    MlpCache cache;
    mlp.forward(x, &cache);
    benchmark::DoNotOptimize(mlp.backward(cache, g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch));
}
BENCHMARK(BM_MlpForwardBackward)->Args({16, 0})->Args({16, 4})->Args({128, 0})->Args({128, 4});

void BM_LossIdentity(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix v = random_batch(3, d, 5);
  for (auto _ : state) benchmark::DoNotOptimize(check_blend_anchor_identity(v.row(0), v.row(1), v.row(2), 0.25));
}
BENCHMARK(BM_LossIdentity)->Arg(2)->Arg(64);

void BM_Sample(benchmark::State& state) {
  const World world = build_world({});
  const Schedule sched = make_schedule(200, ScheduleKind::cosine);
  DenoiserModel model(denoiser_config_for(world, sched), 7);
  model.set_trained(true);
  const SamplerSpec sampler = state.range(0) == 0 ? SamplerSpec::ddpm() : SamplerSpec::ddim(static_cast<int>(state.range(0)));
  const GuidanceSpec g = GuidanceSpec::plain(ConditionToken::cls(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, sched, g, 64, sampler, 11));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Sample)->Arg(0)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
