// Serial reference path against the OpenMP path for scoring and sampling.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "amd/evaluation.hpp"

using namespace amd;

namespace {

struct Case {
  mech::SettingSpec setting;
  const char* source;
};

const Case& bench_case(int64_t k) {
  static const Case cases[] = {
      {mech::VcgRedistribution{}, "def h(others_bids): return 0.5 * min(others_bids)"},
      {mech::RediscoveryPerBidder{}, "def h(v): return v - (1 - cdf(v)) / pdf(v)"},
      {mech::SingleItemRevenue{2, dist::correlated_grid(), mech::kDefaultEpsilon},
       "def h(bids):\n  a1 = sigmoid(10 * (bids[0] - 0.5))\n  a2 = sigmoid(10 * (bids[1] - 0.5))\n"
       "  return [a1, a2, 1 - max(a1, a2)]\n"},
  };
  return cases[k];
}

const char* const kNames[] = {"redistribution_n4", "per_bidder_uniform", "joint_grid"};

void run_score(benchmark::State& state, eval::Mode mode) {
  const auto& c = bench_case(state.range(0));
  const auto program = dsl::parse(c.source, mech::signature_for(c.setting));
  const auto batch = eval::draw_samples(c.setting, static_cast<std::size_t>(state.range(1)), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::score_batch(program, c.setting, batch, false, mode).score);
  }
  state.SetLabel(kNames[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_score_serial(benchmark::State& state) { run_score(state, eval::Mode::Serial); }
void BM_score_parallel(benchmark::State& state) { run_score(state, eval::Mode::Parallel); }

void run_sample(benchmark::State& state, int threads) {
  const auto model = dist::ValueModel(dist::MarginalDistribution::uniform());
  const int before = omp_get_max_threads();
  omp_set_num_threads(threads);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dist::sample(model, 4, static_cast<std::size_t>(state.range(0)), 7).values.data());
  }
  omp_set_num_threads(before);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_sample_one_thread(benchmark::State& state) { run_sample(state, 1); }
void BM_sample_all_threads(benchmark::State& state) { run_sample(state, omp_get_num_procs()); }

void score_args(benchmark::internal::Benchmark* b) {
  for (int64_t k = 0; k < 3; ++k) b->Args({k, 3000});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_score_serial)->Apply(score_args);
BENCHMARK(BM_score_parallel)->Apply(score_args);
BENCHMARK(BM_sample_one_thread)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_sample_all_threads)->Arg(100000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
