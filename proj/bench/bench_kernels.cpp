#include <benchmark/benchmark.h>

#include <random>

#include "heal/kernels.hpp"
#include "heal/mock_backend.hpp"
#include "heal/prompt.hpp"

namespace {

using namespace heal;

const std::vector<EntropyTrace>& traces() {
  static const auto data = [] {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> len(7, 300);
    std::uniform_real_distribution<double> val(0.0, 5.0);
    std::vector<EntropyTrace> out(20000);
    for (auto& t : out) {
      t.values.resize(len(rng));
      for (auto& v : t.values) v = val(rng);
    }
    return out;
  }();
  return data;
}

const std::vector<SuspicionReport>& reports() {
  static const auto data = [] {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ppl(1.0, 80.0), nll(0.0, 12.0);
    std::vector<SuspicionReport> out(20000);
    for (auto& r : out) {
      for (std::size_t t = 1; t <= 28; ++t) r.steps.push_back({t, ppl(rng), nll(rng)});
    }
    return out;
  }();
  return data;
}

const std::vector<Trajectory>& trajectories() {
  static const auto data = [] {
    std::vector<Question> qs;
    for (int i = 0; i < 50; ++i) qs.push_back({"b" + std::to_string(i), "Benchmark item " + std::to_string(i) + ".", "7"});
    MockModelSpec spec;
    spec.questions = qs;
    MockBackend mock(spec);
    SamplingParams p;
    p.n = 20;
    p.seed = 3;
    std::vector<Trajectory> out;
    for (const auto& q : qs) {
      for (auto& g : mock.sample(build_base_prompt(q, PromptTemplates::defaults()), p)) {
        out.push_back(make_trajectory(q, Provenance::Base, std::move(g.tokens), 0, 0, p, default_answer_patterns()));
      }
    }
    return out;
  }();
  return data;
}

void BM_breakpoints_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::serial::find_breakpoints(traces()));
}
void BM_breakpoints_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::parallel::find_breakpoints(traces()));
}
void BM_anomaly_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::serial::anomaly_scores(reports(), 0.01));
}
void BM_anomaly_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::parallel::anomaly_scores(reports(), 0.01));
}
void BM_step_stats_serial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::serial::step_statistics(trajectories()));
}
void BM_step_stats_parallel(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(kernels::parallel::step_statistics(trajectories()));
}

}  // namespace

BENCHMARK(BM_breakpoints_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_breakpoints_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_anomaly_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_anomaly_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_step_stats_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_step_stats_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
