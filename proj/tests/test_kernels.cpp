#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "heal/kernels.hpp"
#include "heal/prompt.hpp"

using namespace heal;

TEST_CASE("parallel breakpoints agree with the serial reference") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::uniform_real_distribution<double> val(0.0, 5.0);
  std::vector<EntropyTrace> traces(2000);
  for (auto& t : traces) {
    t.values.resize(len(rng));
    for (auto& v : t.values) v = val(rng);
  }
  const auto s = kernels::serial::find_breakpoints(traces);
  const auto p = kernels::parallel::find_breakpoints(traces);
  CHECK(s == p);
  for (std::size_t i = 0; i < traces.size(); ++i) CHECK(s[i].has_value() == (traces[i].length() >= 7));
  CHECK(kernels::parallel::find_breakpoints({}).empty());
}

TEST_CASE("parallel anomaly scores agree with the serial reference") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ppl(1.0, 50.0), nll(0.0, 10.0);
  std::vector<SuspicionReport> reports(1500);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto& r = reports[i];
    r.trajectory_digest = std::to_string(i);
    if (i % 17 == 0) {
      r.unscorable = true;
      continue;
    }
    for (std::size_t t = 1; t <= 1 + i % 30; ++t) r.steps.push_back({t, ppl(rng), nll(rng)});
  }
  for (double eps : {0.01, 0.5}) {
    const auto s = kernels::serial::anomaly_scores(reports, eps);
    CHECK(s == kernels::parallel::anomaly_scores(reports, eps));
    CHECK_FALSE(s[0].has_value());
    CHECK(s[1].has_value());
  }
}

TEST_CASE("parallel step statistics agree with the serial reference") {
  const auto qs = fixtures::questions(6);
  MockBackend mock(fixtures::teacher(qs));
  SamplingParams p;
  p.max_tokens = 8192;
  p.n = 10;
  p.seed = 2;
  std::vector<Trajectory> ts;
  for (const auto& q : qs) {
    for (auto& g : mock.sample(build_base_prompt(q, PromptTemplates::defaults()), p)) {
      ts.push_back(make_trajectory(q, Provenance::Base, g.tokens, 0, 1, p, default_answer_patterns()));
    }
  }
  const auto s = kernels::serial::step_statistics(ts);
  CHECK(s == kernels::parallel::step_statistics(ts));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    REQUIRE(s[i].size() == ts[i].steps.size());
    for (std::size_t k = 0; k < s[i].size(); ++k) {
      CHECK(s[i][k].ppl == doctest::Approx(ts[i].steps[k].ppl).epsilon(1e-12));
    }
  }
}
