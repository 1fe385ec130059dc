#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/pure.hpp"

using namespace heal;

namespace {

SuspicionReport report(const std::string& d, std::optional<double> score) {
  SuspicionReport r;
  r.question_id = "q";
  r.trajectory_digest = d;
  r.anomaly_score = score;
  r.unscorable = !score.has_value();
  return r;
}

std::vector<std::string> digests(const std::vector<SuspicionReport>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs) out.push_back(r.trajectory_digest);
  return out;
}

SamplingContext context_for(const Backend& b) {
  SamplingContext c;
  c.backend = &b;
  c.parallelism = 2;
  c.retry = fixtures::no_wait(2);
  return c;
}

Trajectory trajectory(const Question& q, int steps, Provenance prov = Provenance::Hint) {
  std::string text;
  for (int s = 1; s < steps; ++s) text += "step" + std::to_string(s) + " abc\n\n";
  text += "Final Answer: " + q.gold_answer;
  return make_trajectory(q, prov, fixtures::char_tokens(text), 0, 1, SamplingParams{}, default_answer_patterns());
}

// Scores step text at a fixed per-token nll and the gold answer at zero.
class ScriptedBackend final : public Backend {
 public:
  ScriptedBackend(std::string gold, double step_nll, bool scoring = true)
      : gold_(std::move(gold)), step_nll_(step_nll), scoring_(scoring) {}
  BackendCapabilities capabilities() const override { return {true, scoring_, 1 << 20}; }
  std::vector<Generation> sample(std::string_view, const SamplingParams&) const override {
    throw Error(ErrorCode::CapabilityMissing, "scripted");
  }
  std::vector<double> score_continuation(std::string_view, std::string_view cont) const override {
    if (!scoring_) throw Error(ErrorCode::CapabilityMissing, "no scoring");
    if (cont == gold_) return std::vector<double>(cont.size(), 0.0);
    return std::vector<double>(cont.size(), step_nll_);
  }

 private:
  std::string gold_;
  double step_nll_;
  bool scoring_;
};

}  // namespace

TEST_CASE("suspicion_ratio") {
  CHECK(std::abs(suspicion_ratio(2.0, 0.99, 0.01) - 2.0) <= 1e-9);
  CHECK(suspicion_ratio(3.0, 0.0, 0.01) == doctest::Approx(300.0));
  CHECK_THROWS_AS(suspicion_ratio(1.0, 0.0, 0.0), Error);
}

TEST_CASE("a certain answer gives R = PPL / epsilon") {
  const Question q{"q", "A question for scripted scoring.", "42"};
  ScriptedBackend b(q.gold_answer, 0.7);
  const auto r = suspicion_curve(trajectory(q, 6), q, context_for(b), FilterConfig{});
  REQUIRE(r.ratios.size() == 4);
  for (const auto& [t, v] : r.ratios) CHECK(v == doctest::Approx(100.0 * std::exp(0.7)).epsilon(1e-12));
}

TEST_CASE("uniform mock gives the constant curve exp(m) / (k m + eps)") {
  MockModelSpec spec;
  spec.kind = MockModelSpec::Kind::Uniform;
  MockBackend mock(spec);
  const Question q{"q", "Uniform question.", "1234"};
  const double m = std::log(4.0);
  const double expected = std::exp(m) / (4.0 * m + 0.01);
  const auto r = suspicion_curve(trajectory(q, 8), q, context_for(mock), FilterConfig{});
  REQUIRE(r.ratios.size() == 6);
  for (const auto& [t, v] : r.ratios) CHECK(std::abs(v - expected) <= 1e-9);
  CHECK(*r.anomaly_score == doctest::Approx(expected));

  spec.kind = MockModelSpec::Kind::Deterministic;
  MockBackend det(spec);
  const auto d = suspicion_curve(trajectory(q, 5), q, context_for(det), FilterConfig{});
  for (const auto& [t, v] : d.ratios) CHECK(v == doctest::Approx(100.0));
}

TEST_CASE("the curve stops two steps before the end") {
  const auto qs = fixtures::questions(1);
  MockBackend mock(fixtures::teacher(qs));
  for (int L : {3, 4, 10}) {
    const auto r = suspicion_curve(trajectory(qs[0], L), qs[0], context_for(mock), FilterConfig{});
    REQUIRE(r.ratios.size() == static_cast<std::size_t>(L - 2));
    CHECK(r.ratios.back().first == static_cast<std::size_t>(L - 2));
    CHECK(r.length == static_cast<std::size_t>(L));
  }
}

TEST_CASE("anomaly_score") {
  const std::vector<double> a{0.5, 3.2, 1.1}, c{2.0, 2.0, 2.0}, s{7.0};
  CHECK(anomaly_score(a) == 3.2);
  CHECK(anomaly_score(c) == 2.0);
  CHECK(anomaly_score(s) == 7.0);
  CHECK_THROWS_AS(anomaly_score(std::span<const double>{}), Error);
}

TEST_CASE("filter_top_lambda examples") {
  std::vector<SuspicionReport> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(report("d" + std::to_string(i), static_cast<double>(i % 7)));
  auto f = filter_top_lambda(rs, 0.2);
  CHECK(digests(f.pruned) == std::vector<std::string>{"d6", "d5"});
  CHECK(f.kept.size() == 8);
  CHECK(filter_top_lambda(rs, 0.0).pruned.empty());
  rs.resize(7);
  CHECK(filter_top_lambda(rs, 0.2).pruned.size() == 1);
  CHECK(prune_count(0.2, 10) == 2);
  CHECK(prune_count(0.1, 30) == 3);  // 0.1*30 is 3.0000000000000004 or 2.9999999999999996 in binary
  for (std::size_t n = 1; n <= 50; ++n) {
    for (double l : {0.0, 0.1, 0.2, 0.5}) {
      CHECK(prune_count(l, n) == static_cast<std::size_t>(std::floor(l * static_cast<double>(n) + 1e-9)));
    }
  }
}

TEST_CASE("filter ties and permutation invariance") {
  std::vector<SuspicionReport> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(report(sha256_hex(std::to_string(i)), i < 8 ? 5.0 : 1.0));
  const auto ref = filter_top_lambda(rs, 0.2);
  REQUIRE(ref.pruned.size() == 4);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(rs.begin(), rs.end(), rng);
    const auto f = filter_top_lambda(rs, 0.2);
    CHECK(digests(f.pruned) == digests(ref.pruned));
    const auto kept_list = digests(f.kept);
    const std::set<std::string> kept(kept_list.begin(), kept_list.end());
    for (const auto& d : digests(ref.pruned)) CHECK(kept.count(d) == 0);
  }
  const auto pruned = digests(ref.pruned);
  CHECK(std::is_sorted(pruned.begin(), pruned.end()));
}

TEST_CASE("unscorable reports are kept and not counted") {
  std::vector<SuspicionReport> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(report("d" + std::to_string(i), static_cast<double>(i)));
  rs.push_back(report("u1", std::nullopt));
  rs.push_back(report("u2", std::nullopt));
  const auto f = filter_top_lambda(rs, 0.2);
  CHECK(f.pruned.size() == 2);
  CHECK(f.kept.size() == 10);
  CHECK(digests(f.kept).back() == "u2");

  const Question q{"q", "Short one.", "1"};
  ScriptedBackend b(q.gold_answer, 0.5);
  const std::vector<Trajectory> ts{trajectory(q, 2), trajectory(q, 4)};
  const auto reports = score_trajectories(ts, {{"q", q}}, context_for(b), FilterConfig{});
  CHECK(reports[0].unscorable);
  CHECK_FALSE(reports[0].anomaly_score.has_value());
  CHECK_FALSE(reports[1].unscorable);
  CHECK_THROWS_AS(score_steps(ts[0], q, context_for(b), FilterConfig{}), Error);
}

TEST_CASE("ratios decrease in epsilon; eps = 0 ordering is scale invariant") {
  const auto qs = fixtures::questions(3);
  MockBackend mock(fixtures::teacher(qs));
  auto r = suspicion_curve(trajectory(qs[0], 9), qs[0], context_for(mock), FilterConfig{});
  auto r2 = r;
  apply_epsilon(r2, 0.1);
  for (std::size_t i = 0; i < r.ratios.size(); ++i) CHECK(r2.ratios[i].second < r.ratios[i].second);

  auto order = [](const std::vector<StepScore>& steps, double scale) {
    std::vector<std::size_t> idx(steps.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return steps[a].ppl / (scale * steps[a].answer_nll) > steps[b].ppl / (scale * steps[b].answer_nll);
    });
    return idx;
  };
  CHECK(order(r.steps, 1.0) == order(r.steps, 3.7));
}

TEST_CASE("scoring without the capability fails loudly") {
  const Question q{"q", "Q.", "1"};
  ScriptedBackend b(q.gold_answer, 0.5, false);
  try {
    suspicion_curve(trajectory(q, 5), q, context_for(b), FilterConfig{});
    FAIL("expected CapabilityMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CapabilityMissing);
  }
}

TEST_CASE("planted shortcut steps are pruned first") {
  const auto qs = fixtures::questions(40);
  auto spec = fixtures::teacher(qs);
  auto clean = fixtures::short_profile(0.0, 1.0);
  clean.min_steps = 9;
  clean.max_steps = 14;
  auto leaky = clean;
  leaky.leak_rate = 1.0;
  for (int i = 0; i < 4; ++i) spec.profiles[qs[static_cast<std::size_t>(i * 10)].id] = leaky;
  spec.default_profile = clean;
  MockBackend mock(spec);
  auto ctx = context_for(mock);
  const std::vector<DifficultyLabel> labels(qs.size(), classify_difficulty(0, 30));
  SamplingParams p;
  p.max_tokens = 4096;
  const auto samples = run_hint_sampling(qs, labels, {1, 1}, p, ctx);
  std::vector<Trajectory> pool;
  std::set<std::string> leaks;
  for (const auto& s : samples) {
    for (const auto& t : s.trajectories) {
      pool.push_back(t);
      if (t.text().find("SINCETHEREFERENCEANSWERIS") != std::string::npos) leaks.insert(digest(t));
    }
  }
  REQUIRE(leaks.size() == 4);
  std::map<std::string, Question> by_id;
  for (const auto& q : qs) by_id[q.id] = q;
  const auto reports = score_trajectories(pool, by_id, ctx, FilterConfig{});
  const auto f = filter_top_lambda(reports, 0.2);
  REQUIRE(f.pruned.size() == 8);
  for (std::size_t i = 0; i < 4; ++i) CHECK(leaks.count(f.pruned[i].trajectory_digest) == 1);
}

TEST_CASE("suspicion report JSON round trip") {
  SuspicionReport r = report("abc", 2.5);
  r.steps = {{1, 2.0, 0.99}, {2, 3.0, 0.5}};
  apply_epsilon(r, 0.01);
  const auto back = suspicion_report_from_json(to_json(r));
  CHECK(back.trajectory_digest == "abc");
  REQUIRE(back.steps.size() == 2);
  CHECK(back.ratios[0].second == doctest::Approx(2.0));
  CHECK(*back.anomaly_score == doctest::Approx(3.0 / 0.51).epsilon(1e-9));
}
