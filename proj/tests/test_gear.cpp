#include <algorithm>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/gear.hpp"

using namespace heal;

namespace {

EntropyTrace flat(std::size_t len, double v = 0.5) { return {std::vector<double>(len, v)}; }

// Exhaustive scan over every t with 1 < t < L/3 in real arithmetic.
std::size_t oracle_peak(const std::vector<double>& h) {
  const double third = static_cast<double>(h.size()) / 3.0;
  std::vector<std::pair<double, std::size_t>> window;
  for (std::size_t t = 2; t <= h.size(); ++t) {
    if (static_cast<double>(t) < third) window.emplace_back(h[t - 1] - h[t - 2], t);
  }
  const double best = std::max_element(window.begin(), window.end())->first;
  for (const auto& [g, t] : window)
    if (g == best) return t;
  return 0;
}

SamplingParams params() {
  SamplingParams p;
  p.max_tokens = 8192;
  return p;
}

SamplingContext context_for(const Backend& b, std::uint64_t seed = 1) {
  SamplingContext c;
  c.backend = &b;
  c.run_seed = seed;
  c.parallelism = 2;
  c.retry = fixtures::no_wait(2);
  return c;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("entropy_gradient") {
  const auto g = entropy_gradient({{1.0, 1.0, 1.0}});
  REQUIRE(g.size() == 2);
  CHECK(g[0].second == 0.0);
  CHECK(g[1].second == 0.0);
  const auto h = entropy_gradient({{0.5, 0.7, 0.4}});
  CHECK(h[0].first == 2);
  CHECK(h[0].second == doctest::Approx(0.2));
  CHECK(h[1].first == 3);
  CHECK(h[1].second == doctest::Approx(-0.3));
  CHECK(code_of([] { entropy_gradient({{1.0}}); }) == ErrorCode::TraceTooShort);
}

TEST_CASE("find_breakpoint examples") {
  auto tr = flat(30);
  for (std::size_t t = 6; t <= 30; ++t) tr.values[t - 1] = 2.0;
  auto bp = find_breakpoint(tr);
  CHECK(bp.peak_index == 6);
  CHECK(bp.t_star == 5);
  CHECK(bp.gradient_at_peak == doctest::Approx(1.5));

  tr = flat(30);
  tr.values[14] = 3.0;  // step 15 lies outside 1 < t < 10
  tr.values[3] = 0.6;   // small bump at step 4
  bp = find_breakpoint(tr);
  CHECK(bp.peak_index == 4);
  CHECK(bp.peak_index < 10);

  // all gradients equal: earliest window step, clamped anchor
  bp = find_breakpoint(flat(30));
  CHECK(bp.peak_index == 2);
  CHECK(bp.t_star == 1);

  CHECK(code_of([] { find_breakpoint(flat(6)); }) == ErrorCode::WindowEmpty);
  CHECK(find_breakpoint(flat(7)).peak_index == 2);  // window is {2}
  CHECK(find_breakpoint(flat(9)).peak_index == 2);  // 3 < 9/3 fails
  auto ten = flat(10);
  ten.values[2] = 1.0;
  CHECK(find_breakpoint(ten).peak_index == 3);  // 3 < 10/3
}

TEST_CASE("property: find_breakpoint matches the exhaustive oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(7, 300);
  std::uniform_real_distribution<double> val(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    EntropyTrace tr;
    tr.values.resize(len(rng));
    // quantised values make ties common
    for (auto& v : tr.values) v = (i % 2) ? val(rng) : std::floor(val(rng) * 2) / 2;
    const auto bp = find_breakpoint(tr);
    const auto peak = oracle_peak(tr.values);
    REQUIRE(bp.peak_index == peak);
    CHECK(bp.t_star == std::max<std::size_t>(1, peak - 1));
    CHECK(3 * bp.peak_index < tr.length());
    // backtrack: the anchor step never has the peak gradient
    if (bp.t_star >= 2) {
      const double g_anchor = tr.values[bp.t_star - 1] - tr.values[bp.t_star - 2];
      CHECK(g_anchor < bp.gradient_at_peak);
    }
  }
}

TEST_CASE("find_breakpoint rejects invalid entropies") {
  auto tr = flat(10);
  tr.values[4] = -1.0;
  CHECK(code_of([&] { find_breakpoint(tr); }) == ErrorCode::Precondition);
  tr.values[4] = std::nan("");
  CHECK(code_of([&] { find_breakpoint(tr); }) == ErrorCode::Precondition);
}

TEST_CASE("build_repair_prompt") {
  const Question q{"q", "Compute the sum of the first ten odd numbers.", "100"};
  const std::string prefix = "one\n\ntwo\n\nthree\n\nfour\n\nfive";
  const auto t = PromptTemplates::defaults();
  const auto p = build_repair_prompt(q, prefix, t);
  CHECK(p.find(q.text) != std::string::npos);
  CHECK(p.find("The reference answer is 100") != std::string::npos);
  CHECK(p.find(prefix) != std::string::npos);
  CHECK(p.find(t.repair_marker) != std::string::npos);
  CHECK(code_of([&] { build_repair_prompt(q, "", t); }) == ErrorCode::Precondition);
  const std::string braces = "a {answer} b\n\n{{c}}";
  CHECK(build_repair_prompt(q, braces, t).find(braces) != std::string::npos);
}

TEST_CASE("select_incorrect_paths orders longest first, ties by digest") {
  const Question q{"q", "Some question text here.", "7"};
  std::vector<Trajectory> ts;
  for (int i = 0; i < 6; ++i) {
    std::string text;
    for (int s = 0; s <= i % 3; ++s) text += "step" + std::to_string(i) + "\n\n";
    text += "Final Answer: " + std::string(i == 5 ? "7" : "8");
    ts.push_back(make_trajectory(q, Provenance::Base, fixtures::char_tokens(text), static_cast<std::uint64_t>(i), 1,
                                 SamplingParams{}, default_answer_patterns()));
  }
  const auto sel = select_incorrect_paths(ts, 10);
  CHECK(sel.size() == 5);
  for (const auto& t : sel) CHECK_FALSE(*t.correct);
  for (std::size_t i = 1; i < sel.size(); ++i) {
    const bool ordered = sel[i - 1].length() > sel[i].length() ||
                         (sel[i - 1].length() == sel[i].length() && digest(sel[i - 1]) < digest(sel[i]));
    CHECK(ordered);
  }
  CHECK(select_incorrect_paths(ts, 2).size() == 2);
}

TEST_CASE("stitch_tokens keeps the prefix steps intact") {
  const Question q{"q", "Question text.", "5"};
  const std::string text = "alpha\n\nbeta\n\ngamma\n\nFinal Answer: 4";
  // coarse tokens that straddle step boundaries
  std::vector<TokenRecord> toks{{"alp", 1, 1}, {"ha\n", 1, 1}, {"\nbe", 1, 1}, {"ta\n\ng", 1, 1},
                                {"amma", 1, 1}, {"\n\nFinal Answer: 4", 1, 1}};
  const auto src = make_trajectory(q, Provenance::Base, toks, 0, 1, SamplingParams{}, default_answer_patterns());
  const auto cont = fixtures::char_tokens("delta\n\nFinal Answer: 5");
  for (std::size_t t_star : {1u, 2u, 3u}) {
    const auto stitched = stitch_tokens(src, t_star, cont);
    const auto r = make_trajectory(q, Provenance::Repair, stitched, 0, 1, SamplingParams{}, default_answer_patterns());
    for (std::size_t s = 0; s < t_star; ++s) CHECK(r.steps[s].text == src.steps[s].text);
    CHECK(r.steps[t_star].text == "delta");
    CHECK(*r.correct);
  }
}

TEST_CASE("run_repair recovers extremely hard questions") {
  const auto qs = fixtures::questions(4);
  MockProfile prof;  // 9..30 steps
  prof.p0 = 0.0;
  prof.p2 = 0.5;
  prof.spike_step = 3;
  MockBackend mock(fixtures::teacher(qs, prof));
  const auto ctx = context_for(mock, 5);
  const auto base = run_rejection_sampling(qs, {6, 6}, params(), ctx);
  std::vector<RepairTarget> targets;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    targets.push_back({qs[i], classify_difficulty(base[i].pass_count, base[i].total), false, base[i].trajectories});
  }
  const auto out = run_repair(targets, {3, 8}, params(), ctx);
  REQUIRE(out.reports.size() == 4);
  for (const auto& rep : out.reports) {
    CHECK(rep.paths_tried == 3);
    CHECK(rep.candidates == 24);
    CHECK(rep.successes >= 1);
  }
  std::map<std::string, const Trajectory*> sources;
  for (const auto& b : base)
    for (const auto& t : b.trajectories) sources[digest(t)] = &t;
  for (const auto& r : out.repairs) {
    CHECK(r.provenance == Provenance::Repair);
    CHECK(*r.correct);
    REQUIRE(r.repair.has_value());
    const auto* src = sources.at(r.repair->source_digest);
    for (std::size_t s = 0; s < r.repair->t_star; ++s) CHECK(r.steps[s].text == src->steps[s].text);
    // the prefix carries over its tokens and their scores
    CHECK(r.tokens[0].nll == src->tokens[0].nll);
  }
  // deterministic
  const auto again = run_repair(targets, {3, 8}, params(), ctx);
  REQUIRE(again.repairs.size() == out.repairs.size());
  for (std::size_t i = 0; i < out.repairs.size(); ++i) CHECK(digest(again.repairs[i]) == digest(out.repairs[i]));
}

TEST_CASE("run_repair edge cases") {
  const auto qs = fixtures::questions(2);
  MockProfile prof;
  prof.p0 = 0.0;
  prof.p2 = 0.0;
  MockBackend mock(fixtures::teacher(qs, prof));
  const auto ctx = context_for(mock);
  const auto base = run_rejection_sampling(qs, {3, 3}, params(), ctx);
  const auto extreme = classify_difficulty(0, 3);

  // p2 = 0: every candidate fails the answer check
  std::vector<RepairTarget> targets{{qs[0], extreme, false, base[0].trajectories}};
  auto out = run_repair(targets, {2, 5}, params(), ctx);
  CHECK(out.repairs.empty());
  CHECK(out.reports[0].candidates == 10);
  CHECK(out.reports[0].successes == 0);

  // no incorrect paths: no-op with a note
  targets = {{qs[0], extreme, false, {}}};
  out = run_repair(targets, {2, 5}, params(), ctx);
  CHECK(out.reports[0].paths_tried == 0);
  CHECK_FALSE(out.reports[0].note.empty());

  // short paths cannot be repaired locally
  MockBackend short_mock(fixtures::teacher(qs, fixtures::short_profile(0.0)));
  const auto short_base = run_rejection_sampling(qs, {3, 3}, params(), context_for(short_mock));
  targets = {{qs[1], extreme, false, short_base[1].trajectories}};
  out = run_repair(targets, {2, 5}, params(), context_for(short_mock));
  CHECK(out.reports[0].routed_to_hint);
  CHECK(out.reports[0].fallbacks == 2);

  // only extremely hard or forwarded questions
  targets = {{qs[0], classify_difficulty(2, 30), false, base[0].trajectories}};
  CHECK(code_of([&] { run_repair(targets, {2, 5}, params(), ctx); }) == ErrorCode::Precondition);
  targets[0].forwarded = true;
  CHECK(run_repair(targets, {2, 5}, params(), ctx).reports[0].paths_tried == 2);
}

TEST_CASE("repair report JSON round trip") {
  RepairReport r{"q", 3, 60, 20, 1, false, false, "x"};
  const auto back = repair_report_from_json(to_json(r));
  CHECK(back.paths_tried == 3);
  CHECK(back.successes == 20);
  CHECK(back.note == "x");
}
