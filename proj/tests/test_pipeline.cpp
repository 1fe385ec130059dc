#include <sys/wait.h>

#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "fixtures.hpp"
#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/pipeline.hpp"

using namespace heal;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HEAL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig in_dir(RunConfig c, const fs::path& run_dir) {
  c.paths.run_dir = run_dir.string();
  return c;
}

}  // namespace

TEST_CASE("full mock run produces every output") {
  fixtures::TempDir dir;
  Pipeline p(fixtures::small_run(dir.path()));
  const auto summary = p.run();
  for (const char* f : {"samples_base.jsonl", "d_base.jsonl", "pass_stats.jsonl", "d_hint_candidates.jsonl",
                        "d_repair_candidates.jsonl", "repair_report.jsonl", "suspicion_reports.jsonl", "d_hint.jsonl",
                        "d_repair.jsonl", "prune_log.jsonl", "stage_I.jsonl", "stage_II.jsonl", "stage_III.jsonl",
                        "stage_III.manifest.json", "leak_scan.json", "manifest.json", "reports/summary.json",
                        "reports/lambda_sweep.csv", "reports/pass_rates.csv", "reports/anomaly_histogram.csv"}) {
    CHECK_MESSAGE(fs::exists(p.run_dir() / f), f);
  }
  CHECK(summary.at("questions") == 8);
  CHECK(summary.at("leak_findings") == 0);
  const auto& st = summary.at("stage_records");
  CHECK(st.at("I").get<int>() == summary.at("d_base").get<int>());
  CHECK(st.at("II").get<int>() == summary.at("d_base").get<int>() + summary.at("d_hint").get<int>());
  CHECK(st.at("III").get<int>() == st.at("II").get<int>() + summary.at("d_repair").get<int>());

  const auto manifest = json::parse(fixtures::slurp(p.run_dir() / "manifest.json"));
  for (const auto& f : manifest.at("files")) {
    CHECK(f.at("sha256") == file_digest(p.run_dir() / f.at("path").get<std::string>()));
  }
  // stage files never show a prompt with the answer
  const auto leaks = json::parse(fixtures::slurp(p.run_dir() / "leak_scan.json"));
  CHECK(leaks.at("findings").empty());
}

TEST_CASE("same seed in another directory gives the same manifest") {
  fixtures::TempDir dir;
  const auto c = fixtures::small_run(dir.path());
  Pipeline a(in_dir(c, dir / "a"));
  a.run();
  Pipeline b(in_dir(c, dir / "b"));
  b.run();
  CHECK(fixtures::slurp(dir / "a" / "manifest.json") == fixtures::slurp(dir / "b" / "manifest.json"));
  auto other = c;
  other.seed = 100;
  Pipeline d(in_dir(other, dir / "d"));
  d.run();
  CHECK(fixtures::slurp(dir / "a" / "manifest.json") != fixtures::slurp(dir / "d" / "manifest.json"));
}

TEST_CASE("interrupted runs resume to identical outputs") {
  fixtures::TempDir dir;
  const auto c = fixtures::small_run(dir.path());
  Pipeline ref(in_dir(c, dir / "ref"));
  ref.run();
  const auto expected = fixtures::slurp(dir / "ref" / "manifest.json");

  // cuts land in base sampling, hint sampling and repair
  for (std::size_t cut : {5u, 70u, 90u}) {
    const auto run_dir = dir / ("cut" + std::to_string(cut));
    {
      Pipeline p(in_dir(c, run_dir));
      p.stop_after(cut);
      CHECK(code_of([&] { p.run(); }) == ErrorCode::Interrupted);
    }
    Pipeline resumed(in_dir(c, run_dir));
    resumed.run();
    CHECK(fixtures::slurp(run_dir / "manifest.json") == expected);
  }
}

TEST_CASE("phases can run one at a time") {
  fixtures::TempDir dir;
  const auto c = fixtures::small_run(dir.path());
  Pipeline ref(in_dir(c, dir / "ref"));
  ref.run();
  Pipeline p(in_dir(c, dir / "step"));
  CHECK(code_of([&] { p.classify(); }) == ErrorCode::StageIncomplete);
  p.sample();
  p.classify();
  p.hint();
  p.repair();
  CHECK(code_of([&] { p.filter(); }) == ErrorCode::StageIncomplete);
  p.score();
  p.filter();
  p.assemble(Stage::I);
  CHECK(fs::exists(dir / "step" / "stage_I.jsonl"));
  CHECK_FALSE(fs::exists(dir / "step" / "stage_II.jsonl"));
  p.assemble();
  p.report({0.2});
  CHECK(fixtures::slurp(dir / "step" / "manifest.json") == fixtures::slurp(dir / "ref" / "manifest.json"));
}

TEST_CASE("missing questions file is a config error and writes nothing") {
  fixtures::TempDir dir;
  auto c = fixtures::small_run(dir.path());
  c.paths.questions = (dir / "nope.jsonl").string();
  CHECK(code_of([&] { Pipeline p(c); }) == ErrorCode::Config);
  CHECK_FALSE(fs::exists(c.paths.run_dir));
}

TEST_CASE("report needs scoring output") {
  fixtures::TempDir dir;
  auto c = fixtures::small_run(dir.path());
  Pipeline p(c);
  CHECK(code_of([&] { p.report({0.2}); }) == ErrorCode::StageIncomplete);
  p.sample();
  CHECK(code_of([&] { p.report({0.2}); }) == ErrorCode::StageIncomplete);
}

TEST_CASE("lambda sweep over 100 scored trajectories") {
  fixtures::TempDir dir;
  auto c = fixtures::small_run(dir.path());
  fs::create_directories(c.paths.run_dir);
  std::vector<json> rows;
  for (int i = 0; i < 100; ++i) {
    SuspicionReport r;
    r.question_id = "q0";
    r.trajectory_digest = sha256_hex(std::to_string(i));
    r.length = 10;
    r.steps = {{1, 1.0 + i, 0.5}};
    apply_epsilon(r, 0.01);
    rows.push_back(to_json(r));
  }
  write_file_atomic(fs::path(c.paths.run_dir) / "suspicion_reports.jsonl", to_jsonl(rows));
  write_file_atomic(fs::path(c.paths.run_dir) / "pass_stats.jsonl", "");
  Pipeline p(c);
  const auto summary = p.report({0.1, 0.2, 0.3});
  std::vector<int> pruned;
  for (const auto& e : summary.at("lambda_sweep")) {
    if (e.at("set") == "hint") pruned.push_back(e.at("pruned").get<int>());
  }
  CHECK(pruned == std::vector<int>{10, 20, 30});
  CHECK(fixtures::slurp(fs::path(c.paths.run_dir) / "reports" / "lambda_sweep.csv").find("0.3,hint,100,30,70") !=
        std::string::npos);
  CHECK(code_of([&] { p.report({1.5}); }) == ErrorCode::Config);
}

TEST_CASE("fraction of hard questions never solved unaided") {
  fixtures::TempDir dir;
  auto c = fixtures::small_run(dir.path(), 400, 64);
  c.backend.mock.mix.clear();
  c.backend.mock.default_profile = fixtures::short_profile(0.02);
  c.backend.mock.default_profile.min_step_chars = 1;
  c.backend.mock.default_profile.max_step_chars = 1;
  c.backend.mock.default_profile.max_steps = 3;
  Pipeline p(c);
  p.sample();
  p.classify();
  write_file_atomic(fs::path(c.paths.run_dir) / "suspicion_reports.jsonl", "");
  const auto summary = p.report({0.2});
  const double expected = std::pow(0.98, 64);  // about 0.274
  const double got = summary.at("zero_unaided_fraction").get<double>();
  MESSAGE("zero unaided fraction " << got << " vs " << expected);
  CHECK(summary.at("hard_total") == 400);
  CHECK(std::abs(got - expected) < 0.07);
}

TEST_CASE("CLI exit codes") {
  fixtures::TempDir dir;
  auto c = fixtures::small_run(dir.path());
  const auto cfg = dir / "config.json";
  write_file_atomic(cfg, to_json(c).dump(2));
  const auto log = dir / "log.txt";
  const std::string base = "--config " + cfg.string();

  CHECK(cli("run " + base + " --questions " + (dir / "missing.jsonl").string(), log) == 2);
  CHECK_FALSE(fs::exists(c.paths.run_dir));

  CHECK(cli("run " + base + " --dry-run", log) == 0);
  CHECK_FALSE(fs::exists(c.paths.run_dir));
  CHECK(fixtures::slurp(log).find("sample") != std::string::npos);

  CHECK(cli("run " + base, log) == 0);
  CHECK(fs::exists(fs::path(c.paths.run_dir) / "stage_III.jsonl"));
  const auto manifest = fixtures::slurp(fs::path(c.paths.run_dir) / "manifest.json");
  CHECK(cli("run " + base, log) == 2);  // existing state needs --resume
  CHECK(cli("run " + base + " --resume", log) == 0);
  CHECK(fixtures::slurp(fs::path(c.paths.run_dir) / "manifest.json") == manifest);

  CHECK(cli("report " + base + " --lambda 0.1 0.2 0.3", log) == 0);
  CHECK(fixtures::slurp(fs::path(c.paths.run_dir) / "reports" / "lambda_sweep.csv").find("0.3,") != std::string::npos);
  CHECK(cli("report " + base + " --run-dir " + (dir / "empty").string(), log) == 4);
  CHECK(cli("bogus", log) == 2);
  CHECK(cli("run " + base + " --lambda 2", log) == 2);

  // the --seed override lands in a fresh directory with different outputs
  CHECK(cli("run " + base + " --seed 5 --run-dir " + (dir / "seed5").string(), log) == 0);
  CHECK(fixtures::slurp(dir / "seed5" / "manifest.json") != manifest);

  write_file_atomic(cfg, "{\"seed\": 1, \"typo\": 2}");
  CHECK(cli("run " + base, log) == 2);
}
