// heal: command-line driver for the distillation data pipeline.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heal/error.hpp"
#include "heal/pipeline.hpp"

namespace {

int exit_code(heal::ErrorCode c) {
  using heal::ErrorCode;
  switch (c) {
    case ErrorCode::Config:
    case ErrorCode::TemplateError:
      return 2;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::ContextExceeded:
    case ErrorCode::CapabilityMissing:
    case ErrorCode::MalformedLogprobs:
      return 3;
    default:
      return 4;
  }
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::string questions;
  std::vector<double> lambdas;
  std::string stage;
  bool resume = false;
  bool dry_run = false;
};

heal::RunConfig effective_config(const Options& o) {
  heal::RunConfig c = o.config_path.empty() ? heal::RunConfig{} : heal::load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.run_dir.empty()) c.paths.run_dir = o.run_dir;
  if (!o.questions.empty()) c.paths.questions = o.questions;
  return c;
}

double single_lambda(const Options& o, double fallback) {
  if (o.lambdas.empty()) return fallback;
  if (o.lambdas.size() > 1) throw heal::Error(heal::ErrorCode::Config, "this command takes a single --lambda");
  return o.lambdas.front();
}

int dispatch(const std::string& cmd, const Options& o) {
  namespace fs = std::filesystem;
  auto cfg = effective_config(o);
  if (cmd == "config") {
    std::cout << heal::to_json(cfg).dump(2) << "\n";
    return 0;
  }
  if (cmd == "run" || cmd == "filter") cfg.pure.lambda = single_lambda(o, cfg.pure.lambda);
  cfg.validate();

  heal::Pipeline p(cfg);
  if (o.dry_run) {
    const heal::json phases = cmd == "run" ? heal::json{"sample", "classify", "hint", "repair", "score", "filter",
                                                        "assemble", "report"}
                                           : heal::json{cmd};
    const heal::json plan{{"command", cmd},
                          {"phases", phases},
                          {"resume", o.resume},
                          {"questions", p.questions().size()},
                          {"run_dir", cfg.paths.run_dir},
                          {"backend", cfg.backend.kind},
                          {"base_n", cfg.elicitation.base_n},
                          {"hint_n", cfg.elicitation.hint_n},
                          {"max_base_requests", p.questions().size() * cfg.elicitation.base_n},
                          {"lambda", cfg.pure.lambda},
                          {"epsilon", cfg.pure.epsilon}};
    std::cout << plan.dump(2) << "\n";
    return 0;
  }

  const auto state = fs::path(cfg.paths.run_dir) / "state";
  if (cmd == "run" && !o.resume && fs::exists(state) && !fs::is_empty(state)) {
    throw heal::Error(heal::ErrorCode::Config, "run directory already holds state; pass --resume to continue it");
  }

  heal::json summary;
  if (cmd == "run") {
    summary = p.run();
  } else if (cmd == "sample") {
    p.sample();
  } else if (cmd == "classify") {
    p.classify();
  } else if (cmd == "hint") {
    p.hint();
  } else if (cmd == "repair") {
    p.repair();
  } else if (cmd == "score") {
    p.score();
  } else if (cmd == "filter") {
    p.filter();
  } else if (cmd == "assemble") {
    std::optional<heal::Stage> only;
    if (!o.stage.empty()) only = heal::stage_from_string(o.stage);
    p.assemble(only);
  } else if (cmd == "report") {
    summary = p.report(o.lambdas.empty() ? std::vector<double>{cfg.pure.lambda} : o.lambdas);
  }
  if (!summary.is_null()) {
    std::cout << summary.dump(2) << "\n";
    if (summary.value("incomplete", 0) > 0) {
      std::fprintf(stderr, "heal: %d question(s) incomplete after retries; rerun with --resume\n",
                   summary.value("incomplete", 0));
      return 3;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-distillation data pipeline: sampling, repair, filtering and curriculum assembly"};
  app.require_subcommand(1, 1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"run", "all phases, then the report"},
      {"sample", "unaided rejection sampling"},
      {"classify", "label questions easy / hard / extremely_hard"},
      {"hint", "answer-conditioned sampling for hard questions"},
      {"repair", "breakpoint repair for extremely hard questions"},
      {"score", "suspicion ratios for hint and repair candidates"},
      {"filter", "prune the top-lambda anomaly scores"},
      {"assemble", "write the three curriculum stages"},
      {"report", "pass rates, anomaly distribution, lambda sweep"},
      {"config", "print the effective configuration"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--run-dir", o.run_dir, "run directory");
    sub->add_option("--questions", o.questions, "questions JSONL");
    sub->add_option("--lambda", o.lambdas, "prune fraction; repeat for a sweep (report)")->take_all();
    sub->add_option("--stage", o.stage, "assemble only this stage (I, II, III)");
    sub->add_flag("--resume", o.resume, "continue a run directory that already holds state");
    sub->add_flag("--dry-run", o.dry_run, "validate inputs and print the plan without running");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return dispatch(app.get_subcommands().front()->get_name(), o);
  } catch (const heal::Error& e) {
    std::fprintf(stderr, "heal: %s\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "heal: %s\n", e.what());
    return 4;
  }
}
