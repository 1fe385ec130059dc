#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "heal/config.hpp"
#include "heal/run_state.hpp"

namespace heal {

// Reads {id, text, gold_answer} lines; ids must be unique.
std::vector<Question> load_questions(const std::filesystem::path& path);

std::shared_ptr<const Backend> make_backend(const RunConfig& config, const std::vector<Question>& questions);

/// One run directory. Each phase reads what earlier phases wrote, so phases
/// can also be invoked one at a time:
///
///   sample    samples_base.jsonl, d_base.jsonl, pass_stats.jsonl
///   classify  pass_stats.jsonl (labels)
///   hint      d_hint_candidates.jsonl, pass_stats.jsonl
///   repair    d_repair_candidates.jsonl, repair_report.jsonl, pass_stats.jsonl
///   score     suspicion_reports.jsonl
///   filter    d_hint.jsonl, d_repair.jsonl, prune_log.jsonl
///   assemble  stage_{I,II,III}.jsonl + .manifest.json, leak_scan.json
///   report    reports/*.csv, reports/summary.json
///
/// After every phase manifest.json lists each output with its digest.
class Pipeline {
 public:
  // `backend` overrides the one described by the config.
  explicit Pipeline(RunConfig config, std::shared_ptr<const Backend> backend = nullptr);

  void sample();
  void classify();
  void hint();
  void repair();
  void score();
  void filter();
  void assemble(std::optional<Stage> only = std::nullopt);
  json report(const std::vector<double>& lambdas);

  // All phases, then the report at the configured lambda.
  json run();

  // Simulates an interruption after n more stored requests.
  void stop_after(std::optional<std::size_t> n);

  json run_manifest() const;
  void write_run_manifest() const;

  const std::filesystem::path& run_dir() const { return dir_; }
  const std::vector<Question>& questions() const { return questions_; }
  const RunConfig& config() const { return config_; }

 private:
  SamplingContext context() const;
  RunStore& store();
  std::vector<PassStats> read_pass_stats() const;
  void write_pass_stats(const std::vector<PassStats>& stats) const;
  std::vector<Trajectory> read_trajectories(const std::string& name) const;
  void write_trajectories(const std::string& name, const std::vector<Trajectory>& ts) const;
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  RunConfig config_;
  std::filesystem::path dir_;
  std::vector<Question> questions_;
  std::map<std::string, Question> by_id_;
  std::shared_ptr<const Backend> backend_;
  std::unique_ptr<RunStore> store_;
  std::optional<std::size_t> stop_after_;
};

}  // namespace heal
