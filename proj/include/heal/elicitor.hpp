#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heal/backend.hpp"
#include "heal/prompt.hpp"
#include "heal/run_state.hpp"
#include "heal/trajectory.hpp"

namespace heal {

enum class Difficulty { Easy, Hard, ExtremelyHard };

std::string_view to_string(Difficulty d);
Difficulty difficulty_from_string(std::string_view s);

struct DifficultyLabel {
  Difficulty label = Difficulty::Easy;
  int pass_count = 0;
  int total = 0;
  friend bool operator==(const DifficultyLabel&, const DifficultyLabel&) = default;
};

/// hard iff pass/total < 0.5 (strict), extremely_hard iff pass <= 1 for any
/// total, easy otherwise.
DifficultyLabel classify_difficulty(int pass_count, int total);

struct ElicitationBudget {
  int base_n = 30;
  int hint_n = 30;
  void validate() const;
};

/// Everything a sampling phase needs besides its inputs.
struct SamplingContext {
  const Backend* backend = nullptr;
  std::uint64_t run_seed = 0;
  std::size_t parallelism = 1;
  RetryPolicy retry;
  PromptTemplates templates = PromptTemplates::defaults();
  std::vector<AnswerPattern> patterns = default_answer_patterns();
  RunStore* store = nullptr;  // optional; enables resume
};

/// Outcome of one (phase, key, attempt) request.
struct Draw {
  std::optional<Trajectory> trajectory;
  std::string error;  // set when the backend gave up
};

/// Produces the trajectory for one request, reusing the stored result when it
/// was drawn with the same derived seed. Backend exhaustion and context
/// overflow are reported in Draw::error; other errors propagate.
Draw resumable_draw(const SamplingContext& ctx, const std::string& phase, const std::string& key,
                    const std::string& question_id, std::uint64_t attempt, std::uint64_t seed,
                    const std::function<Trajectory()>& make);

struct QuestionSamples {
  std::string question_id;
  std::vector<Trajectory> trajectories;  // attempt order
  int pass_count = 0;
  int total = 0;
  // Some attempt could not be completed; the question is left out of
  // classification and retried on resume.
  bool incomplete = false;
  std::string error;

  std::vector<Trajectory> correct() const;
  std::vector<Trajectory> incorrect() const;
};

std::vector<QuestionSamples> run_rejection_sampling(std::span<const Question> questions,
                                                    const ElicitationBudget& budget,
                                                    const SamplingParams& params, const SamplingContext& ctx);

/// Each question must carry a hard or extremely_hard label.
std::vector<QuestionSamples> run_hint_sampling(std::span<const Question> questions,
                                               std::span<const DifficultyLabel> labels,
                                               const ElicitationBudget& budget, const SamplingParams& params,
                                               const SamplingContext& ctx);

struct PassStats {
  std::string question_id;
  int base_pass = 0;
  int base_total = 0;
  bool incomplete = false;
  std::optional<DifficultyLabel> label;
  std::optional<int> hint_pass;
  std::optional<int> hint_total;
  bool hint_incomplete = false;
  std::optional<int> repair_successes;
  std::optional<int> repair_candidates;
};

json to_json(const DifficultyLabel& d);
DifficultyLabel difficulty_label_from_json(const json& j);
json to_json(const PassStats& s);
PassStats pass_stats_from_json(const json& j);

}  // namespace heal
