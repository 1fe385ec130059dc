#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heal/elicitor.hpp"

namespace heal {

/// Step entropies H(s_t), t = 1..L stored at values[t-1].
struct EntropyTrace {
  std::vector<double> values;
  std::size_t length() const { return values.size(); }
};

struct Breakpoint {
  std::size_t t_star = 0;      // 1-based; last step before the surge
  double gradient_at_peak = 0.0;
  std::size_t peak_index = 0;  // t_star + 1
  friend bool operator==(const Breakpoint&, const Breakpoint&) = default;
};

// (t, H[t] - H[t-1]) for t = 2..L. Throws TraceTooShort when L < 2.
std::vector<std::pair<std::size_t, double>> entropy_gradient(const EntropyTrace& trace);

/// Largest entropy increase over the early window 1 < t < L/3, earliest t on
/// ties, backed off by one step. Throws WindowEmpty when L < 7.
Breakpoint find_breakpoint(const EntropyTrace& trace);

// Step entropies of a trajectory; absent if any step lacks one.
std::optional<EntropyTrace> entropy_trace(const Trajectory& t);

std::string build_repair_prompt(const Question& q, std::string_view prefix, const PromptTemplates& t);

/// Incorrect trajectories ordered longest first, ties by digest, truncated to k.
std::vector<Trajectory> select_incorrect_paths(std::span<const Trajectory> trajectories, std::size_t k);

/// Source tokens through step t_star, one delimiter token, then the
/// continuation. The result re-segments with steps 1..t_star unchanged.
std::vector<TokenRecord> stitch_tokens(const Trajectory& source, std::size_t t_star,
                                       std::span<const TokenRecord> continuation,
                                       std::string_view delimiter = kStepDelimiter);

struct GearConfig {
  std::size_t paths_per_question = 10;
  int candidates_n = 20;
  void validate() const;
};

struct RepairTarget {
  Question question;
  DifficultyLabel label;
  // Hard question whose hint sampling produced nothing; eligible for repair
  // even though it is not extremely hard.
  bool forwarded = false;
  std::vector<Trajectory> trajectories;  // base samples; incorrect ones are used
};

struct RepairReport {
  std::string question_id;
  std::size_t paths_tried = 0;
  std::size_t candidates = 0;
  std::size_t successes = 0;
  std::size_t fallbacks = 0;      // selected paths skipped (window empty or no entropy)
  bool routed_to_hint = false;   // every selected path was skipped
  bool incomplete = false;
  std::string note;
};

json to_json(const RepairReport& r);
RepairReport repair_report_from_json(const json& j);

struct RepairOutcome {
  std::vector<Trajectory> repairs;  // verified stitched trajectories
  std::vector<RepairReport> reports;
};

RepairOutcome run_repair(std::span<const RepairTarget> targets, const GearConfig& config,
                         const SamplingParams& params, const SamplingContext& ctx);

}  // namespace heal
