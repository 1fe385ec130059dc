#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heal/elicitor.hpp"

namespace heal {

struct FilterConfig {
  enum class Mode { PerSet, Joint };

  double lambda = 0.2;
  double epsilon = 0.01;
  Mode mode = Mode::PerSet;
  // Appended after the delimiter before the gold answer is force-scored.
  std::string answer_prefix = "Final Answer: ";

  void validate() const;
};

std::string_view to_string(FilterConfig::Mode m);
FilterConfig::Mode filter_mode_from_string(std::string_view s);

// R = ppl / (answer_nll + epsilon).
double suspicion_ratio(double ppl, double answer_nll, double epsilon);

/// Raw per-step quantities behind a ratio; kept so that ratios can be
/// recomputed for another epsilon without rescoring.
struct StepScore {
  std::size_t t = 0;  // 1-based
  double ppl = 1.0;
  double answer_nll = 0.0;
};

struct SuspicionReport {
  std::string question_id;
  std::string trajectory_digest;
  Provenance provenance = Provenance::Hint;
  std::size_t length = 0;  // L of the scored trajectory
  std::vector<StepScore> steps;
  std::vector<std::pair<std::size_t, double>> ratios;  // (t, R_t), t = 1..L-2
  std::optional<double> anomaly_score;
  bool unscorable = false;
  std::string note;
};

json to_json(const SuspicionReport& r);
SuspicionReport suspicion_report_from_json(const json& j);

/// Scores steps 1..L-2 against the plain question prompt: PPL of each step
/// given the preceding steps, and the summed NLL of the gold answer forced
/// after the step. Throws Unscorable for L < 3 and CapabilityMissing when the
/// backend cannot score.
std::vector<StepScore> score_steps(const Trajectory& t, const Question& q, const SamplingContext& ctx,
                                   const FilterConfig& config);

SuspicionReport suspicion_curve(const Trajectory& t, const Question& q, const SamplingContext& ctx,
                                const FilterConfig& config);

// Fills ratios and anomaly_score from steps for the given epsilon.
void apply_epsilon(SuspicionReport& r, double epsilon);

// Max of the ratios; Unscorable when empty.
double anomaly_score(std::span<const double> ratios);

/// Scores every trajectory; Unscorable ones yield a flagged report instead
/// of an error. Output order follows input order.
std::vector<SuspicionReport> score_trajectories(std::span<const Trajectory> trajectories,
                                                const std::map<std::string, Question>& questions,
                                                const SamplingContext& ctx, const FilterConfig& config);

struct FilterResult {
  std::vector<SuspicionReport> kept;    // input order, unscorable included
  std::vector<SuspicionReport> pruned;  // highest score first
};

/// Ranks scorable reports by anomaly score (descending, ties by digest) and
/// prunes the first floor(lambda * N).
FilterResult filter_top_lambda(std::span<const SuspicionReport> reports, double lambda);

// floor(lambda * n) with a small guard against representation error.
std::size_t prune_count(double lambda, std::size_t n);

}  // namespace heal
