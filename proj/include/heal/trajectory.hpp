#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heal/sampling.hpp"
#include "json.hpp"

namespace heal {

using json = nlohmann::json;

inline constexpr std::string_view kStepDelimiter = "\n\n";

struct Question {
  std::string id;
  std::string text;
  std::string gold_answer;
};

/// One generated token. `nll` is -log p(token | prefix) in nats; `entropy` is
/// the entropy of the next-token distribution at this position, absent when
/// the backend cannot provide it.
struct TokenRecord {
  std::string token;
  double nll = 0.0;
  std::optional<double> entropy;
};

// Half-open index range into a trajectory's token list.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Step {
  std::size_t index = 0;
  std::string text;
  TokenSpan tokens;
  // Mean token entropy; absent if any token in the span lacks entropy or the
  // span is empty.
  std::optional<double> mean_entropy;
  // exp(mean nll); 1.0 for an empty span.
  double ppl = 1.0;
};

enum class Provenance { Base, Hint, Repair };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

/// Set on repair candidates: where the repair was anchored.
struct RepairOrigin {
  std::string source_digest;
  std::size_t t_star = 0;  // 1-based
  double peak_gradient = 0.0;
};

struct Trajectory {
  std::string question_id;
  std::uint64_t attempt = 0;
  Provenance provenance = Provenance::Base;
  std::vector<Step> steps;
  std::vector<TokenRecord> tokens;
  std::optional<std::string> predicted_answer;
  std::optional<bool> correct;
  std::uint64_t seed = 0;
  SamplingParams sampling_params;
  // Entropies were estimated from top-k logprobs rather than computed exactly.
  bool entropy_approximate = false;
  std::optional<RepairOrigin> repair;

  // Concatenated token text.
  std::string text() const;
  std::size_t length() const { return steps.size(); }
};

/// Splits `rationale_text` on the step delimiter, dropping empty segments, and
/// aligns each token to the step in which it begins. A token that begins inside
/// a delimiter belongs to the next step if it carries any of that step's text,
/// otherwise to no step.
std::vector<Step> segment_steps(std::string_view rationale_text,
                                std::span<const TokenRecord> tokens,
                                std::string_view delimiter = kStepDelimiter);

// Splits on the delimiter and drops empty segments, without token alignment.
std::vector<std::string> split_steps(std::string_view text,
                                     std::string_view delimiter = kStepDelimiter);

// Byte range [begin, end) of each non-empty step within `text`.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<ByteRange> step_ranges(std::string_view text, std::string_view delimiter = kStepDelimiter);

std::string join_steps(std::span<const Step> steps, std::string_view delimiter = kStepDelimiter);

// Trim, strip surrounding '$', map unicode minus signs to '-'.
std::string normalize_answer(std::string_view s);

/// Normalized exact match, or both sides parse as finite numbers equal
/// within 1e-9 relative tolerance.
bool verify_answer(const std::optional<std::string>& predicted, std::string_view gold);

struct AnswerPattern {
  enum class Kind {
    Braced,  // marker followed by brace-balanced content, e.g. "\boxed{"
    Line,    // marker followed by the rest of the line, e.g. "Final Answer:"
  };
  Kind kind = Kind::Line;
  std::string marker;
  friend bool operator==(const AnswerPattern&, const AnswerPattern&) = default;
};

std::vector<AnswerPattern> default_answer_patterns();

/// Patterns are tried in order; the first pattern with a non-empty match wins
/// and within it the last occurrence in the text is used.
std::optional<std::string> extract_final_answer(
    std::string_view text, std::span<const AnswerPattern> patterns);
std::optional<std::string> extract_final_answer(std::string_view text);

/// Builds a complete trajectory from raw tokens: segments, extracts the answer
/// and records the verdict against `question`.
Trajectory make_trajectory(const Question& question, Provenance provenance,
                           std::vector<TokenRecord> tokens, std::uint64_t attempt,
                           std::uint64_t seed, const SamplingParams& params,
                           std::span<const AnswerPattern> patterns);

json to_json(const Question& q);
Question question_from_json(const json& j);

json to_json(const TokenRecord& t);
json to_json(const Step& s);
json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);

json to_json(const AnswerPattern& p);
AnswerPattern answer_pattern_from_json(const json& j);

// Content digest of the serialized trajectory.
std::string digest(const Trajectory& t);

}  // namespace heal
