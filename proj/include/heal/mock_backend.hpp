#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "heal/backend.hpp"
#include "heal/trajectory.hpp"

namespace heal {

/// Per-question behaviour of the mock teacher.
struct MockProfile {
  double p0 = 0.5;  // unaided success probability
  double p1 = 0.8;  // success under the global-hint prompt
  double p2 = 0.5;  // success of a repair continuation
  int min_steps = 9;  // steps per trajectory, answer step included
  int max_steps = 30;
  int min_step_chars = 8;
  int max_step_chars = 24;
  // Weight of the uniform component at content positions; the rest sits on
  // one hash-chosen preferred symbol. 1.0 is uniform over the content set.
  double base_mix = 0.3;
  int spike_step = 0;  // 1-based step sampled at spike_mix; 0 = flat profile
  double spike_mix = 1.0;
  // Probability that an answer-conditioned sample plants a shortcut step.
  double leak_rate = 0.0;

  friend bool operator==(const MockProfile&, const MockProfile&) = default;
};

json to_json(const MockProfile& p);
MockProfile mock_profile_from_json(const json& j, const MockProfile& defaults = {});

/// Desk-scale stand-in for a teacher model. Symbols are single UTF-8 code
/// points, so tokenization is trivially consistent across any split of a text.
///
/// Teacher kind, generation: content positions draw from a mixture of one
/// preferred symbol (chosen by hashing the running text) and the uniform
/// distribution over `content_symbols`; delimiters, the answer line and
/// planted shortcut steps are emitted with probability one. Whether the final
/// answer is the gold one is a Bernoulli draw at p0/p1/p2 depending on whether
/// the prompt is plain, hinted or a repair prompt.
///
/// Teacher kind, scoring: a unigram model over the vocabulary (content symbols
/// share `content_mass`), except right after `answer_cue` where the next
/// symbol of the gold answer gets a confidence that grows with the number of
/// completed steps, or `copy_confidence` when the gold answer already appears
/// in the rationale.
///
/// Uniform kind: every symbol has probability 1/|vocab|. Deterministic kind:
/// every forced symbol has probability one.
struct MockModelSpec {
  enum class Kind { Teacher, Uniform, Deterministic };

  Kind kind = Kind::Teacher;
  std::vector<std::string> vocab;  // empty: printable ASCII plus '\n' (teacher) or "abcd"
  std::string content_symbols = "abcdefghijklmnopqrstuvwxyz ";
  std::uint64_t seed = 0;

  std::vector<Question> questions;
  MockProfile default_profile;
  std::map<std::string, MockProfile> profiles;  // by question id
  // Weighted profiles for questions without an explicit entry, picked by
  // hashing the question id.
  std::vector<std::pair<double, MockProfile>> mix;

  std::string hint_marker = "The reference answer is";
  std::string repair_marker = "Partial solution:";
  std::string answer_cue = "Final Answer: ";
  std::string leak_template = "SINCETHEREFERENCEANSWERIS{answer}";

  std::size_t max_context = 1 << 20;  // symbols
  std::size_t uniform_length = 32;    // generation length for uniform/deterministic kinds

  double content_mass = 0.9;
  double answer_confidence_max = 0.8;
  double answer_confidence_tau = 8.0;
  double answer_follow_confidence = 0.99;
  double copy_confidence = 0.9995;

  const MockProfile& profile_for(std::string_view question_id) const;
};

json to_json(const MockModelSpec& s);
// Questions are not serialized; they come from the run's question file.
MockModelSpec mock_spec_from_json(const json& j);

std::vector<std::string_view> split_symbols(std::string_view text);

class MockBackend final : public Backend {
 public:
  enum class PromptKind { Base, Hint, Repair };

  struct DetailedGeneration {
    Generation generation;
    // Top-k (symbol, logprob) of the distribution each token was drawn from.
    std::vector<TopLogprobs> topk;
  };

  explicit MockBackend(MockModelSpec spec);

  BackendCapabilities capabilities() const override;
  std::vector<Generation> sample(std::string_view prompt, const SamplingParams& params) const override;
  std::vector<double> score_continuation(std::string_view context, std::string_view continuation) const override;

  std::vector<DetailedGeneration> sample_detailed(std::string_view prompt, const SamplingParams& params,
                                                  std::size_t k) const;

  /// Scoring-model distribution over the vocabulary after `prefix`.
  /// Not available for the deterministic kind.
  std::vector<double> next_distribution(std::string_view prefix) const;

  // Configured question whose text occurs in `text`, preferring the longest.
  const Question* find_question(std::string_view text) const;
  PromptKind classify_prompt(std::string_view prompt) const;

  const MockModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& vocab() const { return vocab_; }

 private:
  struct ScoreState;

  double unigram(std::string_view symbol) const;
  double symbol_prob(std::string_view full, std::size_t offset, std::string_view symbol,
                     const ScoreState& st) const;
  std::vector<DetailedGeneration> generate(std::string_view prompt, const SamplingParams& params,
                                           std::size_t k) const;

  MockModelSpec spec_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> vocab_index_;
  std::vector<std::string> content_;
  double content_prob_ = 0.0;
  double rare_prob_ = 0.0;

  mutable std::mutex lookup_mu_;
  mutable std::unordered_map<std::string, const Question*> lookup_cache_;
};

}  // namespace heal
