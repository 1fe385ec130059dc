#pragma once

#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "heal/trajectory.hpp"

namespace heal {

/// Single-pass `{name}` substitution. A placeholder is `{` identifier `}`;
/// any other brace text is literal, and `{{` / `}}` escape a single brace.
/// Substituted values are inserted verbatim and never re-scanned. Throws
/// Error(TemplateError) when the template references a name without a value
/// or lacks one of `required`.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values,
                            std::initializer_list<std::string_view> required = {});

// Names of the placeholders a template references, in order of appearance.
std::vector<std::string> template_placeholders(std::string_view tmpl);

struct PromptTemplates {
  // Unaided sampling; also the clean scoring context for suspicion ratios.
  std::string base;
  // Global hindsight: question plus reference answer.
  std::string hint;
  // Local repair: question, reference answer and a partial trajectory.
  std::string repair;
  // Phrases that only occur in answer-conditioned prompts. Training records
  // are scanned for them, and the mock backend uses them to tell prompt kinds
  // apart.
  std::string hint_marker;
  std::string repair_marker;

  static PromptTemplates defaults();

  std::vector<std::string> markers() const { return {hint_marker, repair_marker}; }
};

json to_json(const PromptTemplates& t);
PromptTemplates prompt_templates_from_json(const json& j);

std::string build_base_prompt(const Question& q, const PromptTemplates& t);
std::string build_hint_prompt(const Question& q, const PromptTemplates& t);

}  // namespace heal
