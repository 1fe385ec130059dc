#include "heal/prompt.hpp"

#include <algorithm>
#include <cctype>

#include "heal/error.hpp"

namespace heal {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Length of a `{identifier}` placeholder at `pos`, or 0.
std::size_t placeholder_len(std::string_view s, std::size_t pos) {
  if (s[pos] != '{' || pos + 1 >= s.size() || !ident_start(s[pos + 1])) return 0;
  std::size_t i = pos + 2;
  while (i < s.size() && ident_char(s[i])) ++i;
  if (i < s.size() && s[i] == '}') return i + 1 - pos;
  return 0;
}

template <typename OnLiteral, typename OnName>
void scan(std::string_view tmpl, OnLiteral on_literal, OnName on_name) {
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if ((tmpl[i] == '{' || tmpl[i] == '}') && i + 1 < tmpl.size() && tmpl[i + 1] == tmpl[i]) {
      on_literal(tmpl.substr(i, 1));
      i += 2;
      continue;
    }
    if (const auto len = placeholder_len(tmpl, i)) {
      on_name(tmpl.substr(i + 1, len - 2));
      i += len;
      continue;
    }
    on_literal(tmpl.substr(i, 1));
    ++i;
  }
}

}  // namespace

std::vector<std::string> template_placeholders(std::string_view tmpl) {
  std::vector<std::string> names;
  scan(tmpl, [](std::string_view) {}, [&](std::string_view name) { names.emplace_back(name); });
  return names;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values,
                            std::initializer_list<std::string_view> required) {
  const auto names = template_placeholders(tmpl);
  for (auto req : required) {
    if (std::find(names.begin(), names.end(), req) == names.end()) {
      throw Error(ErrorCode::TemplateError, "template lacks required placeholder {" + std::string(req) + "}");
    }
  }
  std::string out;
  out.reserve(tmpl.size());
  scan(
      tmpl, [&](std::string_view lit) { out.append(lit); },
      [&](std::string_view name) {
        const auto it = values.find(std::string(name));
        if (it == values.end()) {
          throw Error(ErrorCode::TemplateError, "unresolved placeholder {" + std::string(name) + "}");
        }
        out.append(it->second);
      });
  return out;
}

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.base =
      "Problem:\n{question}\n\n"
      "Solve the problem step by step. Separate reasoning steps with a blank line and finish with a "
      "line of the form \"Final Answer: <answer>\".\n\n";
  t.hint =
      "Problem:\n{question}\n\n"
      "The reference answer is {answer}. Work out a complete derivation that arrives at this answer "
      "step by step, without citing the reference answer as justification. Separate reasoning steps "
      "with a blank line and finish with a line of the form \"Final Answer: <answer>\".\n\n";
  t.repair =
      "Problem:\n{question}\n\n"
      "The reference answer is {answer}. Partial solution:\n\n{prefix}\n\n"
      "Continue the partial solution from where it stops and reach the reference answer step by "
      "step. Separate reasoning steps with a blank line and finish with a line of the form "
      "\"Final Answer: <answer>\".\n\n";
  t.hint_marker = "The reference answer is";
  t.repair_marker = "Partial solution:";
  return t;
}

json to_json(const PromptTemplates& t) {
  return {{"base", t.base},
          {"hint", t.hint},
          {"repair", t.repair},
          {"hint_marker", t.hint_marker},
          {"repair_marker", t.repair_marker}};
}

PromptTemplates prompt_templates_from_json(const json& j) {
  auto t = PromptTemplates::defaults();
  t.base = j.value("base", t.base);
  t.hint = j.value("hint", t.hint);
  t.repair = j.value("repair", t.repair);
  t.hint_marker = j.value("hint_marker", t.hint_marker);
  t.repair_marker = j.value("repair_marker", t.repair_marker);
  return t;
}

std::string build_base_prompt(const Question& q, const PromptTemplates& t) {
  return render_template(t.base, {{"question", q.text}}, {"question"});
}

std::string build_hint_prompt(const Question& q, const PromptTemplates& t) {
  if (q.gold_answer.empty()) throw Error(ErrorCode::Precondition, "hint prompt needs a gold answer");
  return render_template(t.hint, {{"question", q.text}, {"answer", q.gold_answer}}, {"question", "answer"});
}

}  // namespace heal
