#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "heal/backend.hpp"
#include "heal/elicitor.hpp"
#include "heal/gear.hpp"
#include "heal/mock_backend.hpp"
#include "heal/pace.hpp"
#include "heal/prompt.hpp"
#include "heal/pure.hpp"

namespace heal {

struct BackendConfig {
  std::string kind = "mock";  // "mock" or "http"
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "teacher";
  std::size_t parallelism = 4;
  int top_logprobs = 5;
  bool echo_scoring = true;
  std::size_t max_context = 32768 + 8192;
  double timeout_s = 600.0;
  std::string cache_dir;  // empty: no response cache
  RetryPolicy retry;
  std::optional<BackendCapabilities> capabilities_override;
  MockModelSpec mock;
};

struct RunPaths {
  std::string questions = "questions.jsonl";
  std::string run_dir = "run";
};

struct RunConfig {
  std::uint64_t seed = 0;
  RunPaths paths;
  BackendConfig backend;
  SamplingParams sampling;
  ElicitationBudget elicitation;
  GearConfig gear;
  FilterConfig pure;
  PaceConfig pace;
  PromptTemplates templates = PromptTemplates::defaults();
  std::vector<AnswerPattern> answer_patterns = default_answer_patterns();

  void validate() const;
};

json to_json(const RunConfig& c);
/// Missing keys take their defaults; unknown keys are a Config error so typos
/// do not silently fall back to defaults.
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace heal
