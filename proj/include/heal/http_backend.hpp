#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "heal/backend.hpp"
#include "heal/jsonl.hpp"

namespace heal {

/// Content-addressed store of raw responses, one file per request digest at
/// <dir>/<first two hex digits>/<digest>.json. Writes go through unique temp
/// files, so concurrent writers of the same key are safe.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<json> get(const std::string& key) const;
  void put(const std::string& key, const json& value) const;

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path dir_;
};

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "teacher";
  std::string api_key;  // empty: read HEAL_API_KEY
  int top_logprobs = 5;
  bool echo_scoring = true;
  std::size_t max_context = 32768 + 8192;
  double timeout_s = 600.0;
  std::string cache_dir;
  std::optional<BackendCapabilities> capabilities_override;
};

/// Client for an OpenAI-compatible /completions endpoint. Entropy is
/// estimated from the returned top-k logprobs; scoring uses echo with
/// max_tokens=1. Failures map to BackendUnavailable (connection errors, 429,
/// 5xx), ContextExceeded (400 mentioning the context limit), CapabilityMissing
/// (no logprobs in the response) and Config (any other 4xx). The caller owns
/// retries.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  BackendCapabilities capabilities() const override;
  std::vector<Generation> sample(std::string_view prompt, const SamplingParams& params) const override;
  std::vector<double> score_continuation(std::string_view context, std::string_view continuation) const override;

 private:
  json post(const json& body) const;

  HttpBackendConfig config_;
  std::string host_;         // scheme://host[:port]
  std::string path_prefix_;  // e.g. /v1
  std::optional<ResponseCache> cache_;
};

}  // namespace heal
