#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "heal/http_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "httplib.h"

namespace heal {

namespace fs = std::filesystem;

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

fs::path ResponseCache::path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

std::optional<json> ResponseCache::get(const std::string& key) const {
  const auto p = path_for(key);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return json::parse(read_file(p));
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable entry: refetch and overwrite
  }
}

void ResponseCache::put(const std::string& key, const json& value) const {
  write_file_atomic(path_for(key), value.dump());
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto scheme = config_.base_url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::Config, "base_url needs a scheme: " + config_.base_url);
  const auto slash = config_.base_url.find('/', scheme + 3);
  host_ = config_.base_url.substr(0, slash);
  path_prefix_ = slash == std::string::npos ? "" : config_.base_url.substr(slash);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (config_.api_key.empty()) {
    if (const char* k = std::getenv("HEAL_API_KEY")) config_.api_key = k;
  }
  if (!config_.cache_dir.empty()) cache_.emplace(config_.cache_dir);
}

BackendCapabilities HttpBackend::capabilities() const {
  if (config_.capabilities_override) return *config_.capabilities_override;
  return {false, config_.echo_scoring, config_.max_context};
}

json HttpBackend::post(const json& body) const {
  const std::string path = path_prefix_ + "/completions";
  const std::string payload = body.dump();
  const std::string key = sha256_hex(host_ + path + "\n" + payload);
  if (cache_) {
    if (auto hit = cache_->get(key)) return *hit;
  }

  httplib::Client cli(host_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = cli.Post(path, headers, payload, "application/json");
  if (!res) throw Error(ErrorCode::BackendUnavailable, host_ + ": " + httplib::to_string(res.error()));
  const int status = res->status;
  if (status == 429 || status >= 500) {
    throw Error(ErrorCode::BackendUnavailable, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
  }
  if (status != 200) {
    std::string lower = res->body;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    const bool context = lower.find("context") != std::string::npos || lower.find("maximum") != std::string::npos ||
                         lower.find("length") != std::string::npos;
    if (status == 400 && context) throw Error(ErrorCode::ContextExceeded, res->body.substr(0, 200));
    throw Error(ErrorCode::Config, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
  }
  json out;
  try {
    out = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("unparseable response: ") + e.what());
  }
  if (cache_) cache_->put(key, out);
  return out;
}

namespace {

const json& logprobs_of(const json& choice) {
  if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) {
    throw Error(ErrorCode::CapabilityMissing, "response carries no logprobs");
  }
  const auto& lp = choice["logprobs"];
  if (!lp.contains("tokens") || !lp.contains("token_logprobs") || lp["tokens"].size() != lp["token_logprobs"].size()) {
    throw Error(ErrorCode::CapabilityMissing, "logprobs lack tokens/token_logprobs");
  }
  return lp;
}

}  // namespace

std::vector<Generation> HttpBackend::sample(std::string_view prompt, const SamplingParams& params) const {
  params.validate();
  if (prompt.empty()) throw Error(ErrorCode::Precondition, "empty prompt");
  json body{{"model", config_.model},
            {"prompt", std::string(prompt)},
            {"temperature", params.temperature},
            {"top_p", params.top_p},
            {"max_tokens", params.max_tokens},
            {"n", params.n},
            {"logprobs", config_.top_logprobs}};
  if (params.seed) body["seed"] = *params.seed;
  const json res = post(body);
  if (!res.contains("choices") || !res["choices"].is_array()) {
    throw Error(ErrorCode::BackendUnavailable, "response has no choices");
  }

  std::vector<std::pair<int, Generation>> indexed;
  for (const auto& choice : res["choices"]) {
    const auto& lp = logprobs_of(choice);
    Generation g;
    g.finish_reason = choice.value("finish_reason", std::string("stop"));
    const bool have_top = lp.contains("top_logprobs") && lp["top_logprobs"].is_array() &&
                          lp["top_logprobs"].size() == lp["tokens"].size();
    g.entropy_approximate = have_top;
    for (std::size_t i = 0; i < lp["tokens"].size(); ++i) {
      const auto& l = lp["token_logprobs"][i];
      if (!l.is_number()) throw Error(ErrorCode::CapabilityMissing, "null logprob for a sampled token");
      TokenRecord t{lp["tokens"][i].get<std::string>(), std::max(0.0, -l.get<double>()), std::nullopt};
      if (have_top && lp["top_logprobs"][i].is_object()) {
        TopLogprobs top;
        for (const auto& [tok, v] : lp["top_logprobs"][i].items()) top.emplace_back(tok, v.get<double>());
        if (!top.empty()) t.entropy = entropy_estimate(top);
      }
      g.tokens.push_back(std::move(t));
    }
    indexed.emplace_back(choice.value("index", static_cast<int>(indexed.size())), std::move(g));
  }
  std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Generation> out;
  for (auto& [i, g] : indexed) out.push_back(std::move(g));
  return out;
}

std::vector<double> HttpBackend::score_continuation(std::string_view context, std::string_view continuation) const {
  if (!capabilities().scoring) throw Error(ErrorCode::CapabilityMissing, "echo scoring disabled");
  if (continuation.empty()) return {};
  const std::string full = std::string(context) + std::string(continuation);
  json body{{"model", config_.model}, {"prompt", full},  {"max_tokens", 1},
            {"temperature", 0.0},     {"echo", true},    {"logprobs", 1}};
  const json res = post(body);
  if (!res.contains("choices") || res["choices"].empty()) throw Error(ErrorCode::BackendUnavailable, "no choices");
  const auto& lp = logprobs_of(res["choices"][0]);

  // The echoed tokens reproduce the prompt; tokens starting at or after the
  // context boundary (or straddling it) belong to the continuation.
  std::vector<double> nll;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < lp["tokens"].size() && pos < full.size(); ++i) {
    const auto tok = lp["tokens"][i].get<std::string>();
    const std::size_t end = pos + tok.size();
    if (full.compare(pos, tok.size(), tok) != 0) {
      throw Error(ErrorCode::CapabilityMissing, "echoed tokens do not reproduce the prompt");
    }
    if (end > context.size()) {
      const auto& l = lp["token_logprobs"][i];
      if (!l.is_number()) throw Error(ErrorCode::CapabilityMissing, "no logprob for the first token");
      nll.push_back(std::max(0.0, -l.get<double>()));
    }
    pos = end;
  }
  if (pos < full.size()) throw Error(ErrorCode::CapabilityMissing, "echo response shorter than the prompt");
  return nll;
}

}  // namespace heal
