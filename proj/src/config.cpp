#include "heal/config.hpp"

#include <algorithm>
#include <set>

#include "heal/error.hpp"
#include "heal/jsonl.hpp"

namespace heal {

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::Config, std::string(where) + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw Error(ErrorCode::Config, "unknown key '" + k + "' in " + std::string(where));
  }
}

json retry_to_json(const RetryPolicy& r) {
  return {{"max_attempts", r.max_attempts},
          {"initial_backoff_ms", r.initial_backoff.count()},
          {"multiplier", r.multiplier},
          {"max_backoff_ms", r.max_backoff.count()}};
}

RetryPolicy retry_from_json(const json& j) {
  check_keys(j, "backend.retry", {"max_attempts", "initial_backoff_ms", "multiplier", "max_backoff_ms"});
  RetryPolicy r;
  r.max_attempts = j.value("max_attempts", r.max_attempts);
  r.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", r.initial_backoff.count()));
  r.multiplier = j.value("multiplier", r.multiplier);
  r.max_backoff = std::chrono::milliseconds(j.value("max_backoff_ms", r.max_backoff.count()));
  if (r.max_attempts < 1 || r.multiplier < 1.0) throw Error(ErrorCode::Config, "invalid retry policy");
  return r;
}

}  // namespace

void RunConfig::validate() const {
  if (backend.kind != "mock" && backend.kind != "http") throw Error(ErrorCode::Config, "backend.kind must be mock or http");
  if (backend.parallelism < 1) throw Error(ErrorCode::Config, "backend.parallelism must be >= 1");
  if (backend.top_logprobs < 1) throw Error(ErrorCode::Config, "backend.top_logprobs must be >= 1");
  try {
    sampling.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  elicitation.validate();
  gear.validate();
  pure.validate();
  pace.validate();
  if (answer_patterns.empty()) throw Error(ErrorCode::Config, "answer_patterns must not be empty");

  const auto check = [](const char* name, const std::string& tmpl, std::set<std::string> allowed) {
    const auto used = template_placeholders(tmpl);
    for (const auto& p : used) {
      if (!allowed.count(p)) throw Error(ErrorCode::TemplateError, std::string(name) + " template: unknown {" + p + "}");
    }
    for (const auto& a : allowed) {
      if (std::find(used.begin(), used.end(), a) == used.end()) {
        throw Error(ErrorCode::TemplateError, std::string(name) + " template lacks {" + a + "}");
      }
    }
  };
  check("base", templates.base, {"question"});
  check("hint", templates.hint, {"question", "answer"});
  check("repair", templates.repair, {"question", "answer", "prefix"});
}

json to_json(const RunConfig& c) {
  const auto& b = c.backend;
  json backend{{"kind", b.kind},
               {"base_url", b.base_url},
               {"model", b.model},
               {"parallelism", b.parallelism},
               {"top_logprobs", b.top_logprobs},
               {"echo_scoring", b.echo_scoring},
               {"max_context", b.max_context},
               {"timeout_s", b.timeout_s},
               {"cache_dir", b.cache_dir},
               {"retry", retry_to_json(b.retry)},
               {"mock", to_json(b.mock)}};
  if (b.capabilities_override) {
    backend["capabilities_override"] = {{"exact_entropy", b.capabilities_override->exact_entropy},
                                        {"scoring", b.capabilities_override->scoring},
                                        {"max_context", b.capabilities_override->max_context}};
  } else {
    backend["capabilities_override"] = nullptr;
  }
  json patterns = json::array();
  for (const auto& p : c.answer_patterns) patterns.push_back(to_json(p));
  json sampling = to_json(c.sampling);
  sampling.erase("n");
  sampling.erase("seed");
  return {{"seed", c.seed},
          {"paths", {{"questions", c.paths.questions}, {"run_dir", c.paths.run_dir}}},
          {"backend", std::move(backend)},
          {"sampling", std::move(sampling)},
          {"elicitation", {{"base_n", c.elicitation.base_n}, {"hint_n", c.elicitation.hint_n}}},
          {"gear", {{"paths_per_question", c.gear.paths_per_question}, {"candidates_n", c.gear.candidates_n}}},
          {"pure",
           {{"lambda", c.pure.lambda},
            {"epsilon", c.pure.epsilon},
            {"mode", std::string(to_string(c.pure.mode))},
            {"answer_prefix", c.pure.answer_prefix}}},
          {"pace",
           {{"upsample_repair", c.pace.upsample_repair},
            {"shuffle_seed", c.pace.shuffle_seed},
            {"trainer",
             {{"epochs", c.pace.trainer.epochs},
              {"learning_rate", c.pace.trainer.learning_rate},
              {"global_batch_size", c.pace.trainer.global_batch_size}}}}},
          {"templates", to_json(c.templates)},
          {"answer_patterns", std::move(patterns)}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config",
             {"seed", "paths", "backend", "sampling", "elicitation", "gear", "pure", "pace", "templates",
              "answer_patterns"});
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      check_keys(p, "paths", {"questions", "run_dir"});
      c.paths.questions = p.value("questions", c.paths.questions);
      c.paths.run_dir = p.value("run_dir", c.paths.run_dir);
    }
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      check_keys(b, "backend",
                 {"kind", "base_url", "model", "parallelism", "top_logprobs", "echo_scoring", "max_context",
                  "timeout_s", "cache_dir", "retry", "capabilities_override", "mock"});
      auto& o = c.backend;
      o.kind = b.value("kind", o.kind);
      o.base_url = b.value("base_url", o.base_url);
      o.model = b.value("model", o.model);
      o.parallelism = b.value("parallelism", o.parallelism);
      o.top_logprobs = b.value("top_logprobs", o.top_logprobs);
      o.echo_scoring = b.value("echo_scoring", o.echo_scoring);
      o.max_context = b.value("max_context", o.max_context);
      o.timeout_s = b.value("timeout_s", o.timeout_s);
      o.cache_dir = b.value("cache_dir", o.cache_dir);
      if (b.contains("retry")) o.retry = retry_from_json(b["retry"]);
      if (b.contains("capabilities_override") && !b["capabilities_override"].is_null()) {
        const auto& co = b["capabilities_override"];
        check_keys(co, "backend.capabilities_override", {"exact_entropy", "scoring", "max_context"});
        BackendCapabilities caps;
        caps.exact_entropy = co.value("exact_entropy", false);
        caps.scoring = co.value("scoring", false);
        caps.max_context = co.value("max_context", o.max_context);
        o.capabilities_override = caps;
      }
      if (b.contains("mock")) o.mock = mock_spec_from_json(b["mock"]);
    }
    if (j.contains("sampling")) {
      check_keys(j["sampling"], "sampling", {"temperature", "top_p", "max_tokens"});
      c.sampling = sampling_params_from_json(j["sampling"]);
    }
    if (j.contains("elicitation")) {
      const auto& e = j["elicitation"];
      check_keys(e, "elicitation", {"base_n", "hint_n"});
      c.elicitation.base_n = e.value("base_n", c.elicitation.base_n);
      c.elicitation.hint_n = e.value("hint_n", c.elicitation.hint_n);
    }
    if (j.contains("gear")) {
      const auto& g = j["gear"];
      check_keys(g, "gear", {"paths_per_question", "candidates_n"});
      c.gear.paths_per_question = g.value("paths_per_question", c.gear.paths_per_question);
      c.gear.candidates_n = g.value("candidates_n", c.gear.candidates_n);
    }
    if (j.contains("pure")) {
      const auto& p = j["pure"];
      check_keys(p, "pure", {"lambda", "epsilon", "mode", "answer_prefix"});
      c.pure.lambda = p.value("lambda", c.pure.lambda);
      c.pure.epsilon = p.value("epsilon", c.pure.epsilon);
      if (p.contains("mode")) c.pure.mode = filter_mode_from_string(p["mode"].get<std::string>());
      c.pure.answer_prefix = p.value("answer_prefix", c.pure.answer_prefix);
    }
    if (j.contains("pace")) {
      const auto& p = j["pace"];
      check_keys(p, "pace", {"upsample_repair", "shuffle_seed", "trainer"});
      c.pace.upsample_repair = p.value("upsample_repair", c.pace.upsample_repair);
      c.pace.shuffle_seed = p.value("shuffle_seed", c.pace.shuffle_seed);
      if (p.contains("trainer")) {
        const auto& t = p["trainer"];
        check_keys(t, "pace.trainer", {"epochs", "learning_rate", "global_batch_size"});
        c.pace.trainer.epochs = t.value("epochs", c.pace.trainer.epochs);
        c.pace.trainer.learning_rate = t.value("learning_rate", c.pace.trainer.learning_rate);
        c.pace.trainer.global_batch_size = t.value("global_batch_size", c.pace.trainer.global_batch_size);
      }
    }
    if (j.contains("templates")) {
      check_keys(j["templates"], "templates", {"base", "hint", "repair", "hint_marker", "repair_marker"});
      c.templates = prompt_templates_from_json(j["templates"]);
    }
    if (j.contains("answer_patterns")) {
      c.answer_patterns.clear();
      for (const auto& p : j["answer_patterns"]) c.answer_patterns.push_back(answer_pattern_from_json(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace heal
