#include "heal/mock_backend.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/prompt.hpp"
#include "heal/rng.hpp"

namespace heal {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv_update(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

using Rng = SeededRng;

std::string wrong_answer(const std::string& gold, Rng& rng) {
  const std::string g = normalize_answer(gold);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(g.data(), g.data() + g.size(), v);
  const auto bump = static_cast<long long>(1 + rng.below(9));
  if (ec == std::errc() && ptr == g.data() + g.size()) return std::to_string(v + bump);
  return g + std::to_string(bump);
}

std::vector<std::string> default_teacher_vocab() {
  std::vector<std::string> v;
  for (char c = 32; c < 127; ++c) v.emplace_back(1, c);
  v.emplace_back("\n");
  return v;
}

std::string_view kind_name(MockModelSpec::Kind k) {
  switch (k) {
    case MockModelSpec::Kind::Teacher: return "teacher";
    case MockModelSpec::Kind::Uniform: return "uniform";
    case MockModelSpec::Kind::Deterministic: return "deterministic";
  }
  return "teacher";
}

std::size_t count_delimiter_runs(std::string_view s) {
  std::size_t runs = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] == '\n' && s[i + 1] == '\n' && (i == 0 || s[i - 1] != '\n')) ++runs;
  }
  return runs;
}

}  // namespace

std::vector<std::string_view> split_symbols(std::string_view text) {
  std::vector<std::string_view> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

const MockProfile& MockModelSpec::profile_for(std::string_view question_id) const {
  if (const auto it = profiles.find(std::string(question_id)); it != profiles.end()) return it->second;
  if (!mix.empty()) {
    double total = 0.0;
    for (const auto& [w, p] : mix) total += w;
    const std::string key = std::to_string(seed) + ":" + std::string(question_id);
    const double u = static_cast<double>(hash64(key) >> 11) * 0x1.0p-53 * total;
    double acc = 0.0;
    for (const auto& [w, p] : mix) {
      acc += w;
      if (u < acc) return p;
    }
    return mix.back().second;
  }
  return default_profile;
}

json to_json(const MockProfile& p) {
  return {{"p0", p.p0},
          {"p1", p.p1},
          {"p2", p.p2},
          {"min_steps", p.min_steps},
          {"max_steps", p.max_steps},
          {"min_step_chars", p.min_step_chars},
          {"max_step_chars", p.max_step_chars},
          {"base_mix", p.base_mix},
          {"spike_step", p.spike_step},
          {"spike_mix", p.spike_mix},
          {"leak_rate", p.leak_rate}};
}

MockProfile mock_profile_from_json(const json& j, const MockProfile& d) {
  MockProfile p;
  p.p0 = j.value("p0", d.p0);
  p.p1 = j.value("p1", d.p1);
  p.p2 = j.value("p2", d.p2);
  p.min_steps = j.value("min_steps", d.min_steps);
  p.max_steps = j.value("max_steps", d.max_steps);
  p.min_step_chars = j.value("min_step_chars", d.min_step_chars);
  p.max_step_chars = j.value("max_step_chars", d.max_step_chars);
  p.base_mix = j.value("base_mix", d.base_mix);
  p.spike_step = j.value("spike_step", d.spike_step);
  p.spike_mix = j.value("spike_mix", d.spike_mix);
  p.leak_rate = j.value("leak_rate", d.leak_rate);
  for (double prob : {p.p0, p.p1, p.p2, p.base_mix, p.spike_mix, p.leak_rate}) {
    if (!(prob >= 0.0 && prob <= 1.0)) throw Error(ErrorCode::Config, "mock profile probabilities must be in [0,1]");
  }
  if (p.min_steps < 1 || p.max_steps < p.min_steps || p.min_step_chars < 1 ||
      p.max_step_chars < p.min_step_chars) {
    throw Error(ErrorCode::Config, "mock profile length ranges are invalid");
  }
  return p;
}

json to_json(const MockModelSpec& s) {
  json profiles = json::object();
  for (const auto& [id, p] : s.profiles) profiles[id] = to_json(p);
  json mix = json::array();
  for (const auto& [w, p] : s.mix) mix.push_back({{"weight", w}, {"profile", to_json(p)}});
  return {{"kind", std::string(kind_name(s.kind))},
          {"vocab", s.vocab},
          {"content_symbols", s.content_symbols},
          {"seed", s.seed},
          {"default_profile", to_json(s.default_profile)},
          {"profiles", std::move(profiles)},
          {"mix", std::move(mix)},
          {"hint_marker", s.hint_marker},
          {"repair_marker", s.repair_marker},
          {"answer_cue", s.answer_cue},
          {"leak_template", s.leak_template},
          {"max_context", s.max_context},
          {"uniform_length", s.uniform_length},
          {"content_mass", s.content_mass},
          {"answer_confidence_max", s.answer_confidence_max},
          {"answer_confidence_tau", s.answer_confidence_tau},
          {"answer_follow_confidence", s.answer_follow_confidence},
          {"copy_confidence", s.copy_confidence}};
}

MockModelSpec mock_spec_from_json(const json& j) {
  MockModelSpec s;
  const auto kind = j.value("kind", std::string("teacher"));
  if (kind == "teacher") {
    s.kind = MockModelSpec::Kind::Teacher;
  } else if (kind == "uniform") {
    s.kind = MockModelSpec::Kind::Uniform;
  } else if (kind == "deterministic") {
    s.kind = MockModelSpec::Kind::Deterministic;
  } else {
    throw Error(ErrorCode::Config, "mock kind must be teacher|uniform|deterministic");
  }
  s.vocab = j.value("vocab", s.vocab);
  s.content_symbols = j.value("content_symbols", s.content_symbols);
  s.seed = j.value("seed", s.seed);
  if (j.contains("default_profile")) s.default_profile = mock_profile_from_json(j["default_profile"]);
  if (j.contains("profiles")) {
    for (const auto& [id, pj] : j["profiles"].items()) s.profiles[id] = mock_profile_from_json(pj, s.default_profile);
  }
  if (j.contains("mix")) {
    for (const auto& m : j["mix"]) {
      s.mix.emplace_back(m.at("weight").get<double>(), mock_profile_from_json(m.at("profile"), s.default_profile));
    }
  }
  s.hint_marker = j.value("hint_marker", s.hint_marker);
  s.repair_marker = j.value("repair_marker", s.repair_marker);
  s.answer_cue = j.value("answer_cue", s.answer_cue);
  s.leak_template = j.value("leak_template", s.leak_template);
  s.max_context = j.value("max_context", s.max_context);
  s.uniform_length = j.value("uniform_length", s.uniform_length);
  s.content_mass = j.value("content_mass", s.content_mass);
  s.answer_confidence_max = j.value("answer_confidence_max", s.answer_confidence_max);
  s.answer_confidence_tau = j.value("answer_confidence_tau", s.answer_confidence_tau);
  s.answer_follow_confidence = j.value("answer_follow_confidence", s.answer_follow_confidence);
  s.copy_confidence = j.value("copy_confidence", s.copy_confidence);
  return s;
}

struct MockBackend::ScoreState {
  const Question* question = nullptr;
  std::size_t question_end = 0;
  std::size_t last_cue_end = std::string_view::npos;
};

MockBackend::MockBackend(MockModelSpec spec) : spec_(std::move(spec)) {
  vocab_ = spec_.vocab;
  if (vocab_.empty()) {
    vocab_ = spec_.kind == MockModelSpec::Kind::Teacher ? default_teacher_vocab()
                                                        : std::vector<std::string>{"a", "b", "c", "d"};
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (split_symbols(vocab_[i]).size() != 1) throw Error(ErrorCode::Config, "mock vocab symbols must be single code points");
    if (!vocab_index_.emplace(vocab_[i], i).second) throw Error(ErrorCode::Config, "duplicate mock vocab symbol");
  }
  if (spec_.kind == MockModelSpec::Kind::Teacher) {
    for (auto sym : split_symbols(spec_.content_symbols)) {
      if (!vocab_index_.count(std::string(sym))) throw Error(ErrorCode::Config, "content symbol outside vocab");
      content_.emplace_back(sym);
    }
    if (content_.empty() || content_.size() >= vocab_.size()) {
      throw Error(ErrorCode::Config, "content symbols must be a non-empty strict subset of the vocab");
    }
    if (!(spec_.content_mass > 0.0 && spec_.content_mass < 1.0)) {
      throw Error(ErrorCode::Config, "content_mass must be in (0,1)");
    }
    content_prob_ = spec_.content_mass / static_cast<double>(content_.size());
    rare_prob_ = (1.0 - spec_.content_mass) / static_cast<double>(vocab_.size() - content_.size());
  }
}

BackendCapabilities MockBackend::capabilities() const { return {true, true, spec_.max_context}; }

const Question* MockBackend::find_question(std::string_view text) const {
  const std::string key(text.substr(0, std::min<std::size_t>(text.size(), 256)));
  {
    std::lock_guard lock(lookup_mu_);
    if (const auto it = lookup_cache_.find(key); it != lookup_cache_.end()) {
      if (it->second && text.find(it->second->text) != std::string_view::npos) return it->second;
    }
  }
  const Question* best = nullptr;
  for (const auto& q : spec_.questions) {
    if (q.text.empty() || (best && q.text.size() <= best->text.size())) continue;
    if (text.find(q.text) != std::string_view::npos) best = &q;
  }
  if (best) {
    std::lock_guard lock(lookup_mu_);
    lookup_cache_[key] = best;
  }
  return best;
}

MockBackend::PromptKind MockBackend::classify_prompt(std::string_view prompt) const {
  if (!spec_.repair_marker.empty() && prompt.find(spec_.repair_marker) != std::string_view::npos) {
    return PromptKind::Repair;
  }
  if (!spec_.hint_marker.empty() && prompt.find(spec_.hint_marker) != std::string_view::npos) {
    return PromptKind::Hint;
  }
  return PromptKind::Base;
}

std::vector<Generation> MockBackend::sample(std::string_view prompt, const SamplingParams& params) const {
  auto detailed = generate(prompt, params, 0);
  std::vector<Generation> out;
  out.reserve(detailed.size());
  for (auto& d : detailed) out.push_back(std::move(d.generation));
  return out;
}

std::vector<MockBackend::DetailedGeneration> MockBackend::sample_detailed(std::string_view prompt,
                                                                          const SamplingParams& params,
                                                                          std::size_t k) const {
  return generate(prompt, params, std::max<std::size_t>(k, 1));
}

std::vector<MockBackend::DetailedGeneration> MockBackend::generate(std::string_view prompt,
                                                                   const SamplingParams& params,
                                                                   std::size_t k) const {
  params.validate();
  if (prompt.empty()) throw Error(ErrorCode::Precondition, "empty prompt");
  const std::size_t prompt_len = split_symbols(prompt).size();
  if (prompt_len + static_cast<std::size_t>(params.max_tokens) > spec_.max_context) {
    throw Error(ErrorCode::ContextExceeded, std::to_string(prompt_len) + " prompt symbols + " +
                                                std::to_string(params.max_tokens) + " > " +
                                                std::to_string(spec_.max_context));
  }

  const Question* question = nullptr;
  PromptKind kind = PromptKind::Base;
  if (spec_.kind == MockModelSpec::Kind::Teacher) {
    question = find_question(prompt);
    if (!question) throw Error(ErrorCode::Precondition, "mock prompt matches no configured question");
    kind = classify_prompt(prompt);
  }

  const std::string seed_key = sha256_hex(prompt) + ":" + std::to_string(params.seed.value_or(0));
  const std::uint64_t prompt_hash = fnv_update(kFnvOffset, prompt);
  const auto max_tokens = static_cast<std::size_t>(params.max_tokens);

  std::vector<DetailedGeneration> out(static_cast<std::size_t>(params.n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(spec_.seed, seed_key, i));
    auto& gen = out[i].generation;
    auto& topk = out[i].topk;
    gen.entropy_approximate = false;
    bool truncated = false;

    auto emit = [&](std::string_view sym, double p, double entropy, TopLogprobs alternatives) {
      if (gen.tokens.size() >= max_tokens) {
        truncated = true;
        return;
      }
      gen.tokens.push_back({std::string(sym), -std::log(p), entropy});
      if (k > 0) topk.push_back(std::move(alternatives));
    };
    auto emit_certain = [&](std::string_view text) {
      for (auto sym : split_symbols(text)) emit(sym, 1.0, 0.0, {{std::string(sym), 0.0}});
    };

    if (spec_.kind != MockModelSpec::Kind::Teacher) {
      const std::size_t len = std::min(spec_.uniform_length, max_tokens);
      const double v = static_cast<double>(vocab_.size());
      for (std::size_t t = 0; t < len; ++t) {
        if (spec_.kind == MockModelSpec::Kind::Deterministic) {
          emit(vocab_[0], 1.0, 0.0, {{vocab_[0], 0.0}});
          continue;
        }
        TopLogprobs alts;
        for (std::size_t a = 0; a < std::min(k, vocab_.size()); ++a) alts.emplace_back(vocab_[a], -std::log(v));
        emit(vocab_[rng.below(vocab_.size())], 1.0 / v, std::log(v), std::move(alts));
      }
      gen.finish_reason = len < spec_.uniform_length ? "length" : "stop";
      continue;
    }

    const MockProfile& prof = spec_.profile_for(question->id);
    const double success_p = kind == PromptKind::Base ? prof.p0 : kind == PromptKind::Hint ? prof.p1 : prof.p2;
    const bool success = rng.uniform() < success_p;
    const int steps = kind == PromptKind::Repair
                          ? rng.between(std::max(2, prof.min_steps / 2), std::max(2, prof.max_steps / 2))
                          : rng.between(prof.min_steps, prof.max_steps);
    int leak_at = 0;
    if (kind != PromptKind::Base && steps >= 4 && rng.uniform() < prof.leak_rate) {
      leak_at = rng.between(1, steps - 3);
    }

    const std::size_t kc = content_.size();
    std::uint64_t h = prompt_hash;
    for (int t = 1; t < steps && !truncated; ++t) {
      if (t == leak_at) {
        const auto leak = render_template(spec_.leak_template, {{"answer", question->gold_answer}});
        emit_certain(leak);
        h = fnv_update(h, leak);
      } else {
        const bool spike = kind != PromptKind::Repair && t == prof.spike_step;
        const double w = spike ? prof.spike_mix : prof.base_mix;
        const double p_other = w / static_cast<double>(kc);
        const double p_pref = 1.0 - w + p_other;
        double entropy = 0.0;
        if (p_pref > 0.0) entropy -= p_pref * std::log(p_pref);
        if (p_other > 0.0) entropy -= static_cast<double>(kc - 1) * p_other * std::log(p_other);
        const int len = rng.between(prof.min_step_chars, prof.max_step_chars);
        for (int c = 0; c < len; ++c) {
          const std::size_t pref = splitmix64(h) % kc;
          const std::size_t pick = rng.uniform() < 1.0 - w ? pref : static_cast<std::size_t>(rng.below(kc));
          TopLogprobs alts;
          if (k > 0) {
            alts.emplace_back(content_[pref], std::log(p_pref));
            for (std::size_t a = 0; a < kc && alts.size() < k; ++a) {
              if (a != pref && p_other > 0.0) alts.emplace_back(content_[a], std::log(p_other));
            }
          }
          emit(content_[pick], pick == pref ? p_pref : p_other, entropy, std::move(alts));
          h = fnv_update(h, content_[pick]);
        }
      }
      emit_certain(kStepDelimiter);
      h = fnv_update(h, kStepDelimiter);
    }
    const std::string answer = success ? question->gold_answer : wrong_answer(question->gold_answer, rng);
    emit_certain(spec_.answer_cue + answer);
    gen.finish_reason = truncated ? "length" : "stop";
  }
  return out;
}

double MockBackend::unigram(std::string_view symbol) const {
  const auto it = vocab_index_.find(std::string(symbol));
  if (it == vocab_index_.end()) return rare_prob_;
  return std::find(content_.begin(), content_.end(), symbol) != content_.end() ? content_prob_ : rare_prob_;
}

double MockBackend::symbol_prob(std::string_view full, std::size_t offset, std::string_view symbol,
                                const ScoreState& st) const {
  if (st.question && st.last_cue_end != std::string_view::npos && st.last_cue_end <= offset) {
    const std::string& gold = st.question->gold_answer;
    const std::string_view partial = full.substr(st.last_cue_end, offset - st.last_cue_end);
    if (partial.find('\n') == std::string_view::npos && partial.size() < gold.size() &&
        std::string_view(gold).substr(0, partial.size()) == partial) {
      const std::string_view target = split_symbols(std::string_view(gold).substr(partial.size())).front();
      const std::size_t cue_start = st.last_cue_end - spec_.answer_cue.size();
      const std::string_view region =
          cue_start > st.question_end ? full.substr(st.question_end, cue_start - st.question_end) : std::string_view{};
      double conf;
      if (region.find(gold) != std::string_view::npos) {
        conf = spec_.copy_confidence;
      } else if (partial.empty()) {
        const double steps = static_cast<double>(count_delimiter_runs(region));
        conf = spec_.answer_confidence_max * (1.0 - std::exp(-(steps + 1.0) / spec_.answer_confidence_tau));
      } else {
        conf = spec_.answer_follow_confidence;
      }
      if (symbol == target) return conf;
      return (1.0 - conf) * unigram(symbol) / (1.0 - unigram(target));
    }
  }
  return unigram(symbol);
}

std::vector<double> MockBackend::score_continuation(std::string_view context, std::string_view continuation) const {
  const auto symbols = split_symbols(continuation);
  if (split_symbols(context).size() + symbols.size() > spec_.max_context) {
    throw Error(ErrorCode::ContextExceeded, "scoring request exceeds mock context");
  }
  std::vector<double> nll;
  nll.reserve(symbols.size());
  if (spec_.kind == MockModelSpec::Kind::Deterministic) {
    nll.assign(symbols.size(), 0.0);
    return nll;
  }
  if (spec_.kind == MockModelSpec::Kind::Uniform) {
    nll.assign(symbols.size(), std::log(static_cast<double>(vocab_.size())));
    return nll;
  }

  const std::string full = std::string(context) + std::string(continuation);
  ScoreState st;
  st.question = find_question(context);
  if (st.question) st.question_end = context.find(st.question->text) + st.question->text.size();
  const auto& cue = spec_.answer_cue;
  if (!cue.empty()) {
    const auto pos = context.rfind(cue);
    if (pos != std::string_view::npos) st.last_cue_end = pos + cue.size();
  }
  std::size_t offset = context.size();
  for (auto sym : symbols) {
    nll.push_back(-std::log(symbol_prob(full, offset, sym, st)));
    offset += sym.size();
    if (!cue.empty() && offset >= cue.size() && full.compare(offset - cue.size(), cue.size(), cue) == 0) {
      st.last_cue_end = offset;
    }
  }
  return nll;
}

std::vector<double> MockBackend::next_distribution(std::string_view prefix) const {
  if (spec_.kind == MockModelSpec::Kind::Deterministic) {
    throw Error(ErrorCode::CapabilityMissing, "deterministic mock has no distribution");
  }
  std::vector<double> dist(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()));
  if (spec_.kind == MockModelSpec::Kind::Uniform) return dist;
  ScoreState st;
  st.question = find_question(prefix);
  if (st.question) st.question_end = prefix.find(st.question->text) + st.question->text.size();
  if (const auto pos = prefix.rfind(spec_.answer_cue); !spec_.answer_cue.empty() && pos != std::string_view::npos) {
    st.last_cue_end = pos + spec_.answer_cue.size();
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) dist[i] = symbol_prob(prefix, prefix.size(), vocab_[i], st);
  return dist;
}

}  // namespace heal
