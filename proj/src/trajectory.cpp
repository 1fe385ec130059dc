#include "heal/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "heal/digest.hpp"
#include "heal/error.hpp"

namespace heal {

void SamplingParams::validate() const {
  if (!(temperature >= 0.0)) throw Error(ErrorCode::Precondition, "temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::Precondition, "top_p must be in (0,1]");
  if (max_tokens <= 0) throw Error(ErrorCode::Precondition, "max_tokens must be positive");
  if (n <= 0) throw Error(ErrorCode::Precondition, "n must be positive");
}

json to_json(const SamplingParams& p) {
  json j{{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}, {"n", p.n}};
  j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
  return j;
}

SamplingParams sampling_params_from_json(const json& j) {
  SamplingParams p;
  p.temperature = j.value("temperature", p.temperature);
  p.top_p = j.value("top_p", p.top_p);
  p.max_tokens = j.value("max_tokens", p.max_tokens);
  p.n = j.value("n", p.n);
  if (j.contains("seed") && !j["seed"].is_null()) p.seed = j["seed"].get<std::uint64_t>();
  return p;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Base: return "base";
    case Provenance::Hint: return "hint";
    case Provenance::Repair: return "repair";
  }
  return "base";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "base") return Provenance::Base;
  if (s == "hint") return Provenance::Hint;
  if (s == "repair") return Provenance::Repair;
  throw Error(ErrorCode::Config, "unknown provenance '" + std::string(s) + "'");
}

std::string Trajectory::text() const {
  std::string out;
  for (const auto& t : tokens) out += t.token;
  return out;
}

namespace {

struct Segment {
  std::size_t begin;
  std::size_t end;
};

std::vector<Segment> find_segments(std::string_view text, std::string_view delimiter) {
  if (delimiter.empty()) throw Error(ErrorCode::Precondition, "empty step delimiter");
  std::vector<Segment> segs;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto hit = text.find(delimiter, pos);
    const std::size_t end = hit == std::string_view::npos ? text.size() : hit;
    if (end > pos) segs.push_back({pos, end});
    if (hit == std::string_view::npos) break;
    pos = hit + delimiter.size();
  }
  return segs;
}

void fill_stats(Step& step, std::span<const TokenRecord> tokens) {
  if (step.tokens.empty()) {
    step.ppl = 1.0;
    step.mean_entropy.reset();
    return;
  }
  double nll_sum = 0.0;
  double ent_sum = 0.0;
  bool have_entropy = true;
  for (std::size_t i = step.tokens.begin; i < step.tokens.end; ++i) {
    nll_sum += tokens[i].nll;
    if (tokens[i].entropy) {
      ent_sum += *tokens[i].entropy;
    } else {
      have_entropy = false;
    }
  }
  const double n = static_cast<double>(step.tokens.size());
  step.ppl = std::exp(nll_sum / n);
  if (have_entropy) {
    step.mean_entropy = ent_sum / n;
  } else {
    step.mean_entropy.reset();
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

std::vector<ByteRange> step_ranges(std::string_view text, std::string_view delimiter) {
  std::vector<ByteRange> out;
  for (const auto& s : find_segments(text, delimiter)) out.push_back({s.begin, s.end});
  return out;
}

std::vector<std::string> split_steps(std::string_view text, std::string_view delimiter) {
  std::vector<std::string> out;
  for (const auto& seg : find_segments(text, delimiter)) {
    out.emplace_back(text.substr(seg.begin, seg.end - seg.begin));
  }
  return out;
}

std::string join_steps(std::span<const Step> steps, std::string_view delimiter) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += delimiter;
    out += steps[i].text;
  }
  return out;
}

std::vector<Step> segment_steps(std::string_view rationale_text, std::span<const TokenRecord> tokens,
                                std::string_view delimiter) {
  if (rationale_text.empty()) throw Error(ErrorCode::EmptyTrajectory, "empty rationale");

  std::vector<std::size_t> starts;
  starts.reserve(tokens.size());
  std::size_t offset = 0;
  for (const auto& t : tokens) {
    if (rationale_text.compare(offset, t.token.size(), t.token) != 0) {
      throw Error(ErrorCode::TokenAlignment,
                  "token " + std::to_string(starts.size()) + " does not match text at offset " +
                      std::to_string(offset));
    }
    starts.push_back(offset);
    offset += t.token.size();
  }
  if (offset != rationale_text.size()) {
    throw Error(ErrorCode::TokenAlignment, "tokens cover " + std::to_string(offset) + " of " +
                                               std::to_string(rationale_text.size()) + " bytes");
  }

  const auto segs = find_segments(rationale_text, delimiter);
  if (segs.empty()) throw Error(ErrorCode::EmptyTrajectory, "rationale contains only delimiters");

  std::vector<Step> steps(segs.size());
  for (std::size_t k = 0; k < segs.size(); ++k) {
    steps[k].index = k;
    steps[k].text = std::string(rationale_text.substr(segs[k].begin, segs[k].end - segs[k].begin));
  }

  // Owner step of each token, or npos for delimiter-only tokens. Two pointers:
  // both tokens and segments are ordered by offset.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(tokens.size(), kNone);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t b = starts[i];
    const std::size_t e = b + tokens[i].token.size();
    while (seg < segs.size() && segs[seg].end <= b) ++seg;
    if (seg == segs.size()) break;
    if (segs[seg].begin <= b) {
      owner[i] = seg;
    } else if (segs[seg].begin < e) {
      owner[i] = seg;  // starts in a delimiter, carries text of the next step
    }
  }

  // Owned tokens of one step are contiguous: an unowned token lies entirely
  // inside a delimiter run, after every token of the preceding step.
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    while (cursor < tokens.size() && owner[cursor] == kNone) ++cursor;
    std::size_t end = cursor;
    while (end < tokens.size() && owner[end] == k) ++end;
    steps[k].tokens = {cursor, end};
    fill_stats(steps[k], tokens);
    cursor = end;
  }
  return steps;
}

std::string normalize_answer(std::string_view raw) {
  std::string s(trim(raw));
  // Unicode minus (U+2212) and en dash (U+2013) as ASCII hyphen-minus.
  for (std::string_view minus : {std::string_view("\xE2\x88\x92"), std::string_view("\xE2\x80\x93")}) {
    for (auto pos = s.find(minus); pos != std::string::npos; pos = s.find(minus, pos + 1)) {
      s.replace(pos, minus.size(), "-");
    }
  }
  std::string_view v(s);
  while (v.size() >= 2 && v.front() == '$' && v.back() == '$') {
    v.remove_prefix(1);
    v.remove_suffix(1);
    v = trim(v);
  }
  return std::string(v);
}

bool verify_answer(const std::optional<std::string>& predicted, std::string_view gold) {
  if (!predicted) return false;
  const std::string p = normalize_answer(*predicted);
  const std::string g = normalize_answer(gold);
  if (p.empty()) return false;
  if (p == g) return true;
  const auto pv = parse_number(p);
  const auto gv = parse_number(g);
  if (!pv || !gv) return false;
  if (*pv == *gv) return true;
  const double scale = std::max(std::abs(*pv), std::abs(*gv));
  return std::abs(*pv - *gv) <= 1e-9 * scale;
}

std::vector<AnswerPattern> default_answer_patterns() {
  return {{AnswerPattern::Kind::Braced, "\\boxed{"}, {AnswerPattern::Kind::Line, "Final Answer:"}};
}

namespace {

std::optional<std::string> match_at(std::string_view text, std::size_t pos, const AnswerPattern& p) {
  const std::size_t start = pos + p.marker.size();
  if (p.kind == AnswerPattern::Kind::Line) {
    const auto nl = text.find('\n', start);
    auto body = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    if (body.empty()) return std::nullopt;
    return std::string(body);
  }
  int depth = 1;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (text[i] == '{') {
      ++depth;
    } else if (text[i] == '}' && --depth == 0) {
      auto body = trim(text.substr(start, i - start));
      if (body.empty()) return std::nullopt;
      return std::string(body);
    }
  }
  return std::nullopt;  // unbalanced
}

}  // namespace

std::optional<std::string> extract_final_answer(std::string_view text, std::span<const AnswerPattern> patterns) {
  for (const auto& p : patterns) {
    if (p.marker.empty()) continue;
    for (auto pos = text.rfind(p.marker); pos != std::string_view::npos;
         pos = pos == 0 ? std::string_view::npos : text.rfind(p.marker, pos - 1)) {
      if (auto m = match_at(text, pos, p)) return m;
    }
  }
  return std::nullopt;
}

std::optional<std::string> extract_final_answer(std::string_view text) {
  static const auto kDefaults = default_answer_patterns();
  return extract_final_answer(text, kDefaults);
}

Trajectory make_trajectory(const Question& question, Provenance provenance, std::vector<TokenRecord> tokens,
                           std::uint64_t attempt, std::uint64_t seed, const SamplingParams& params,
                           std::span<const AnswerPattern> patterns) {
  Trajectory t;
  t.question_id = question.id;
  t.attempt = attempt;
  t.provenance = provenance;
  t.tokens = std::move(tokens);
  t.seed = seed;
  t.sampling_params = params;
  const std::string text = t.text();
  t.steps = segment_steps(text, t.tokens);
  t.predicted_answer = extract_final_answer(text, patterns);
  t.correct = verify_answer(t.predicted_answer, question.gold_answer);
  return t;
}

json to_json(const Question& q) { return {{"id", q.id}, {"text", q.text}, {"gold_answer", q.gold_answer}}; }

Question question_from_json(const json& j) {
  Question q{j.at("id").get<std::string>(), j.at("text").get<std::string>(),
             j.at("gold_answer").get<std::string>()};
  if (q.id.empty() || q.text.empty() || q.gold_answer.empty()) {
    throw Error(ErrorCode::Config, "question fields must be non-empty");
  }
  return q;
}

json to_json(const TokenRecord& t) {
  return {{"token", t.token}, {"nll", t.nll}, {"entropy", t.entropy ? json(*t.entropy) : json(nullptr)}};
}

json to_json(const Step& s) {
  return {{"index", s.index},
          {"text", s.text},
          {"token_span", {s.tokens.begin, s.tokens.end}},
          {"mean_entropy", s.mean_entropy ? json(*s.mean_entropy) : json(nullptr)},
          {"ppl", s.ppl}};
}

json to_json(const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  json tokens = json::array();
  for (const auto& tok : t.tokens) tokens.push_back(to_json(tok));
  json j{{"question_id", t.question_id},
         {"attempt", t.attempt},
         {"provenance", std::string(to_string(t.provenance))},
         {"correct", t.correct ? json(*t.correct) : json(nullptr)},
         {"predicted_answer", t.predicted_answer ? json(*t.predicted_answer) : json(nullptr)},
         {"seed", t.seed},
         {"sampling_params", to_json(t.sampling_params)},
         {"entropy_approximate", t.entropy_approximate},
         {"steps", std::move(steps)},
         {"tokens", std::move(tokens)}};
  if (t.repair) {
    j["source_digest"] = t.repair->source_digest;
    j["t_star"] = t.repair->t_star;
    j["peak_gradient"] = t.repair->peak_gradient;
  }
  return j;
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  t.question_id = j.at("question_id").get<std::string>();
  t.attempt = j.value("attempt", std::uint64_t{0});
  t.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  if (!j.at("correct").is_null()) t.correct = j["correct"].get<bool>();
  if (!j.at("predicted_answer").is_null()) t.predicted_answer = j["predicted_answer"].get<std::string>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.sampling_params = sampling_params_from_json(j.at("sampling_params"));
  t.entropy_approximate = j.value("entropy_approximate", false);
  for (const auto& tj : j.at("tokens")) {
    TokenRecord tok{tj.at("token").get<std::string>(), tj.at("nll").get<double>(), std::nullopt};
    if (!tj.at("entropy").is_null()) tok.entropy = tj["entropy"].get<double>();
    t.tokens.push_back(std::move(tok));
  }
  for (const auto& sj : j.at("steps")) {
    Step s;
    s.index = sj.at("index").get<std::size_t>();
    s.text = sj.at("text").get<std::string>();
    if (sj.contains("token_span")) {
      s.tokens = {sj["token_span"].at(0).get<std::size_t>(), sj["token_span"].at(1).get<std::size_t>()};
    }
    if (!sj.at("mean_entropy").is_null()) s.mean_entropy = sj["mean_entropy"].get<double>();
    s.ppl = sj.at("ppl").get<double>();
    t.steps.push_back(std::move(s));
  }
  if (j.contains("t_star")) {
    t.repair = RepairOrigin{j.at("source_digest").get<std::string>(), j.at("t_star").get<std::size_t>(),
                            j.at("peak_gradient").get<double>()};
  }
  return t;
}

json to_json(const AnswerPattern& p) {
  return {{"kind", p.kind == AnswerPattern::Kind::Braced ? "braced" : "line"}, {"marker", p.marker}};
}

AnswerPattern answer_pattern_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "braced" && kind != "line") throw Error(ErrorCode::Config, "answer pattern kind must be braced|line");
  return {kind == "braced" ? AnswerPattern::Kind::Braced : AnswerPattern::Kind::Line,
          j.at("marker").get<std::string>()};
}

std::string digest(const Trajectory& t) { return sha256_hex(to_json(t).dump()); }

}  // namespace heal
