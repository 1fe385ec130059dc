#include "heal/elicitor.hpp"

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/parallel.hpp"

namespace heal {

std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Hard: return "hard";
    case Difficulty::ExtremelyHard: return "extremely_hard";
  }
  return "easy";
}

Difficulty difficulty_from_string(std::string_view s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "hard") return Difficulty::Hard;
  if (s == "extremely_hard") return Difficulty::ExtremelyHard;
  throw Error(ErrorCode::Config, "unknown difficulty '" + std::string(s) + "'");
}

DifficultyLabel classify_difficulty(int pass_count, int total) {
  if (total < 1 || pass_count < 0 || pass_count > total) {
    throw Error(ErrorCode::Precondition, "need 0 <= pass_count <= total and total >= 1");
  }
  Difficulty d = Difficulty::Easy;
  if (pass_count <= 1) {
    d = Difficulty::ExtremelyHard;
  } else if (2 * pass_count < total) {
    d = Difficulty::Hard;
  }
  return {d, pass_count, total};
}

void ElicitationBudget::validate() const {
  if (base_n < 1 || hint_n < 1) throw Error(ErrorCode::Config, "sampling budgets must be >= 1");
}

Draw resumable_draw(const SamplingContext& ctx, const std::string& phase, const std::string& key,
                    const std::string& question_id, std::uint64_t attempt, std::uint64_t seed,
                    const std::function<Trajectory()>& make) {
  if (ctx.store) {
    if (auto stored = ctx.store->lookup(phase, key)) {
      if (stored->value("seed", std::uint64_t{0}) == seed) return {trajectory_from_json(*stored), {}};
    }
  }
  Draw d;
  try {
    d.trajectory = with_retries(ctx.retry, make);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendUnavailable && e.code() != ErrorCode::ContextExceeded) throw;
    d.error = e.what();
    if (ctx.store) ctx.store->note(phase, {question_id, attempt, "", "incomplete"});
    return d;
  }
  if (ctx.store) {
    const auto& t = *d.trajectory;
    ctx.store->record(phase, key, to_json(t),
                      {question_id, attempt, digest(t), t.correct.value_or(false) ? "correct" : "incorrect"});
  }
  return d;
}

std::vector<Trajectory> QuestionSamples::correct() const {
  std::vector<Trajectory> out;
  for (const auto& t : trajectories) {
    if (t.correct.value_or(false)) out.push_back(t);
  }
  return out;
}

std::vector<Trajectory> QuestionSamples::incorrect() const {
  std::vector<Trajectory> out;
  for (const auto& t : trajectories) {
    if (!t.correct.value_or(false)) out.push_back(t);
  }
  return out;
}

namespace {

std::vector<QuestionSamples> sample_phase(std::span<const Question> questions, const std::string& phase,
                                          Provenance provenance, int n, const SamplingParams& params,
                                          const SamplingContext& ctx,
                                          const std::function<std::string(const Question&)>& render) {
  if (!ctx.backend) throw Error(ErrorCode::Config, "sampling context has no backend");
  params.validate();
  std::vector<std::string> prompts;
  prompts.reserve(questions.size());
  for (const auto& q : questions) prompts.push_back(render(q));

  const std::size_t per = static_cast<std::size_t>(n);
  std::vector<Draw> draws(questions.size() * per);
  parallel_for(draws.size(), ctx.parallelism, [&](std::size_t idx) {
    const auto& q = questions[idx / per];
    const auto& prompt = prompts[idx / per];
    const std::uint64_t attempt = idx % per;
    const std::uint64_t seed = derive_seed(ctx.run_seed, phase + ":" + q.id, attempt);
    draws[idx] = resumable_draw(ctx, phase, q.id + ":" + std::to_string(attempt), q.id, attempt, seed, [&] {
      SamplingParams p = params;
      p.n = 1;
      p.seed = seed;
      auto gens = ctx.backend->sample(prompt, p);
      if (gens.size() != 1) throw Error(ErrorCode::BackendUnavailable, "expected one generation");
      auto t = make_trajectory(q, provenance, std::move(gens[0].tokens), attempt, seed, p, ctx.patterns);
      t.entropy_approximate = gens[0].entropy_approximate;
      return t;
    });
  });

  std::vector<QuestionSamples> out(questions.size());
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    auto& qs = out[qi];
    qs.question_id = questions[qi].id;
    for (std::size_t a = 0; a < per; ++a) {
      auto& d = draws[qi * per + a];
      if (!d.trajectory) {
        qs.incomplete = true;
        if (qs.error.empty()) qs.error = d.error;
        continue;
      }
      ++qs.total;
      if (d.trajectory->correct.value_or(false)) ++qs.pass_count;
      qs.trajectories.push_back(std::move(*d.trajectory));
    }
  }
  return out;
}

}  // namespace

std::vector<QuestionSamples> run_rejection_sampling(std::span<const Question> questions,
                                                    const ElicitationBudget& budget,
                                                    const SamplingParams& params, const SamplingContext& ctx) {
  budget.validate();
  if (questions.empty()) throw Error(ErrorCode::Precondition, "no questions to sample");
  return sample_phase(questions, "base", Provenance::Base, budget.base_n, params, ctx,
                      [&](const Question& q) { return build_base_prompt(q, ctx.templates); });
}

std::vector<QuestionSamples> run_hint_sampling(std::span<const Question> questions,
                                               std::span<const DifficultyLabel> labels,
                                               const ElicitationBudget& budget, const SamplingParams& params,
                                               const SamplingContext& ctx) {
  budget.validate();
  if (labels.size() != questions.size()) throw Error(ErrorCode::Precondition, "one label per question required");
  for (std::size_t i = 0; i < questions.size(); ++i) {
    if (labels[i].label == Difficulty::Easy) {
      throw Error(ErrorCode::Precondition, "question " + questions[i].id + " is not labeled hard");
    }
  }
  return sample_phase(questions, "hint", Provenance::Hint, budget.hint_n, params, ctx,
                      [&](const Question& q) { return build_hint_prompt(q, ctx.templates); });
}

json to_json(const DifficultyLabel& d) {
  return {{"label", std::string(to_string(d.label))}, {"pass_count", d.pass_count}, {"total", d.total}};
}

DifficultyLabel difficulty_label_from_json(const json& j) {
  return {difficulty_from_string(j.at("label").get<std::string>()), j.at("pass_count").get<int>(),
          j.at("total").get<int>()};
}

json to_json(const PassStats& s) {
  json j{{"question_id", s.question_id},
         {"base_pass", s.base_pass},
         {"base_total", s.base_total},
         {"incomplete", s.incomplete}};
  auto opt = [&](const char* name, const std::optional<int>& v) { j[name] = v ? json(*v) : json(nullptr); };
  j["label"] = s.label ? json(std::string(to_string(s.label->label))) : json(nullptr);
  opt("hint_pass", s.hint_pass);
  opt("hint_total", s.hint_total);
  j["hint_incomplete"] = s.hint_incomplete;
  opt("repair_successes", s.repair_successes);
  opt("repair_candidates", s.repair_candidates);
  return j;
}

PassStats pass_stats_from_json(const json& j) {
  PassStats s;
  s.question_id = j.at("question_id").get<std::string>();
  s.base_pass = j.at("base_pass").get<int>();
  s.base_total = j.at("base_total").get<int>();
  s.incomplete = j.value("incomplete", false);
  if (j.contains("label") && !j["label"].is_null()) {
    s.label = DifficultyLabel{difficulty_from_string(j["label"].get<std::string>()), s.base_pass, s.base_total};
  }
  auto opt = [&](const char* name) -> std::optional<int> {
    if (!j.contains(name) || j[name].is_null()) return std::nullopt;
    return j[name].get<int>();
  };
  s.hint_pass = opt("hint_pass");
  s.hint_total = opt("hint_total");
  s.hint_incomplete = j.value("hint_incomplete", false);
  s.repair_successes = opt("repair_successes");
  s.repair_candidates = opt("repair_candidates");
  return s;
}

}  // namespace heal
