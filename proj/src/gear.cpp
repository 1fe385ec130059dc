#include "heal/gear.hpp"

#include <algorithm>
#include <cmath>

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/kernels.hpp"
#include "heal/parallel.hpp"

namespace heal {

std::vector<std::pair<std::size_t, double>> entropy_gradient(const EntropyTrace& trace) {
  const auto& h = trace.values;
  if (h.size() < 2) throw Error(ErrorCode::TraceTooShort, "gradient needs at least 2 steps");
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(h.size() - 1);
  for (std::size_t t = 2; t <= h.size(); ++t) out.emplace_back(t, h[t - 1] - h[t - 2]);
  return out;
}

Breakpoint find_breakpoint(const EntropyTrace& trace) {
  const auto& h = trace.values;
  const std::size_t L = h.size();
  for (double v : h) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::Precondition, "entropies must be finite and >= 0");
  }
  // 1 < t < L/3 in integers: t >= 2 and 3t < L.
  if (3 * 2 >= L) throw Error(ErrorCode::WindowEmpty, "L=" + std::to_string(L) + " leaves no step in 1 < t < L/3");
  std::size_t peak = 2;
  double best = h[1] - h[0];
  for (std::size_t t = 3; 3 * t < L; ++t) {
    const double g = h[t - 1] - h[t - 2];
    if (g > best) {
      best = g;
      peak = t;
    }
  }
  const std::size_t t_star = std::max<std::size_t>(1, peak - 1);
  return {t_star, best, t_star + 1};
}

std::optional<EntropyTrace> entropy_trace(const Trajectory& t) {
  EntropyTrace trace;
  trace.values.reserve(t.steps.size());
  for (const auto& s : t.steps) {
    if (!s.mean_entropy) return std::nullopt;
    trace.values.push_back(*s.mean_entropy);
  }
  return trace;
}

std::string build_repair_prompt(const Question& q, std::string_view prefix, const PromptTemplates& t) {
  if (prefix.empty()) throw Error(ErrorCode::Precondition, "repair prefix is empty");
  if (q.gold_answer.empty()) throw Error(ErrorCode::Precondition, "repair prompt needs a gold answer");
  return render_template(t.repair, {{"question", q.text}, {"answer", q.gold_answer}, {"prefix", std::string(prefix)}},
                         {"question", "answer", "prefix"});
}

std::vector<Trajectory> select_incorrect_paths(std::span<const Trajectory> trajectories, std::size_t k) {
  std::vector<std::pair<std::string, const Trajectory*>> pool;
  for (const auto& t : trajectories) {
    if (t.correct.has_value() && !*t.correct) pool.emplace_back(digest(t), &t);
  }
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.second->steps.size() != b.second->steps.size()) return a.second->steps.size() > b.second->steps.size();
    return a.first < b.first;
  });
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < pool.size() && i < k; ++i) out.push_back(*pool[i].second);
  return out;
}

std::vector<TokenRecord> stitch_tokens(const Trajectory& source, std::size_t t_star,
                                       std::span<const TokenRecord> continuation, std::string_view delimiter) {
  if (t_star < 1 || t_star > source.steps.size()) throw Error(ErrorCode::Precondition, "t_star outside trajectory");
  const std::string text = source.text();
  const auto ranges = step_ranges(text, delimiter);
  const std::size_t prefix_end = ranges.at(t_star - 1).end;

  std::vector<TokenRecord> out;
  std::size_t pos = 0;
  for (const auto& tok : source.tokens) {
    if (pos + tok.token.size() > prefix_end) break;
    out.push_back(tok);
    pos += tok.token.size();
  }
  // A source token straddling the end of step t_star cannot be kept whole;
  // its in-step bytes travel with the synthetic delimiter token.
  TokenRecord join{text.substr(pos, prefix_end - pos) + std::string(delimiter), 0.0, 0.0};
  out.push_back(std::move(join));
  out.insert(out.end(), continuation.begin(), continuation.end());
  return out;
}

void GearConfig::validate() const {
  if (paths_per_question < 1 || candidates_n < 1) throw Error(ErrorCode::Config, "gear budgets must be >= 1");
}

json to_json(const RepairReport& r) {
  return {{"question_id", r.question_id}, {"paths_tried", r.paths_tried}, {"candidates", r.candidates},
          {"successes", r.successes},     {"fallbacks", r.fallbacks},     {"routed_to_hint", r.routed_to_hint},
          {"incomplete", r.incomplete},   {"note", r.note}};
}

RepairReport repair_report_from_json(const json& j) {
  RepairReport r;
  r.question_id = j.at("question_id").get<std::string>();
  r.paths_tried = j.value("paths_tried", std::size_t{0});
  r.candidates = j.value("candidates", std::size_t{0});
  r.successes = j.value("successes", std::size_t{0});
  r.fallbacks = j.value("fallbacks", std::size_t{0});
  r.routed_to_hint = j.value("routed_to_hint", false);
  r.incomplete = j.value("incomplete", false);
  r.note = j.value("note", std::string());
  return r;
}

namespace {

struct Job {
  std::size_t target;
  Trajectory source;
  std::string source_digest;
  Breakpoint bp;
  std::string prompt;
};

}  // namespace

RepairOutcome run_repair(std::span<const RepairTarget> targets, const GearConfig& config,
                         const SamplingParams& params, const SamplingContext& ctx) {
  config.validate();
  params.validate();
  if (!ctx.backend) throw Error(ErrorCode::Config, "sampling context has no backend");

  RepairOutcome out;
  out.reports.resize(targets.size());
  std::vector<std::pair<std::size_t, Trajectory>> eligible;
  std::vector<EntropyTrace> traces;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& tg = targets[i];
    if (tg.label.label != Difficulty::ExtremelyHard && !tg.forwarded) {
      throw Error(ErrorCode::Precondition, "question " + tg.question.id + " is not eligible for repair");
    }
    auto& rep = out.reports[i];
    rep.question_id = tg.question.id;
    const auto paths = select_incorrect_paths(tg.trajectories, config.paths_per_question);
    if (paths.empty()) {
      rep.note = "no incorrect paths stored";
      continue;
    }
    for (const auto& p : paths) {
      auto trace = entropy_trace(p);
      if (!trace) {
        ++rep.fallbacks;
        continue;
      }
      eligible.emplace_back(i, p);
      traces.push_back(std::move(*trace));
    }
  }

  const auto breakpoints = kernels::parallel::find_breakpoints(traces);
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < eligible.size(); ++e) {
    auto& [i, p] = eligible[e];
    auto& rep = out.reports[i];
    if (!breakpoints[e]) {
      ++rep.fallbacks;
      continue;
    }
    const auto& bp = *breakpoints[e];
    const auto prefix = join_steps(std::span<const Step>(p.steps).first(bp.t_star));
    auto prompt = build_repair_prompt(targets[i].question, prefix, ctx.templates);
    auto d = digest(p);
    jobs.push_back({i, std::move(p), std::move(d), bp, std::move(prompt)});
    ++rep.paths_tried;
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto& rep = out.reports[i];
    if (rep.paths_tried == 0 && rep.fallbacks > 0) {
      rep.routed_to_hint = true;
      rep.note = "all selected paths ineligible for local repair";
    }
  }

  const auto per = static_cast<std::size_t>(config.candidates_n);
  std::vector<Draw> draws(jobs.size() * per);
  parallel_for(draws.size(), ctx.parallelism, [&](std::size_t idx) {
    const auto& job = jobs[idx / per];
    const auto& q = targets[job.target].question;
    const std::uint64_t cand = idx % per;
    const std::string seed_key = "repair:" + q.id + ":" + job.source_digest;
    const std::uint64_t seed = derive_seed(ctx.run_seed, seed_key, cand);
    const std::string key = q.id + ":" + job.source_digest + ":" + std::to_string(cand);
    draws[idx] = resumable_draw(ctx, "repair", key, q.id, cand, seed, [&] {
      SamplingParams p = params;
      p.n = 1;
      p.seed = seed;
      auto gens = ctx.backend->sample(job.prompt, p);
      if (gens.size() != 1) throw Error(ErrorCode::BackendUnavailable, "expected one generation");
      auto tokens = stitch_tokens(job.source, job.bp.t_star, gens[0].tokens);
      auto t = make_trajectory(q, Provenance::Repair, std::move(tokens), cand, seed, p, ctx.patterns);
      t.entropy_approximate = job.source.entropy_approximate || gens[0].entropy_approximate;
      t.repair = RepairOrigin{job.source_digest, job.bp.t_star, job.bp.gradient_at_peak};
      return t;
    });
  });

  for (std::size_t idx = 0; idx < draws.size(); ++idx) {
    auto& rep = out.reports[jobs[idx / per].target];
    auto& d = draws[idx];
    if (!d.trajectory) {
      rep.incomplete = true;
      continue;
    }
    ++rep.candidates;
    if (d.trajectory->correct.value_or(false)) {
      ++rep.successes;
      out.repairs.push_back(std::move(*d.trajectory));
    }
  }
  return out;
}

}  // namespace heal
