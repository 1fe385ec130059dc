#include "heal/pure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "heal/error.hpp"
#include "heal/parallel.hpp"

namespace heal {

void FilterConfig::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw Error(ErrorCode::Config, "lambda must be in [0,1)");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::Config, "epsilon must be > 0");
}

std::string_view to_string(FilterConfig::Mode m) { return m == FilterConfig::Mode::Joint ? "joint" : "per_set"; }

FilterConfig::Mode filter_mode_from_string(std::string_view s) {
  if (s == "per_set") return FilterConfig::Mode::PerSet;
  if (s == "joint") return FilterConfig::Mode::Joint;
  throw Error(ErrorCode::Config, "pure.mode must be per_set or joint");
}

double suspicion_ratio(double ppl, double answer_nll, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::Precondition, "epsilon must be > 0");
  return ppl / (answer_nll + epsilon);
}

json to_json(const SuspicionReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back({{"t", s.t}, {"ppl", s.ppl}, {"answer_nll", s.answer_nll}});
  json ratios = json::array();
  for (const auto& [t, v] : r.ratios) ratios.push_back({t, v});
  return {{"question_id", r.question_id},
          {"digest", r.trajectory_digest},
          {"provenance", std::string(to_string(r.provenance))},
          {"length", r.length},
          {"steps", std::move(steps)},
          {"ratios", std::move(ratios)},
          {"anomaly_score", r.anomaly_score ? json(*r.anomaly_score) : json(nullptr)},
          {"unscorable", r.unscorable},
          {"note", r.note}};
}

SuspicionReport suspicion_report_from_json(const json& j) {
  SuspicionReport r;
  r.question_id = j.at("question_id").get<std::string>();
  r.trajectory_digest = j.at("digest").get<std::string>();
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  r.length = j.value("length", std::size_t{0});
  for (const auto& s : j.at("steps")) {
    r.steps.push_back({s.at("t").get<std::size_t>(), s.at("ppl").get<double>(), s.at("answer_nll").get<double>()});
  }
  for (const auto& p : j.at("ratios")) r.ratios.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<double>());
  if (j.contains("anomaly_score") && !j["anomaly_score"].is_null()) r.anomaly_score = j["anomaly_score"].get<double>();
  r.unscorable = j.value("unscorable", false);
  r.note = j.value("note", std::string());
  return r;
}

std::vector<StepScore> score_steps(const Trajectory& t, const Question& q, const SamplingContext& ctx,
                                   const FilterConfig& config) {
  if (!ctx.backend) throw Error(ErrorCode::Config, "scoring context has no backend");
  if (!ctx.backend->capabilities().scoring) throw Error(ErrorCode::CapabilityMissing, "backend cannot force-score");
  const std::size_t L = t.steps.size();
  if (L < 3) throw Error(ErrorCode::Unscorable, "trajectory has " + std::to_string(L) + " steps, need >= 3");

  const std::string base = build_base_prompt(q, ctx.templates);
  const auto score = [&](const std::string& context, const std::string& cont) {
    return with_retries(ctx.retry, [&] { return ctx.backend->score_continuation(context, cont); });
  };

  std::vector<StepScore> out;
  out.reserve(L - 2);
  std::string prior;  // steps < t joined, without a trailing delimiter
  for (std::size_t t1 = 1; t1 + 2 <= L; ++t1) {
    const auto& step = t.steps[t1 - 1];
    const std::string context = t1 == 1 ? base : base + prior + std::string(kStepDelimiter);
    const auto nll = score(context, step.text);
    double ppl = 1.0;
    if (!nll.empty()) ppl = std::exp(std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(nll.size()));

    if (t1 > 1) prior += kStepDelimiter;
    prior += step.text;
    const auto ans = score(base + prior + std::string(kStepDelimiter) + config.answer_prefix, q.gold_answer);
    out.push_back({t1, ppl, std::accumulate(ans.begin(), ans.end(), 0.0)});
  }
  return out;
}

void apply_epsilon(SuspicionReport& r, double epsilon) {
  r.ratios.clear();
  std::vector<double> values;
  for (const auto& s : r.steps) {
    const double v = suspicion_ratio(s.ppl, s.answer_nll, epsilon);
    r.ratios.emplace_back(s.t, v);
    values.push_back(v);
  }
  r.anomaly_score.reset();
  if (!values.empty()) r.anomaly_score = anomaly_score(values);
}

SuspicionReport suspicion_curve(const Trajectory& t, const Question& q, const SamplingContext& ctx,
                                const FilterConfig& config) {
  config.validate();
  SuspicionReport r;
  r.question_id = t.question_id;
  r.trajectory_digest = digest(t);
  r.provenance = t.provenance;
  r.length = t.steps.size();
  r.steps = score_steps(t, q, ctx, config);
  apply_epsilon(r, config.epsilon);
  return r;
}

double anomaly_score(std::span<const double> ratios) {
  if (ratios.empty()) throw Error(ErrorCode::Unscorable, "no ratios to score");
  return *std::max_element(ratios.begin(), ratios.end());
}

std::vector<SuspicionReport> score_trajectories(std::span<const Trajectory> trajectories,
                                                const std::map<std::string, Question>& questions,
                                                const SamplingContext& ctx, const FilterConfig& config) {
  config.validate();
  std::vector<SuspicionReport> out(trajectories.size());
  parallel_for(trajectories.size(), ctx.parallelism, [&](std::size_t i) {
    const auto& t = trajectories[i];
    const auto q = questions.find(t.question_id);
    if (q == questions.end()) throw Error(ErrorCode::Precondition, "unknown question " + t.question_id);
    try {
      out[i] = suspicion_curve(t, q->second, ctx, config);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unscorable) throw;
      auto& r = out[i];
      r.question_id = t.question_id;
      r.trajectory_digest = digest(t);
      r.provenance = t.provenance;
      r.length = t.steps.size();
      r.unscorable = true;
      r.note = e.what();
    }
  });
  return out;
}

std::size_t prune_count(double lambda, std::size_t n) {
  return static_cast<std::size_t>(std::floor(lambda * static_cast<double>(n) + 1e-9));
}

FilterResult filter_top_lambda(std::span<const SuspicionReport> reports, double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw Error(ErrorCode::Config, "lambda must be in [0,1)");
  std::vector<std::size_t> ranked;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].unscorable && reports[i].anomaly_score) ranked.push_back(i);
  }
  std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    const double sa = *reports[a].anomaly_score;
    const double sb = *reports[b].anomaly_score;
    if (sa != sb) return sa > sb;
    return reports[a].trajectory_digest < reports[b].trajectory_digest;
  });
  const std::size_t k = prune_count(lambda, ranked.size());
  std::vector<bool> drop(reports.size(), false);
  FilterResult out;
  for (std::size_t i = 0; i < k; ++i) {
    drop[ranked[i]] = true;
    out.pruned.push_back(reports[ranked[i]]);
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!drop[i]) out.kept.push_back(reports[i]);
  }
  return out;
}

}  // namespace heal
