#include "heal/kernels.hpp"

#include <cmath>
#include <exception>

#include "heal/error.hpp"

namespace heal::kernels {

namespace {

std::optional<Breakpoint> breakpoint_or_none(const EntropyTrace& trace) {
  try {
    return find_breakpoint(trace);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::WindowEmpty) return std::nullopt;
    throw;
  }
}

std::optional<double> score_at(const SuspicionReport& r, double epsilon) {
  if (r.unscorable || r.steps.empty()) return std::nullopt;
  double best = -INFINITY;
  for (const auto& s : r.steps) best = std::max(best, suspicion_ratio(s.ppl, s.answer_nll, epsilon));
  return best;
}

std::vector<StepStats> stats_of(const Trajectory& t) {
  std::vector<StepStats> out;
  out.reserve(t.steps.size());
  for (const auto& step : t.steps) {
    StepStats s;
    const auto n = step.tokens.size();
    if (n == 0) {
      out.push_back(s);
      continue;
    }
    double nll = 0.0;
    double ent = 0.0;
    bool have_entropy = true;
    for (std::size_t i = step.tokens.begin; i < step.tokens.end; ++i) {
      nll += t.tokens[i].nll;
      if (t.tokens[i].entropy) {
        ent += *t.tokens[i].entropy;
      } else {
        have_entropy = false;
      }
    }
    s.ppl = std::exp(nll / static_cast<double>(n));
    if (have_entropy) s.mean_entropy = ent / static_cast<double>(n);
    out.push_back(s);
  }
  return out;
}

// Runs body(i) for every i under OpenMP and rethrows the first failure after
// the loop, since exceptions may not cross the parallel region.
template <typename Body>
void omp_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

namespace serial {

std::vector<std::optional<Breakpoint>> find_breakpoints(std::span<const EntropyTrace> traces) {
  std::vector<std::optional<Breakpoint>> out(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) out[i] = breakpoint_or_none(traces[i]);
  return out;
}

std::vector<std::optional<double>> anomaly_scores(std::span<const SuspicionReport> reports, double epsilon) {
  std::vector<std::optional<double>> out(reports.size());
  for (std::size_t i = 0; i < reports.size(); ++i) out[i] = score_at(reports[i], epsilon);
  return out;
}

std::vector<std::vector<StepStats>> step_statistics(std::span<const Trajectory> trajectories) {
  std::vector<std::vector<StepStats>> out(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) out[i] = stats_of(trajectories[i]);
  return out;
}

}  // namespace serial

namespace parallel {

std::vector<std::optional<Breakpoint>> find_breakpoints(std::span<const EntropyTrace> traces) {
  std::vector<std::optional<Breakpoint>> out(traces.size());
  omp_for(traces.size(), [&](std::size_t i) { out[i] = breakpoint_or_none(traces[i]); });
  return out;
}

std::vector<std::optional<double>> anomaly_scores(std::span<const SuspicionReport> reports, double epsilon) {
  std::vector<std::optional<double>> out(reports.size());
  omp_for(reports.size(), [&](std::size_t i) { out[i] = score_at(reports[i], epsilon); });
  return out;
}

std::vector<std::vector<StepStats>> step_statistics(std::span<const Trajectory> trajectories) {
  std::vector<std::vector<StepStats>> out(trajectories.size());
  omp_for(trajectories.size(), [&](std::size_t i) { out[i] = stats_of(trajectories[i]); });
  return out;
}

}  // namespace parallel

}  // namespace heal::kernels
