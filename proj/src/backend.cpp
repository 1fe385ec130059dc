#include "heal/backend.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "heal/error.hpp"

namespace heal {

double entropy_estimate(std::span<const std::pair<std::string, double>> topk_logprobs) {
  if (topk_logprobs.empty()) throw Error(ErrorCode::MalformedLogprobs, "empty top-k list");
  double mass = 0.0;
  double h = 0.0;
  for (const auto& [tok, lp] : topk_logprobs) {
    if (!(lp <= 1e-12)) throw Error(ErrorCode::MalformedLogprobs, "logprob > 0 for token '" + tok + "'");
    const double p = std::exp(std::min(lp, 0.0));
    mass += p;
    if (p > 0.0) h -= p * lp;
  }
  if (mass > 1.0 + 1e-6) {
    throw Error(ErrorCode::MalformedLogprobs, "top-k probabilities sum to " + std::to_string(mass));
  }
  const double residual = 1.0 - mass;
  if (residual > 1e-6) h -= residual * std::log(residual);
  return std::max(h, 0.0);
}

void backoff_sleep(const RetryPolicy& policy, int attempt) {
  double ms = static_cast<double>(policy.initial_backoff.count()) * std::pow(policy.multiplier, attempt - 1);
  ms = std::min(ms, static_cast<double>(policy.max_backoff.count()));
  if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(ms)));
}

}  // namespace heal
