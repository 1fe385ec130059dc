#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heal/error.hpp"
#include "heal/sampling.hpp"
#include "heal/trajectory.hpp"

namespace heal {

struct BackendCapabilities {
  bool exact_entropy = false;
  // Can return per-token NLL of a forced continuation.
  bool scoring = false;
  std::size_t max_context = 0;
};

struct Generation {
  std::vector<TokenRecord> tokens;
  bool entropy_approximate = false;
  std::string finish_reason = "stop";
};

using TopLogprobs = std::vector<std::pair<std::string, double>>;

/// Text-generation and scoring engine. Implementations must be safe to call
/// from several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendCapabilities capabilities() const = 0;

  // Returns params.n generations for `prompt`.
  virtual std::vector<Generation> sample(std::string_view prompt, const SamplingParams& params) const = 0;

  /// Per-token NLL (nats) of `continuation` given `context`. Throws
  /// Error(CapabilityMissing) when the engine cannot force-score.
  virtual std::vector<double> score_continuation(std::string_view context,
                                                 std::string_view continuation) const = 0;
};

/// Entropy (nats) of a distribution known only through its top-k entries.
/// The residual mass r = 1 - sum(p_i) is folded in as one pseudo-token
/// contributing -r ln r when r > 1e-6. Grouping the tail this way can only
/// lower entropy, so the estimate never exceeds the exact value.
double entropy_estimate(std::span<const std::pair<std::string, double>> topk_logprobs);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{10000};
};

// Sleeps for the backoff preceding retry number `attempt` (1-based).
void backoff_sleep(const RetryPolicy& policy, int attempt);

/// Runs `fn`, retrying with exponential backoff while it throws a retryable
/// Error. The last error is rethrown once attempts are exhausted.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (!e.retryable() || attempt >= policy.max_attempts) throw;
    }
    backoff_sleep(policy, attempt);
  }
}

}  // namespace heal
