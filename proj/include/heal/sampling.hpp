#pragma once

#include <cstdint>
#include <optional>

#include "json.hpp"

namespace heal {

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 0.8;
  int max_tokens = 32768;
  int n = 1;
  std::optional<std::uint64_t> seed;

  // Throws Error(Precondition) on out-of-range values.
  void validate() const;

  friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

nlohmann::json to_json(const SamplingParams& p);
SamplingParams sampling_params_from_json(const nlohmann::json& j);

}  // namespace heal
