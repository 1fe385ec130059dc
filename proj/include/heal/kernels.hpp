#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "heal/gear.hpp"
#include "heal/pure.hpp"

// Batch versions of the per-trajectory analyses. `serial` is the reference;
// `parallel` spreads the batch over OpenMP threads and must agree with it
// element for element.
namespace heal::kernels {

struct StepStats {
  double ppl = 1.0;
  std::optional<double> mean_entropy;
  friend bool operator==(const StepStats&, const StepStats&) = default;
};

namespace serial {

// nullopt where the trace is too short for the window.
std::vector<std::optional<Breakpoint>> find_breakpoints(std::span<const EntropyTrace> traces);

// Anomaly score of each report recomputed at `epsilon`; nullopt if unscorable.
std::vector<std::optional<double>> anomaly_scores(std::span<const SuspicionReport> reports, double epsilon);

// Per-step PPL and mean entropy recomputed from token records.
std::vector<std::vector<StepStats>> step_statistics(std::span<const Trajectory> trajectories);

}  // namespace serial

namespace parallel {

std::vector<std::optional<Breakpoint>> find_breakpoints(std::span<const EntropyTrace> traces);
std::vector<std::optional<double>> anomaly_scores(std::span<const SuspicionReport> reports, double epsilon);
std::vector<std::vector<StepStats>> step_statistics(std::span<const Trajectory> trajectories);

}  // namespace parallel

}  // namespace heal::kernels
