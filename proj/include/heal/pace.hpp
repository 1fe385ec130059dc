#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heal/backend.hpp"
#include "heal/trajectory.hpp"

namespace heal {

enum class Stage { I, II, III };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

/// Student-facing example. The prompt is always the clean question text;
/// rationale + response reproduces the trajectory text byte for byte, with the
/// final step as the response.
struct TrainingRecord {
  std::string prompt;
  std::string rationale;
  std::string response;
  Provenance provenance = Provenance::Base;
  std::string source_id;
  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

TrainingRecord to_training_record(const Trajectory& t, const Question& q);
json to_json(const TrainingRecord& r);
TrainingRecord training_record_from_json(const json& j);

// Pass-through settings for the downstream trainer; nothing here trains.
struct TrainerMetadata {
  int epochs = 5;
  double learning_rate = 1e-5;
  int global_batch_size = 8;
  friend bool operator==(const TrainerMetadata&, const TrainerMetadata&) = default;
};

struct PaceConfig {
  int upsample_repair = 1;
  std::uint64_t shuffle_seed = 0;
  TrainerMetadata trainer;
  void validate() const;
};

struct StageSource {
  std::string name;
  std::size_t count = 0;
  int upsample = 1;
};

struct StageManifest {
  Stage stage = Stage::I;
  std::vector<StageSource> sources;
  std::size_t record_count = 0;
  std::string output_file;
  std::string output_digest;
  std::uint64_t shuffle_seed = 0;
  TrainerMetadata trainer;
};

json to_json(const StageManifest& m);
StageManifest stage_manifest_from_json(const json& j);

struct StageOutput {
  StageManifest manifest;
  std::vector<TrainingRecord> records;  // shuffled emission order
  std::string content;                  // JSONL bytes
};

/// Stage I = base, II = base + hint, III = base + hint + repair repeated
/// upsample_repair times, shuffled by the seed. A source the stage needs but
/// that is not supplied (nullopt) raises StageIncomplete.
StageOutput assemble_stage(Stage stage, std::optional<std::span<const TrainingRecord>> d_base,
                           std::optional<std::span<const TrainingRecord>> d_hint,
                           std::optional<std::span<const TrainingRecord>> d_repair, const PaceConfig& config);

// Writes stage_<X>.jsonl and stage_<X>.manifest.json under `dir`.
void write_stage(const std::filesystem::path& dir, const StageOutput& out);

struct LossDecomposition {
  double reasoning = 0.0;
  double response = 0.0;
  double total = 0.0;
};

/// NLL of the rationale given the prompt, of the response given prompt and
/// rationale, and of both together. Throws DecompositionMismatch when the
/// parts miss the total by more than 1e-6.
LossDecomposition audit_loss_decomposition(const TrainingRecord& r, const Backend& backend);

struct LeakFinding {
  std::size_t record = 0;
  std::string source_id;
  std::string field;
  std::string match;
};

/// Records whose prompt contains the gold answer, or any field of which
/// contains an answer-conditioning marker.
std::vector<LeakFinding> scan_for_leaks(std::span<const TrainingRecord> records,
                                        const std::map<std::string, Question>& questions,
                                        std::span<const std::string> markers);

}  // namespace heal
