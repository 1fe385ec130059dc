#include "heal/pace.hpp"

#include <cmath>
#include <numeric>

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/jsonl.hpp"
#include "heal/rng.hpp"

namespace heal {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::I: return "I";
    case Stage::II: return "II";
    case Stage::III: return "III";
  }
  return "I";
}

Stage stage_from_string(std::string_view s) {
  if (s == "I" || s == "1") return Stage::I;
  if (s == "II" || s == "2") return Stage::II;
  if (s == "III" || s == "3") return Stage::III;
  throw Error(ErrorCode::Config, "stage must be I, II or III");
}

TrainingRecord to_training_record(const Trajectory& t, const Question& q) {
  if (t.question_id != q.id) throw Error(ErrorCode::Precondition, "trajectory belongs to " + t.question_id);
  const std::string text = t.text();
  const auto ranges = step_ranges(text);
  if (ranges.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no steps");
  const std::size_t split = ranges.back().begin;
  return {q.text, text.substr(0, split), text.substr(split), t.provenance, q.id};
}

json to_json(const TrainingRecord& r) {
  return {{"prompt", r.prompt},
          {"rationale", r.rationale},
          {"response", r.response},
          {"provenance", std::string(to_string(r.provenance))},
          {"source_id", r.source_id}};
}

TrainingRecord training_record_from_json(const json& j) {
  return {j.at("prompt").get<std::string>(), j.at("rationale").get<std::string>(),
          j.at("response").get<std::string>(), provenance_from_string(j.at("provenance").get<std::string>()),
          j.at("source_id").get<std::string>()};
}

void PaceConfig::validate() const {
  if (upsample_repair < 1) throw Error(ErrorCode::Config, "upsample_repair must be >= 1");
}

json to_json(const StageManifest& m) {
  json sources = json::array();
  for (const auto& s : m.sources) sources.push_back({{"name", s.name}, {"count", s.count}, {"upsample", s.upsample}});
  return {{"stage", std::string(to_string(m.stage))},
          {"sources", std::move(sources)},
          {"record_count", m.record_count},
          {"output_file", m.output_file},
          {"output_digest", m.output_digest},
          {"shuffle_seed", m.shuffle_seed},
          {"trainer",
           {{"epochs", m.trainer.epochs},
            {"learning_rate", m.trainer.learning_rate},
            {"global_batch_size", m.trainer.global_batch_size}}}};
}

StageManifest stage_manifest_from_json(const json& j) {
  StageManifest m;
  m.stage = stage_from_string(j.at("stage").get<std::string>());
  for (const auto& s : j.at("sources")) {
    m.sources.push_back({s.at("name").get<std::string>(), s.at("count").get<std::size_t>(), s.at("upsample").get<int>()});
  }
  m.record_count = j.at("record_count").get<std::size_t>();
  m.output_file = j.at("output_file").get<std::string>();
  m.output_digest = j.at("output_digest").get<std::string>();
  m.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  const auto& t = j.at("trainer");
  m.trainer = {t.at("epochs").get<int>(), t.at("learning_rate").get<double>(), t.at("global_batch_size").get<int>()};
  return m;
}

StageOutput assemble_stage(Stage stage, std::optional<std::span<const TrainingRecord>> d_base,
                           std::optional<std::span<const TrainingRecord>> d_hint,
                           std::optional<std::span<const TrainingRecord>> d_repair, const PaceConfig& config) {
  config.validate();
  StageOutput out;
  auto& m = out.manifest;
  m.stage = stage;
  m.shuffle_seed = config.shuffle_seed;
  m.trainer = config.trainer;
  m.output_file = "stage_" + std::string(to_string(stage)) + ".jsonl";

  auto add = [&](const char* name, const std::optional<std::span<const TrainingRecord>>& set, int upsample) {
    if (!set) throw Error(ErrorCode::StageIncomplete, "stage " + std::string(to_string(stage)) + " needs " + name);
    m.sources.push_back({name, set->size(), upsample});
    for (int u = 0; u < upsample; ++u) out.records.insert(out.records.end(), set->begin(), set->end());
  };
  add("base", d_base, 1);
  if (stage != Stage::I) add("hint", d_hint, 1);
  if (stage == Stage::III) add("repair", d_repair, config.upsample_repair);

  SeededRng rng(config.shuffle_seed);
  for (std::size_t i = out.records.size(); i > 1; --i) {
    std::swap(out.records[i - 1], out.records[rng.below(i)]);
  }
  for (const auto& r : out.records) {
    out.content += to_json(r).dump();
    out.content.push_back('\n');
  }
  m.record_count = out.records.size();
  m.output_digest = sha256_hex(out.content);
  return out;
}

void write_stage(const std::filesystem::path& dir, const StageOutput& out) {
  write_file_atomic(dir / out.manifest.output_file, out.content);
  write_file_atomic(dir / ("stage_" + std::string(to_string(out.manifest.stage)) + ".manifest.json"),
                    to_json(out.manifest).dump(2) + "\n");
}

LossDecomposition audit_loss_decomposition(const TrainingRecord& r, const Backend& backend) {
  if (!backend.capabilities().scoring) throw Error(ErrorCode::CapabilityMissing, "backend cannot force-score");
  const std::string ctx = r.prompt + std::string(kStepDelimiter);
  const auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
  LossDecomposition d;
  d.reasoning = sum(backend.score_continuation(ctx, r.rationale));
  d.response = sum(backend.score_continuation(ctx + r.rationale, r.response));
  d.total = sum(backend.score_continuation(ctx, r.rationale + r.response));
  if (std::abs(d.reasoning + d.response - d.total) > 1e-6) {
    throw Error(ErrorCode::DecompositionMismatch, "reasoning " + std::to_string(d.reasoning) + " + response " +
                                                      std::to_string(d.response) + " != total " +
                                                      std::to_string(d.total));
  }
  return d;
}

std::vector<LeakFinding> scan_for_leaks(std::span<const TrainingRecord> records,
                                        const std::map<std::string, Question>& questions,
                                        std::span<const std::string> markers) {
  std::vector<LeakFinding> found;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (const auto q = questions.find(r.source_id); q != questions.end()) {
      const auto& gold = q->second.gold_answer;
      if (!gold.empty() && r.prompt.find(gold) != std::string::npos) found.push_back({i, r.source_id, "prompt", gold});
    } else {
      found.push_back({i, r.source_id, "source_id", "unknown question"});
    }
    for (const auto& mk : markers) {
      if (mk.empty()) continue;
      for (const auto& [field, text] : {std::pair<const char*, const std::string*>{"prompt", &r.prompt},
                                        {"rationale", &r.rationale},
                                        {"response", &r.response}}) {
        if (text->find(mk) != std::string::npos) found.push_back({i, r.source_id, field, mk});
      }
    }
  }
  return found;
}

}  // namespace heal
