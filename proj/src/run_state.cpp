#include "heal/run_state.hpp"

#include "heal/error.hpp"

namespace heal {

namespace fs = std::filesystem;

RunStore::RunStore(fs::path run_dir) : run_dir_(std::move(run_dir)) {
  const auto state_dir = run_dir_ / "state";
  if (fs::exists(state_dir)) {
    for (const auto& entry : fs::directory_iterator(state_dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("records_", 0) != 0 || entry.path().extension() != ".jsonl") continue;
      const auto phase = name.substr(8, name.size() - 8 - 6);
      auto& table = records_[phase];
      for (auto& rec : read_jsonl(entry.path())) table[rec.at("key").get<std::string>()] = std::move(rec["payload"]);
    }
  }
  state_log_ = std::make_unique<JsonlAppender>(state_dir / "run_state.jsonl");
}

std::optional<json> RunStore::lookup(const std::string& phase, const std::string& key) const {
  std::lock_guard lock(mu_);
  const auto p = records_.find(phase);
  if (p == records_.end()) return std::nullopt;
  const auto r = p->second.find(key);
  if (r == p->second.end()) return std::nullopt;
  return r->second;
}

JsonlAppender& RunStore::records_for(const std::string& phase) {
  auto& slot = appenders_[phase];
  if (!slot) slot = std::make_unique<JsonlAppender>(run_dir_ / "state" / ("records_" + phase + ".jsonl"));
  return *slot;
}

void RunStore::record(const std::string& phase, const std::string& key, const json& payload, const Entry& entry) {
  std::lock_guard lock(mu_);
  if (budget_ && appended_ >= *budget_) throw Error(ErrorCode::Interrupted, "stopped after " + std::to_string(appended_) + " records");
  records_for(phase).append({{"key", key}, {"payload", payload}});
  state_log_->append({{"phase", phase},
                      {"key", key},
                      {"question_id", entry.question_id},
                      {"attempt", entry.attempt},
                      {"digest", entry.digest},
                      {"verdict", entry.verdict}});
  records_[phase][key] = payload;
  ++appended_;
}

void RunStore::note(const std::string& phase, const Entry& entry) {
  std::lock_guard lock(mu_);
  state_log_->append({{"phase", phase},
                      {"key", entry.question_id},
                      {"question_id", entry.question_id},
                      {"attempt", entry.attempt},
                      {"digest", entry.digest},
                      {"verdict", entry.verdict}});
}

void RunStore::stop_after(std::optional<std::size_t> n) {
  std::lock_guard lock(mu_);
  budget_ = n ? std::optional<std::size_t>(appended_ + *n) : std::nullopt;
}

std::size_t RunStore::appended() const {
  std::lock_guard lock(mu_);
  return appended_;
}

}  // namespace heal
