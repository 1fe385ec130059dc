#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "heal/jsonl.hpp"

namespace heal {

/// Durable per-request results for one run directory.
///
/// state/records_<phase>.jsonl holds {key, payload} lines and
/// state/run_state.jsonl the matching {phase, key, question_id, attempt,
/// digest, verdict} entries. Both are append-only, so an interrupted run can
/// be resumed by reopening the store. Appends are serialized.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path run_dir);

  std::optional<json> lookup(const std::string& phase, const std::string& key) const;

  struct Entry {
    std::string question_id;
    std::uint64_t attempt = 0;
    std::string digest;
    std::string verdict;
  };

  void record(const std::string& phase, const std::string& key, const json& payload, const Entry& entry);

  // Marks an event (e.g. an incomplete question) without a payload.
  void note(const std::string& phase, const Entry& entry);

  /// After `n` further records the store throws Error(Interrupted); used to
  /// simulate a process killed mid-phase.
  void stop_after(std::optional<std::size_t> n);

  std::size_t appended() const;
  const std::filesystem::path& run_dir() const { return run_dir_; }

 private:
  JsonlAppender& records_for(const std::string& phase);

  std::filesystem::path run_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::map<std::string, json>> records_;
  std::map<std::string, std::unique_ptr<JsonlAppender>> appenders_;
  std::unique_ptr<JsonlAppender> state_log_;
  std::optional<std::size_t> budget_;
  std::size_t appended_ = 0;
};

}  // namespace heal
