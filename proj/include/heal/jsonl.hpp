#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace heal {

using json = nlohmann::json;

/// Reads one JSON object per line. Blank lines are skipped. A malformed final
/// line (a write torn by an interrupted process) is dropped; a malformed line
/// anywhere else is an Io error.
std::vector<json> read_jsonl(const std::filesystem::path& path);

// Serializes records one per line, newline-terminated.
std::string to_jsonl(const std::vector<json>& records);

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written output.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// Hex SHA-256 of the file contents.
std::string file_digest(const std::filesystem::path& path);

/// Append-only JSONL log with a single serialized writer. Each append is
/// flushed before returning.
class JsonlAppender {
 public:
  explicit JsonlAppender(const std::filesystem::path& path);

  void append(const json& record);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace heal
