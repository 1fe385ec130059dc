#include "heal/jsonl.hpp"

#include <unistd.h>

#include <atomic>
#include <sstream>

#include "heal/digest.hpp"
#include "heal/error.hpp"

namespace heal {

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }

  std::vector<json> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(json::parse(lines[i]));
    } catch (const json::parse_error& e) {
      if (i + 1 == lines.size()) break;
      throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Unique sibling name so concurrent writers of the same path never share a temp file.
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_digest(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

JsonlAppender::JsonlAppender(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Drop a torn trailing line so later appends do not glue onto it.
  if (std::filesystem::exists(path)) {
    const std::string existing = read_file(path);
    if (!existing.empty() && existing.back() != '\n') {
      const auto keep = existing.rfind('\n');
      std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
    }
  }
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::Io, "cannot append to " + path.string());
}

void JsonlAppender::append(const json& record) {
  std::lock_guard lock(mu_);
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::Io, "append failed");
}

}  // namespace heal
