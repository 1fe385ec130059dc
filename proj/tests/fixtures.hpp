#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "heal/config.hpp"
#include "heal/jsonl.hpp"
#include "heal/mock_backend.hpp"
#include "heal/trajectory.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("heal_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// One token per byte with fixed nll and entropy.
inline std::vector<heal::TokenRecord> char_tokens(std::string_view text, double nll = 0.5, double entropy = 1.0) {
  std::vector<heal::TokenRecord> out;
  for (char c : text) out.push_back({std::string(1, c), nll, entropy});
  return out;
}

// Questions whose text never contains the gold answer.
inline std::vector<heal::Question> questions(int n, const std::string& prefix = "q") {
  std::vector<heal::Question> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({prefix + std::to_string(i),
                   "Evaluate item " + std::to_string(i) + " of the worksheet and give the integer result.",
                   std::to_string(1000 + 37 * i)});
  }
  return out;
}

inline void write_questions(const fs::path& p, const std::vector<heal::Question>& qs) {
  std::vector<heal::json> rows;
  for (const auto& q : qs) rows.push_back(heal::to_json(q));
  heal::write_file_atomic(p, heal::to_jsonl(rows));
}

inline heal::MockModelSpec teacher(const std::vector<heal::Question>& qs, heal::MockProfile profile = {}) {
  heal::MockModelSpec s;
  s.questions = qs;
  s.default_profile = profile;
  s.seed = 5;
  return s;
}

// Short trajectories keep large sampling tests fast.
inline heal::MockProfile short_profile(double p0, double p1 = 0.8, double p2 = 0.5) {
  heal::MockProfile p;
  p.p0 = p0;
  p.p1 = p1;
  p.p2 = p2;
  p.min_steps = 3;
  p.max_steps = 5;
  p.min_step_chars = 2;
  p.max_step_chars = 4;
  return p;
}

inline heal::RetryPolicy no_wait(int attempts = 3) {
  heal::RetryPolicy r;
  r.max_attempts = attempts;
  r.initial_backoff = std::chrono::milliseconds(0);
  r.max_backoff = std::chrono::milliseconds(0);
  return r;
}

/// Small mock configuration exercising every phase: easy, hard (with
/// occasional shortcut steps) and extremely hard questions.
inline heal::RunConfig small_run(const fs::path& dir, int n_questions = 8, int budget = 8) {
  heal::RunConfig c;
  c.seed = 99;
  c.paths.questions = (dir / "questions.jsonl").string();
  c.paths.run_dir = (dir / "run").string();
  write_questions(c.paths.questions, questions(n_questions));
  c.backend.kind = "mock";
  c.backend.parallelism = 2;
  c.backend.retry = no_wait();
  c.elicitation = {budget, budget};
  c.gear = {3, 4};
  heal::MockProfile easy;
  easy.p0 = 0.9;
  heal::MockProfile hard;
  hard.p0 = 0.3;
  hard.p1 = 0.7;
  hard.leak_rate = 0.1;
  heal::MockProfile extreme;
  extreme.p0 = 0.0;
  extreme.p1 = 0.3;
  extreme.p2 = 0.6;
  extreme.leak_rate = 0.1;
  extreme.spike_step = 3;
  c.backend.mock.seed = 3;
  c.backend.mock.mix = {{0.35, easy}, {0.35, hard}, {0.3, extreme}};
  return c;
}

inline std::string slurp(const fs::path& p) { return heal::read_file(p); }

}  // namespace fixtures
