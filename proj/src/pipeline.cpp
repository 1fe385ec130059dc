#include "heal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "heal/digest.hpp"
#include "heal/error.hpp"
#include "heal/http_backend.hpp"
#include "heal/jsonl.hpp"
#include "heal/kernels.hpp"

namespace heal {

namespace fs = std::filesystem;

std::vector<Question> load_questions(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::Config, "questions file not found: " + path.string());
  std::vector<Question> out;
  std::set<std::string> ids;
  try {
    for (const auto& j : read_jsonl(path)) {
      auto q = question_from_json(j);
      if (!ids.insert(q.id).second) throw Error(ErrorCode::Config, "duplicate question id " + q.id);
      out.push_back(std::move(q));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::Config, "questions file is empty: " + path.string());
  return out;
}

std::shared_ptr<const Backend> make_backend(const RunConfig& config, const std::vector<Question>& questions) {
  const auto& b = config.backend;
  if (b.kind == "mock") {
    MockModelSpec spec = b.mock;
    spec.questions = questions;
    spec.hint_marker = config.templates.hint_marker;
    spec.repair_marker = config.templates.repair_marker;
    spec.answer_cue = config.pure.answer_prefix;
    return std::make_shared<MockBackend>(std::move(spec));
  }
  HttpBackendConfig h;
  h.base_url = b.base_url;
  h.model = b.model;
  h.top_logprobs = b.top_logprobs;
  h.echo_scoring = b.echo_scoring;
  h.max_context = b.max_context;
  h.timeout_s = b.timeout_s;
  h.cache_dir = b.cache_dir;
  h.capabilities_override = b.capabilities_override;
  return std::make_shared<HttpBackend>(std::move(h));
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<const Backend> backend)
    : config_(std::move(config)), dir_(config_.paths.run_dir), backend_(std::move(backend)) {
  config_.validate();
  questions_ = load_questions(config_.paths.questions);
  for (const auto& q : questions_) by_id_[q.id] = q;
  if (!backend_) backend_ = make_backend(config_, questions_);
}

RunStore& Pipeline::store() {
  if (!store_) {
    store_ = std::make_unique<RunStore>(dir_);
    store_->stop_after(stop_after_);
  }
  return *store_;
}

void Pipeline::stop_after(std::optional<std::size_t> n) {
  stop_after_ = n;
  if (store_) store_->stop_after(n);
}

SamplingContext Pipeline::context() const {
  SamplingContext c;
  c.backend = backend_.get();
  c.run_seed = config_.seed;
  c.parallelism = config_.backend.parallelism;
  c.retry = config_.backend.retry;
  c.templates = config_.templates;
  c.patterns = config_.answer_patterns;
  c.store = store_.get();
  return c;
}

std::vector<Trajectory> Pipeline::read_trajectories(const std::string& name) const {
  const auto p = path(name);
  if (!fs::exists(p)) throw Error(ErrorCode::StageIncomplete, "missing " + name + "; run the producing phase first");
  std::vector<Trajectory> out;
  for (const auto& j : read_jsonl(p)) out.push_back(trajectory_from_json(j));
  return out;
}

void Pipeline::write_trajectories(const std::string& name, const std::vector<Trajectory>& ts) const {
  std::string content;
  for (const auto& t : ts) {
    content += to_json(t).dump();
    content.push_back('\n');
  }
  write_file_atomic(path(name), content);
}

std::vector<PassStats> Pipeline::read_pass_stats() const {
  const auto p = path("pass_stats.jsonl");
  if (!fs::exists(p)) throw Error(ErrorCode::StageIncomplete, "missing pass_stats.jsonl; run sample first");
  std::vector<PassStats> out;
  for (const auto& j : read_jsonl(p)) out.push_back(pass_stats_from_json(j));
  return out;
}

void Pipeline::write_pass_stats(const std::vector<PassStats>& stats) const {
  std::vector<json> rows;
  for (const auto& s : stats) rows.push_back(to_json(s));
  write_file_atomic(path("pass_stats.jsonl"), to_jsonl(rows));
}

void Pipeline::sample() {
  store();
  const auto results = run_rejection_sampling(questions_, config_.elicitation, config_.sampling, context());
  std::vector<Trajectory> all;
  std::vector<Trajectory> correct;
  std::vector<PassStats> stats;
  for (const auto& qs : results) {
    PassStats s;
    s.question_id = qs.question_id;
    s.base_pass = qs.pass_count;
    s.base_total = qs.total;
    s.incomplete = qs.incomplete;
    stats.push_back(s);
    for (const auto& t : qs.trajectories) {
      all.push_back(t);
      if (t.correct.value_or(false)) correct.push_back(t);
    }
  }
  write_trajectories("samples_base.jsonl", all);
  write_trajectories("d_base.jsonl", correct);
  write_pass_stats(stats);
  write_run_manifest();
}

void Pipeline::classify() {
  auto stats = read_pass_stats();
  for (auto& s : stats) {
    s.label.reset();
    if (!s.incomplete) s.label = classify_difficulty(s.base_pass, s.base_total);
  }
  write_pass_stats(stats);
  write_run_manifest();
}

void Pipeline::hint() {
  store();
  auto stats = read_pass_stats();
  std::vector<Question> hard;
  std::vector<DifficultyLabel> labels;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& s = stats[i];
    if (!s.incomplete && !s.label) throw Error(ErrorCode::StageIncomplete, "questions are not classified yet");
    if (s.label && s.label->label != Difficulty::Easy) {
      hard.push_back(by_id_.at(s.question_id));
      labels.push_back(*s.label);
      where.push_back(i);
    }
  }
  std::vector<Trajectory> candidates;
  if (!hard.empty()) {
    const auto results = run_hint_sampling(hard, labels, config_.elicitation, config_.sampling, context());
    for (std::size_t k = 0; k < results.size(); ++k) {
      auto& s = stats[where[k]];
      s.hint_pass = results[k].pass_count;
      s.hint_total = results[k].total;
      s.hint_incomplete = results[k].incomplete;
      for (const auto& t : results[k].trajectories) {
        if (t.correct.value_or(false)) candidates.push_back(t);
      }
    }
  }
  write_trajectories("d_hint_candidates.jsonl", candidates);
  write_pass_stats(stats);
  write_run_manifest();
}

void Pipeline::repair() {
  store();
  auto stats = read_pass_stats();
  const auto samples = read_trajectories("samples_base.jsonl");
  std::map<std::string, std::vector<Trajectory>> by_question;
  for (const auto& t : samples) by_question[t.question_id].push_back(t);

  std::vector<RepairTarget> targets;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& s = stats[i];
    if (!s.label) continue;
    const bool extreme = s.label->label == Difficulty::ExtremelyHard;
    const bool forwarded = s.label->label == Difficulty::Hard && s.hint_total && !s.hint_incomplete &&
                           s.hint_pass.value_or(0) == 0;
    if (!extreme && !forwarded) continue;
    targets.push_back({by_id_.at(s.question_id), *s.label, forwarded, by_question[s.question_id]});
    where.push_back(i);
  }
  const auto outcome = run_repair(targets, config_.gear, config_.sampling, context());
  std::vector<json> reports;
  for (std::size_t k = 0; k < outcome.reports.size(); ++k) {
    const auto& r = outcome.reports[k];
    auto& s = stats[where[k]];
    s.repair_successes = static_cast<int>(r.successes);
    s.repair_candidates = static_cast<int>(r.candidates);
    reports.push_back(to_json(r));
  }
  write_trajectories("d_repair_candidates.jsonl", outcome.repairs);
  write_file_atomic(path("repair_report.jsonl"), to_jsonl(reports));
  write_pass_stats(stats);
  write_run_manifest();
}

void Pipeline::score() {
  auto candidates = read_trajectories("d_hint_candidates.jsonl");
  const auto repairs = read_trajectories("d_repair_candidates.jsonl");
  candidates.insert(candidates.end(), repairs.begin(), repairs.end());
  const auto reports = score_trajectories(candidates, by_id_, context(), config_.pure);
  std::vector<json> rows;
  for (const auto& r : reports) rows.push_back(to_json(r));
  write_file_atomic(path("suspicion_reports.jsonl"), to_jsonl(rows));
  write_run_manifest();
}

namespace {

std::vector<SuspicionReport> read_reports(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorCode::StageIncomplete, "missing suspicion_reports.jsonl; run score first");
  std::vector<SuspicionReport> out;
  for (const auto& j : read_jsonl(p)) out.push_back(suspicion_report_from_json(j));
  return out;
}

std::vector<SuspicionReport> of_provenance(const std::vector<SuspicionReport>& all, Provenance p) {
  std::vector<SuspicionReport> out;
  for (const auto& r : all) {
    if (r.provenance == p) out.push_back(r);
  }
  return out;
}

}  // namespace

void Pipeline::filter() {
  const auto reports = read_reports(path("suspicion_reports.jsonl"));
  const double lambda = config_.pure.lambda;

  std::vector<std::pair<std::string, FilterResult>> results;
  if (config_.pure.mode == FilterConfig::Mode::Joint) {
    results.emplace_back("joint", filter_top_lambda(reports, lambda));
  } else {
    results.emplace_back("hint", filter_top_lambda(of_provenance(reports, Provenance::Hint), lambda));
    results.emplace_back("repair", filter_top_lambda(of_provenance(reports, Provenance::Repair), lambda));
  }
  std::set<std::string> pruned;
  std::vector<json> log;
  for (const auto& [set, res] : results) {
    for (std::size_t rank = 0; rank < res.pruned.size(); ++rank) {
      const auto& r = res.pruned[rank];
      pruned.insert(r.trajectory_digest);
      log.push_back({{"set", set},
                     {"rank", rank + 1},
                     {"question_id", r.question_id},
                     {"digest", r.trajectory_digest},
                     {"provenance", std::string(to_string(r.provenance))},
                     {"anomaly_score", *r.anomaly_score},
                     {"lambda", lambda}});
    }
  }
  auto keep = [&](const std::string& in, const std::string& out) {
    std::vector<Trajectory> kept;
    for (auto& t : read_trajectories(in)) {
      if (!pruned.count(digest(t))) kept.push_back(std::move(t));
    }
    write_trajectories(out, kept);
  };
  keep("d_hint_candidates.jsonl", "d_hint.jsonl");
  keep("d_repair_candidates.jsonl", "d_repair.jsonl");
  write_file_atomic(path("prune_log.jsonl"), to_jsonl(log));
  write_run_manifest();
}

void Pipeline::assemble(std::optional<Stage> only) {
  auto records = [&](const std::string& name) {
    std::vector<TrainingRecord> out;
    for (const auto& t : read_trajectories(name)) out.push_back(to_training_record(t, by_id_.at(t.question_id)));
    return out;
  };
  const auto base = records("d_base.jsonl");
  const auto hint = records("d_hint.jsonl");
  const auto rep = records("d_repair.jsonl");

  const auto markers = config_.templates.markers();
  json scan{{"records_scanned", 0}, {"findings", json::array()}};
  std::size_t scanned = 0;
  for (Stage st : {Stage::I, Stage::II, Stage::III}) {
    if (only && *only != st) continue;
    const auto out = assemble_stage(st, std::span<const TrainingRecord>(base), std::span<const TrainingRecord>(hint),
                                    std::span<const TrainingRecord>(rep), config_.pace);
    write_stage(dir_, out);
    scanned += out.records.size();
    for (const auto& f : scan_for_leaks(out.records, by_id_, markers)) {
      scan["findings"].push_back({{"stage", std::string(to_string(st))},
                                  {"record", f.record},
                                  {"source_id", f.source_id},
                                  {"field", f.field},
                                  {"match", f.match}});
    }
  }
  scan["records_scanned"] = scanned;
  write_file_atomic(path("leak_scan.json"), scan.dump(2) + "\n");
  if (!scan["findings"].empty()) {
    std::fprintf(stderr, "warning: %zu leak findings, see leak_scan.json\n", scan["findings"].size());
  }
  write_run_manifest();
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::string opt_int(const std::optional<int>& v) { return v ? std::to_string(*v) : ""; }

std::string rate(const std::optional<int>& num, const std::optional<int>& den) {
  if (!num || !den || *den == 0) return "";
  return fmt(static_cast<double>(*num) / *den);
}

}  // namespace

json Pipeline::report(const std::vector<double>& lambdas) {
  if (!fs::exists(dir_) || fs::is_empty(dir_)) throw Error(ErrorCode::StageIncomplete, "run directory is empty: " + dir_.string());
  const auto reports = read_reports(path("suspicion_reports.jsonl"));
  const auto stats = read_pass_stats();
  const double eps = config_.pure.epsilon;
  const auto reports_dir = path("reports");

  {
    std::string csv =
        "question_id,label,base_pass,base_total,base_rate,hint_pass,hint_total,hint_rate,repair_successes,"
        "repair_candidates,repair_rate,incomplete\n";
    for (const auto& s : stats) {
      csv += s.question_id + "," + (s.label ? std::string(to_string(s.label->label)) : "") + "," +
             std::to_string(s.base_pass) + "," + std::to_string(s.base_total) + "," +
             rate(s.base_pass, s.base_total) + "," + opt_int(s.hint_pass) + "," + opt_int(s.hint_total) + "," +
             rate(s.hint_pass, s.hint_total) + "," + opt_int(s.repair_successes) + "," +
             opt_int(s.repair_candidates) + "," + rate(s.repair_successes, s.repair_candidates) + "," +
             (s.incomplete || s.hint_incomplete ? "1" : "0") + "\n";
    }
    write_file_atomic(reports_dir / "pass_rates.csv", csv);
  }

  const auto scores = kernels::parallel::anomaly_scores(reports, eps);
  std::set<std::string> pruned_now;
  if (fs::exists(path("prune_log.jsonl"))) {
    for (const auto& j : read_jsonl(path("prune_log.jsonl"))) pruned_now.insert(j.at("digest").get<std::string>());
  }
  {
    std::string csv = "set,question_id,digest,length,anomaly_score,unscorable,pruned\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      csv += std::string(to_string(r.provenance)) + "," + r.question_id + "," + r.trajectory_digest + "," +
             std::to_string(r.length) + "," + (scores[i] ? fmt(*scores[i]) : "") + "," + (r.unscorable ? "1" : "0") +
             "," + (pruned_now.count(r.trajectory_digest) ? "1" : "0") + "\n";
    }
    write_file_atomic(reports_dir / "anomaly_scores.csv", csv);
  }
  {
    // Counts over log10(score) in quarter-decade bins.
    std::map<long, std::size_t> bins;
    for (const auto& s : scores) {
      if (s && *s > 0) ++bins[static_cast<long>(std::floor(std::log10(*s) * 4.0))];
    }
    std::string csv = "log10_lo,log10_hi,count\n";
    if (!bins.empty()) {
      for (long b = bins.begin()->first; b <= bins.rbegin()->first; ++b) {
        const auto it = bins.find(b);
        csv += fmt(b / 4.0) + "," + fmt((b + 1) / 4.0) + "," + std::to_string(it == bins.end() ? 0 : it->second) + "\n";
      }
    }
    write_file_atomic(reports_dir / "anomaly_histogram.csv", csv);
  }

  json sweep = json::array();
  {
    std::string csv = "lambda,set,n_scorable,pruned,kept\n";
    std::map<std::string, std::size_t> scorable;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (!scores[i]) continue;
      ++scorable[std::string(to_string(reports[i].provenance))];
      ++scorable["all"];
    }
    for (double l : lambdas) {
      if (!(l >= 0.0 && l < 1.0)) throw Error(ErrorCode::Config, "lambda must be in [0,1)");
      for (const char* set : {"hint", "repair", "all"}) {
        const std::size_t n = scorable[set];
        const std::size_t k = prune_count(l, n);
        csv += fmt(l) + "," + set + "," + std::to_string(n) + "," + std::to_string(k) + "," + std::to_string(n - k) + "\n";
        sweep.push_back({{"lambda", l}, {"set", set}, {"n_scorable", n}, {"pruned", k}});
      }
    }
    write_file_atomic(reports_dir / "lambda_sweep.csv", csv);
  }

  std::size_t hard = 0, zero_unaided = 0, incomplete = 0;
  std::map<std::string, std::size_t> labels{{"easy", 0}, {"hard", 0}, {"extremely_hard", 0}};
  for (const auto& s : stats) {
    if (s.incomplete || s.hint_incomplete) ++incomplete;
    if (!s.label) continue;
    ++labels[std::string(to_string(s.label->label))];
    if (s.label->label != Difficulty::Easy) {
      ++hard;
      if (s.base_pass == 0) ++zero_unaided;
    }
  }
  auto count_lines = [&](const std::string& name) -> json {
    if (!fs::exists(path(name))) return nullptr;
    return read_jsonl(path(name)).size();
  };
  json stages = json::object();
  for (const char* st : {"I", "II", "III"}) {
    const auto m = path(std::string("stage_") + st + ".manifest.json");
    if (fs::exists(m)) stages[st] = json::parse(read_file(m)).at("record_count");
  }
  json leaks = nullptr;
  if (fs::exists(path("leak_scan.json"))) leaks = json::parse(read_file(path("leak_scan.json")))["findings"].size();

  json summary{{"questions", stats.size()},
               {"incomplete", incomplete},
               {"labels", labels},
               {"hard_total", hard},
               {"zero_unaided_fraction", hard ? json(static_cast<double>(zero_unaided) / hard) : json(nullptr)},
               {"d_base", count_lines("d_base.jsonl")},
               {"d_hint_candidates", count_lines("d_hint_candidates.jsonl")},
               {"d_hint", count_lines("d_hint.jsonl")},
               {"d_repair_candidates", count_lines("d_repair_candidates.jsonl")},
               {"d_repair", count_lines("d_repair.jsonl")},
               {"pruned", pruned_now.size()},
               {"stage_records", stages},
               {"leak_findings", leaks},
               {"epsilon", eps},
               {"lambda_sweep", sweep}};
  write_file_atomic(reports_dir / "summary.json", summary.dump(2) + "\n");
  write_run_manifest();
  return summary;
}

json Pipeline::run() {
  sample();
  classify();
  hint();
  repair();
  score();
  filter();
  assemble();
  return report({config_.pure.lambda});
}

json Pipeline::run_manifest() const {
  json files = json::array();
  std::vector<fs::path> paths;
  if (fs::exists(dir_)) {
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir_);
      const auto first = *rel.begin();
      if (first == "state" || rel == "manifest.json") continue;
      if (rel.filename().string().find(".tmp.") != std::string::npos) continue;
      paths.push_back(rel);
    }
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& rel : paths) {
    const auto full = dir_ / rel;
    files.push_back({{"path", rel.generic_string()}, {"bytes", fs::file_size(full)}, {"sha256", file_digest(full)}});
  }
  // Paths are left out so runs in different directories stay comparable.
  RunConfig c = config_;
  c.paths = RunPaths{};
  return {{"seed", config_.seed}, {"config_digest", sha256_hex(to_json(c).dump())}, {"files", std::move(files)}};
}

void Pipeline::write_run_manifest() const { write_file_atomic(dir_ / "manifest.json", run_manifest().dump(2) + "\n"); }

}  // namespace heal
