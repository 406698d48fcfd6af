// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sumer/backends.hpp"
#include "sumer/corpus.hpp"
#include "sumer/episode.hpp"
#include "sumer/memory_store.hpp"

namespace sumer {

/// Clipped unigram precision times brevity penalty, over normalize_answer_tokens().
double bleu1(std::string_view predicted, std::string_view gold);

struct EvalRecord {
  std::string question_id;
  std::string conversation_id;
  Category category = Category::SingleHop;
  std::optional<std::string> predicted_answer;
  Terminal terminal = Terminal::NoToolCall;
  double f1 = 0.0;
  double bleu1 = 0.0;
  int judge = 0;
  int n_turns = 0;
  bool judge_failure = false;
  /// Set when the episode could not be run; such records are not scored.
  std::optional<std::string> infra_error;
};

nlohmann::json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

/// Scores a finished trajectory. Non-submitted episodes score 0 everywhere and
/// do not consult the judge.
EvalRecord score_trajectory(const Trajectory& t, const QAItem& qa, Judge& judge);

struct MetricSummary {
  double f1 = 0.0;  // x100
  double bleu1 = 0.0;
  double judge = 0.0;
  double mean_turns = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::map<Category, MetricSummary> per_category;
  MetricSummary overall;  // question-weighted
  std::size_t failed = 0;  // records with infra_error, excluded from all means
  std::vector<std::string> question_ids;  // scored, sorted
  nlohmann::json metadata = nlohmann::json::object();

  bool incomplete() const { return failed > 0; }
};

/// Single-threaded reduction; adversarial records are ignored.
EvalReport aggregate(const std::vector<EvalRecord>& records, nlohmann::json metadata = nlohmann::json::object());

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
std::string render_report_table(const EvalReport& r);

struct EvalTarget {
  const MemoryBank* bank = nullptr;
  QAItem qa;
};

struct EvalOptions {
  EpisodeConfig episode;  // temperature is forced to 0
  int parallelism = 4;
};

/// One greedy episode per non-adversarial question, run concurrently up to
/// `parallelism`. Infrastructure failures are recorded per question.
std::vector<EvalRecord> run_evaluation(const std::vector<EvalTarget>& targets, PolicyBackend& policy, Judge& judge,
                                       Embedder* embedder, const EvalOptions& options,
                                       std::vector<Trajectory>* trajectories = nullptr);

struct DeltaRow {
  std::string label;   // e.g. "run 1"
  std::string metric;  // F1, B1, J
  double initial = 0.0;
  double final_value = 0.0;
  double delta_abs = 0.0;
  std::optional<double> delta_rel;  // percent; empty when initial is 0
};

/// Deltas of each later report against the first. Throws ValidationError on
/// fewer than 2 reports or mismatched question sets.
std::vector<DeltaRow> compare_runs(const std::vector<EvalReport>& reports,
                                   const std::vector<std::string>& labels = {});
std::string render_delta_table(const std::vector<DeltaRow>& rows);
nlohmann::json to_json(const std::vector<DeltaRow>& rows);

}  // namespace sumer
