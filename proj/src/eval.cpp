// SPDX-License-Identifier: Apache-2.0
#include "sumer/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sumer/rlvr.hpp"
#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

double bleu1(std::string_view predicted, std::string_view gold) {
  const auto p = normalize_answer_tokens(predicted);
  const auto g = normalize_answer_tokens(gold);
  if (p.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  std::unordered_map<std::string, std::size_t> pred_counts;
  for (const auto& t : p) ++pred_counts[t];
  std::size_t clipped = 0;
  for (const auto& [tok, n] : pred_counts) {
    auto it = gold_counts.find(tok);
    if (it != gold_counts.end()) clipped += std::min(n, it->second);
  }
  const double precision = static_cast<double>(clipped) / static_cast<double>(p.size());
  const double bp = p.size() < g.size() ? std::exp(1.0 - static_cast<double>(g.size()) / static_cast<double>(p.size()))
                                        : 1.0;
  return precision * bp;
}

json to_json(const EvalRecord& r) {
  json j = {{"question_id", r.question_id},
            {"conversation_id", r.conversation_id},
            {"category", category_name(r.category)},
            {"predicted_answer", r.predicted_answer ? json(*r.predicted_answer) : json(nullptr)},
            {"terminal", terminal_name(r.terminal)},
            {"f1", r.f1},
            {"bleu1", r.bleu1},
            {"judge", r.judge},
            {"n_turns", r.n_turns},
            {"judge_failure", r.judge_failure}};
  if (r.infra_error) j["infra_error"] = *r.infra_error;
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  try {
    EvalRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.conversation_id = j.value("conversation_id", "");
    r.category = category_from_name(j.at("category").get<std::string>());
    if (j.contains("predicted_answer") && !j["predicted_answer"].is_null()) {
      r.predicted_answer = j["predicted_answer"].get<std::string>();
    }
    r.terminal = terminal_from_name(j.at("terminal").get<std::string>());
    r.f1 = j.at("f1").get<double>();
    r.bleu1 = j.at("bleu1").get<double>();
    r.judge = j.at("judge").get<int>();
    r.n_turns = j.at("n_turns").get<int>();
    r.judge_failure = j.value("judge_failure", false);
    if (j.contains("infra_error")) r.infra_error = j["infra_error"].get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("eval record: ") + e.what());
  }
}

EvalRecord score_trajectory(const Trajectory& t, const QAItem& qa, Judge& judge) {
  EvalRecord r;
  r.question_id = qa.question_id;
  r.conversation_id = qa.conversation_id;
  r.category = qa.category;
  r.terminal = t.terminal;
  r.n_turns = static_cast<int>(t.turns.size());
  if (t.terminal == Terminal::Submitted && t.final_answer) {
    r.predicted_answer = t.final_answer;
    r.f1 = token_f1(*t.final_answer, qa.gold_answer);
    r.bleu1 = bleu1(*t.final_answer, qa.gold_answer);
    const auto verdict = judge.judge(qa.question, qa.gold_answer, *t.final_answer);
    r.judge = static_cast<int>(verdict.verdict);
    r.judge_failure = verdict.judge_failure;
  }
  return r;
}

namespace {

struct Accumulator {
  double f1 = 0, b1 = 0, j = 0, turns = 0;
  std::size_t n = 0;
  void add(const EvalRecord& r) {
    f1 += r.f1;
    b1 += r.bleu1;
    j += r.judge;
    turns += r.n_turns;
    ++n;
  }
  MetricSummary summary() const {
    MetricSummary m;
    m.count = n;
    if (n == 0) return m;
    const double d = static_cast<double>(n);
    m.f1 = 100.0 * f1 / d;
    m.bleu1 = 100.0 * b1 / d;
    m.judge = 100.0 * j / d;
    m.mean_turns = turns / d;
    return m;
  }
};

json to_json(const MetricSummary& m) {
  return {{"f1", m.f1}, {"bleu1", m.bleu1}, {"judge", m.judge}, {"mean_turns", m.mean_turns}, {"count", m.count}};
}

MetricSummary metric_summary_from_json(const json& j) {
  MetricSummary m;
  m.f1 = j.at("f1").get<double>();
  m.bleu1 = j.at("bleu1").get<double>();
  m.judge = j.at("judge").get<double>();
  m.mean_turns = j.at("mean_turns").get<double>();
  m.count = j.at("count").get<std::size_t>();
  return m;
}

}  // namespace

EvalReport aggregate(const std::vector<EvalRecord>& records, json metadata) {
  EvalReport report;
  report.metadata = std::move(metadata);
  std::map<Category, Accumulator> per;
  Accumulator all;
  for (const auto& r : records) {
    if (r.category == Category::Adversarial) continue;
    if (r.infra_error) {
      ++report.failed;
      continue;
    }
    per[r.category].add(r);
    all.add(r);
    report.question_ids.push_back(r.question_id);
  }
  for (auto c : kEvaluatedCategories) report.per_category[c] = per[c].summary();
  report.overall = all.summary();
  std::sort(report.question_ids.begin(), report.question_ids.end());
  return report;
}

json to_json(const EvalReport& r) {
  json cats = json::object();
  for (const auto& [c, m] : r.per_category) cats[std::string(category_name(c))] = to_json(m);
  return {{"per_category", cats},  {"overall", to_json(r.overall)}, {"failed", r.failed},
          {"incomplete", r.incomplete()}, {"question_ids", r.question_ids}, {"metadata", r.metadata}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    for (const auto& [name, m] : j.at("per_category").items()) {
      r.per_category[category_from_name(name)] = metric_summary_from_json(m);
    }
    r.overall = metric_summary_from_json(j.at("overall"));
    r.failed = j.value("failed", std::size_t{0});
    r.question_ids = j.value("question_ids", std::vector<std::string>{});
    r.metadata = j.value("metadata", json::object());
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
}

std::string render_report_table(const EvalReport& r) {
  std::string out;
  if (r.incomplete()) {
    out += fmt::format("INCOMPLETE RUN: {} question(s) failed with infrastructure errors and are not scored\n\n",
                       r.failed);
  }
  const std::array<std::pair<const char*, Category>, 4> columns = {{{"Single Hop", Category::SingleHop},
                                                                     {"Multi-Hop", Category::MultiHop},
                                                                     {"Open Domain", Category::OpenDomain},
                                                                     {"Temporal", Category::Temporal}}};
  out += fmt::format("{:<12}", "");
  for (const auto& [label, c] : columns) out += fmt::format(" | {:^20}", label);
  out += fmt::format(" | {:^20}\n", "Overall");
  out += fmt::format("{:<12}", "");
  for (std::size_t i = 0; i < columns.size() + 1; ++i) out += fmt::format(" | {:>6} {:>6} {:>6}", "F1", "B1", "J");
  out += "\n";
  auto cell = [](const MetricSummary& m) { return fmt::format(" | {:>6.2f} {:>6.2f} {:>6.2f}", m.f1, m.bleu1, m.judge); };
  out += fmt::format("{:<12}", r.metadata.value("model", std::string("policy")).substr(0, 12));
  for (const auto& [label, c] : columns) {
    auto it = r.per_category.find(c);
    out += cell(it == r.per_category.end() ? MetricSummary{} : it->second);
  }
  out += cell(r.overall) + "\n\n";
  out += fmt::format("questions: {}", r.overall.count);
  for (const auto& [label, c] : columns) {
    auto it = r.per_category.find(c);
    out += fmt::format(", {}: {}", label, it == r.per_category.end() ? 0 : it->second.count);
  }
  out += fmt::format("\nmean turns: {:.2f}\n", r.overall.mean_turns);
  return out;
}

std::vector<EvalRecord> run_evaluation(const std::vector<EvalTarget>& targets, PolicyBackend& policy, Judge& judge,
                                       Embedder* embedder, const EvalOptions& options,
                                       std::vector<Trajectory>* trajectories) {
  EpisodeConfig config = options.episode;
  config.temperature = 0.0;
  config.validate();

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].qa.excluded()) todo.push_back(i);
  }
  std::vector<EvalRecord> records(todo.size());
  std::vector<Trajectory> trajs(todo.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const auto& target = targets[todo[k]];
      try {
        if (!target.bank) throw ValidationError("no memory bank for " + target.qa.question_id);
        trajs[k] = run_episode(*target.bank, target.qa, policy, config, embedder, {0, 0});
        records[k] = score_trajectory(trajs[k], target.qa, judge);
      } catch (const Error& e) {
        spdlog::error("evaluation of {} failed: {}", target.qa.question_id, e.what());
        EvalRecord r;
        r.question_id = target.qa.question_id;
        r.conversation_id = target.qa.conversation_id;
        r.category = target.qa.category;
        r.infra_error = e.what();
        records[k] = std::move(r);
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, options.parallelism));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(n_threads, todo.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  if (trajectories) *trajectories = std::move(trajs);
  return records;
}

std::vector<DeltaRow> compare_runs(const std::vector<EvalReport>& reports, const std::vector<std::string>& labels) {
  if (reports.size() < 2) throw ValidationError("compare_runs needs at least 2 reports");
  for (std::size_t k = 1; k < reports.size(); ++k) {
    if (reports[k].question_ids != reports[0].question_ids) {
      throw ValidationError(fmt::format("report {} was evaluated on a different question set than report 0", k));
    }
  }
  std::vector<DeltaRow> rows;
  for (std::size_t k = 1; k < reports.size(); ++k) {
    const std::string label = k - 1 < labels.size() ? labels[k - 1] : fmt::format("run {}", k);
    const auto& a = reports[0].overall;
    const auto& b = reports[k].overall;
    for (auto [metric, x, y] : {std::tuple{"J", a.judge, b.judge}, std::tuple{"F1", a.f1, b.f1},
                                std::tuple{"B1", a.bleu1, b.bleu1}}) {
      DeltaRow row;
      row.label = label;
      row.metric = metric;
      row.initial = x;
      row.final_value = y;
      row.delta_abs = y - x;
      if (x != 0.0) row.delta_rel = 100.0 * (y - x) / x;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string render_delta_table(const std::vector<DeltaRow>& rows) {
  std::string out = fmt::format("{:<14} | {:<6} | {:>8} | {:>8} | {:>8} | {:>9}\n", "Configuration", "Metric", "Initial",
                                "Final", "ΔAbs", "ΔRel");
  for (const auto& r : rows) {
    const std::string rel = r.delta_rel ? fmt::format("{:+.2f}%", *r.delta_rel) : "n/a";
    out += fmt::format("{:<14} | {:<6} | {:>8.2f} | {:>8.2f} | {:>+8.2f} | {:>9}\n", r.label, r.metric, r.initial,
                       r.final_value, r.delta_abs, rel);
  }
  return out;
}

json to_json(const std::vector<DeltaRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"label", r.label},
                   {"metric", r.metric},
                   {"initial", r.initial},
                   {"final", r.final_value},
                   {"delta_abs", r.delta_abs},
                   {"delta_rel", r.delta_rel ? json(*r.delta_rel) : json(nullptr)}});
  }
  return out;
}

}  // namespace sumer
