// SPDX-License-Identifier: Apache-2.0
// sumer: ingest, embed, search, episode, train, eval, report.
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "sumer/commands.hpp"
#include "sumer/errors.hpp"

namespace {

void add_common(CLI::App* app, sumer::RunConfig& c, std::string& format) {
  app->add_option("--dataset", c.dataset, "LoCoMo JSON or normalized JSONL dataset");
  app->add_option("--dataset-format", format, "locomo | jsonl")->capture_default_str();
  app->add_option("--bank-dir", c.bank_dir, "Directory holding one memory bank per conversation");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--policy-url", c.policy_url, "http(s)://..., replay:<file> or script:<file>");
  app->add_option("--policy-model", c.policy_model);
  app->add_option("--embed-url", c.embed_url, "http(s)://..., replay:<file> or hashing[:<dim>]");
  app->add_option("--embed-model", c.embed_model);
  app->add_option("--embed-dim", c.embedding_dimension)->capture_default_str();
  app->add_option("--judge-url", c.judge_url, "http(s)://... or replay:<file>");
  app->add_option("--judge-model", c.judge_model);
  app->add_option("--update-url", c.update_url, "Weight-update endpoint; omitted = dry run");
  app->add_option("--seed", c.seed, "Split and sampling seed")->capture_default_str();
  app->add_option("--n-train", c.n_train, "Conversations in the training split")->capture_default_str();
  app->add_option("--g", c.grpo.group_size, "Rollouts per question")->capture_default_str();
  app->add_option("--batch-size", c.grpo.batch_size, "Trajectories per step")->capture_default_str();
  app->add_option("--clip-high", c.grpo.clip_high)->capture_default_str();
  app->add_option("--clip-low", c.grpo.clip_low)->capture_default_str();
  app->add_option("--epsilon-std", c.grpo.epsilon_std)->capture_default_str();
  app->add_flag("--per-token-mean", c.grpo.per_token_mean, "Length-normalize each rollout's token sum");
  app->add_option("--max-turns", c.episode.max_turns)->capture_default_str();
  app->add_option("--max-parallel-calls", c.episode.max_parallel_calls)->capture_default_str();
  app->add_option("--temperature", c.episode.temperature, "Training temperature")->capture_default_str();
  app->add_option("--val-temperature", c.val_temperature)->capture_default_str();
  app->add_flag("--disable-keyword", c.episode.ablations.disable_keyword);
  app->add_flag("--disable-semantic", c.episode.ablations.disable_semantic);
  app->add_flag("--disable-context", c.episode.ablations.disable_context_groups);
  app->add_option("--validate-every", c.validate_every)->capture_default_str();
  app->add_option("--steps", c.steps, "Total training steps")->capture_default_str();
  app->add_option("--parallelism", c.parallelism, "Concurrent episodes")->capture_default_str();
  app->add_option("--max-eval-questions", c.max_eval_questions, "0 = all")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-directed search over conversational memory with RL from verifiable rewards"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

  sumer::RunConfig c;
  std::string format = "locomo";

  auto* ingest = app.add_subcommand("ingest", "Load a dataset and write one memory bank per conversation");
  add_common(ingest, c, format);

  auto* embed = app.add_subcommand("embed", "Fill in missing embeddings of stored banks");
  add_common(embed, c, format);
  std::vector<std::string> embed_ids;
  embed->add_option("--conversation", embed_ids, "Restrict to these conversations");

  auto* search = app.add_subcommand("search", "Run one search against a stored bank");
  add_common(search, c, format);
  sumer::SearchArgs sargs;
  std::string mode = "semantic";
  std::optional<std::string> speaker;
  std::optional<int> session;
  search->add_option("--conversation", sargs.conversation_id)->required();
  search->add_option("--mode", mode, "semantic | keyword")->capture_default_str();
  search->add_option("--query", sargs.query);
  search->add_option("--keywords", sargs.keywords);
  search->add_option("--top-k", sargs.top_k)->capture_default_str();
  search->add_option("--speaker", speaker);
  search->add_option("--session", session);

  auto* episode = app.add_subcommand("episode", "Run a single episode and print its trajectory");
  add_common(episode, c, format);
  std::string question_id;
  episode->add_option("--question", question_id, "Question id, e.g. conv-48#3")->required();

  auto* train = app.add_subcommand("train", "GRPO step loop against a weight-update backend");
  add_common(train, c, format);

  auto* eval = app.add_subcommand("eval", "Greedy evaluation with per-category report");
  add_common(eval, c, format);
  std::string split = "validation";
  std::optional<int> step;
  eval->add_option("--split", split, "validation | train | all")->capture_default_str();
  eval->add_option("--step", step, "Training step recorded in the report metadata");

  auto* report = app.add_subcommand("report", "Delta table between evaluation reports");
  std::vector<std::filesystem::path> report_paths;
  std::vector<std::string> labels;
  bool allow_mixed = false;
  std::optional<std::filesystem::path> report_out;
  report->add_option("reports", report_paths, "report.json files or eval output directories")->required();
  report->add_option("--label", labels, "Label per compared run");
  report->add_flag("--allow-mixed", allow_mixed, "Compare reports from different configs");
  report->add_option("--out", report_out, "Write the delta table as JSON");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    c.dataset_format = sumer::parse_dataset_format(format);
    if (*ingest) return sumer::cmd_ingest(c, std::cout);
    if (*embed) return sumer::cmd_embed(c, embed_ids, std::cout);
    if (*search) {
      if (mode == "semantic") {
        sargs.mode = sumer::SearchMode::Semantic;
      } else if (mode == "keyword") {
        sargs.mode = sumer::SearchMode::Keyword;
      } else {
        throw sumer::ValidationError("--mode must be semantic or keyword");
      }
      sargs.speaker = speaker;
      sargs.session = session;
      return sumer::cmd_search(c, sargs, std::cout);
    }
    if (*episode) return sumer::cmd_episode(c, question_id, std::cout);
    if (*train) return sumer::cmd_train(c, std::cout);
    if (*eval) return sumer::cmd_eval(c, sumer::parse_eval_split(split), step, std::cout);
    if (*report) return sumer::cmd_report(report_paths, labels, allow_mixed, report_out, std::cout);
  } catch (const sumer::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
