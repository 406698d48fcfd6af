// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sumer/backends.hpp"
#include "sumer/corpus.hpp"
#include "sumer/memory_store.hpp"
#include "sumer/search.hpp"

namespace sumer {

struct Ablations {
  bool disable_context_groups = false;
  bool disable_keyword = false;
  bool disable_semantic = false;
};

struct EpisodeConfig {
  int max_turns = 20;
  int max_parallel_calls = 5;
  int prompt_token_budget = 8192;
  int response_token_budget = 24576;
  /// Tokens held back for the next generation when checking the context budget.
  int generation_reserve = 512;
  int max_generation_tokens = 4096;
  double temperature = 1.0;
  int seed_context_k = 5;  // per speaker
  int default_top_k = 5;
  int keyword_cap = 20;
  Ablations ablations;

  /// Throws ValidationError: caps/budgets must be positive, at most one search mode disabled.
  void validate() const;
  int context_radius() const { return ablations.disable_context_groups ? 0 : 2; }
};

nlohmann::json to_json(const EpisodeConfig& c);
EpisodeConfig episode_config_from_json(const nlohmann::json& j);

enum class Terminal { Submitted, TurnCapExceeded, ContextExceeded, NoToolCall };
std::string_view terminal_name(Terminal t);
Terminal terminal_from_name(std::string_view name);

struct TurnRecord {
  ChatMessage assistant_message;
  std::vector<std::int32_t> assistant_token_ids;
  std::vector<double> assistant_token_logprobs;  // empty when the backend gave none
  std::vector<ChatMessage> tool_responses;       // one per tool call, in call order
  std::vector<std::vector<std::int32_t>> tool_response_token_ids;
};

struct Trajectory {
  std::string question_id;
  std::string conversation_id;
  std::vector<ChatMessage> prompt_messages;
  std::vector<std::vector<std::int32_t>> prompt_token_ids;
  std::vector<TurnRecord> turns;
  Terminal terminal = Terminal::NoToolCall;
  std::optional<std::string> final_answer;  // present iff Submitted
  bool logprobs_available = true;
  std::vector<std::int32_t> token_stream;
  std::vector<std::uint8_t> loss_mask;

  std::size_t assistant_token_count() const;
};

/// Sampling identity of one episode within a rollout group.
struct EpisodeSampling {
  std::uint64_t seed = 0;
  int sample_index = 0;
};

/// System prompt followed by the filled training prompt. Seed memories are
/// the top seed_context_k semantic hits per speaker for the question (or, with
/// semantic search ablated, the records matching the most question terms).
/// Throws CapabilityError when semantic search is enabled but the bank is not
/// fully embedded or no embedder is given.
std::vector<ChatMessage> build_initial_prompt(const MemoryBank& bank, const QAItem& qa, const EpisodeConfig& config,
                                              Embedder* embedder);

/// Executes one search_memory call and returns the tool-response text; argument
/// and ablation errors come back as "Error: ..." text rather than exceptions.
std::string execute_search_call(const MemoryBank& bank, const ToolCall& call, const EpisodeConfig& config,
                                Embedder* embedder, int turns_remaining);

/// Runs the agent loop until submit_answer, no tool call, the turn cap or the
/// context budget. Backend failures propagate (InfrastructureError etc.).
Trajectory run_episode(const MemoryBank& bank, const QAItem& qa, PolicyBackend& policy, const EpisodeConfig& config,
                       Embedder* embedder, EpisodeSampling sampling = {});

struct FlatTokens {
  std::vector<std::int32_t> token_stream;
  std::vector<std::uint8_t> loss_mask;
  /// Generation-time log-probabilities on assistant tokens, 0 elsewhere.
  std::vector<double> old_logprobs;
};

/// Prompt, assistant and tool segments concatenated in dialogue order; mask 1
/// exactly on assistant tokens. Throws ValidationError on token accounting
/// mismatches.
FlatTokens flatten_with_mask(const Trajectory& trajectory);

nlohmann::json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace sumer
