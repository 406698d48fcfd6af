// SPDX-License-Identifier: Apache-2.0
#include "sumer/episode.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "sumer/errors.hpp"
#include "sumer/prompts.hpp"
#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

void EpisodeConfig::validate() const {
  if (max_turns < 1 || max_parallel_calls < 1 || prompt_token_budget < 1 || response_token_budget < 1 ||
      max_generation_tokens < 1 || default_top_k < 1 || keyword_cap < 1) {
    throw ValidationError("episode caps and budgets must be positive");
  }
  if (generation_reserve < 0 || seed_context_k < 0) throw ValidationError("reserve and seed_context_k must be >= 0");
  if (ablations.disable_keyword && ablations.disable_semantic) {
    throw ValidationError("at most one search mode may be disabled");
  }
}

json to_json(const EpisodeConfig& c) {
  return {{"max_turns", c.max_turns},
          {"max_parallel_calls", c.max_parallel_calls},
          {"prompt_token_budget", c.prompt_token_budget},
          {"response_token_budget", c.response_token_budget},
          {"generation_reserve", c.generation_reserve},
          {"max_generation_tokens", c.max_generation_tokens},
          {"temperature", c.temperature},
          {"seed_context_k", c.seed_context_k},
          {"default_top_k", c.default_top_k},
          {"keyword_cap", c.keyword_cap},
          {"disable_context_groups", c.ablations.disable_context_groups},
          {"disable_keyword", c.ablations.disable_keyword},
          {"disable_semantic", c.ablations.disable_semantic}};
}

EpisodeConfig episode_config_from_json(const json& j) {
  EpisodeConfig c;
  c.max_turns = j.value("max_turns", c.max_turns);
  c.max_parallel_calls = j.value("max_parallel_calls", c.max_parallel_calls);
  c.prompt_token_budget = j.value("prompt_token_budget", c.prompt_token_budget);
  c.response_token_budget = j.value("response_token_budget", c.response_token_budget);
  c.generation_reserve = j.value("generation_reserve", c.generation_reserve);
  c.max_generation_tokens = j.value("max_generation_tokens", c.max_generation_tokens);
  c.temperature = j.value("temperature", c.temperature);
  c.seed_context_k = j.value("seed_context_k", c.seed_context_k);
  c.default_top_k = j.value("default_top_k", c.default_top_k);
  c.keyword_cap = j.value("keyword_cap", c.keyword_cap);
  c.ablations.disable_context_groups = j.value("disable_context_groups", false);
  c.ablations.disable_keyword = j.value("disable_keyword", false);
  c.ablations.disable_semantic = j.value("disable_semantic", false);
  return c;
}

std::string_view terminal_name(Terminal t) {
  switch (t) {
    case Terminal::Submitted: return "Submitted";
    case Terminal::TurnCapExceeded: return "TurnCapExceeded";
    case Terminal::ContextExceeded: return "ContextExceeded";
    case Terminal::NoToolCall: return "NoToolCall";
  }
  return "?";
}

Terminal terminal_from_name(std::string_view name) {
  for (auto t : {Terminal::Submitted, Terminal::TurnCapExceeded, Terminal::ContextExceeded, Terminal::NoToolCall}) {
    if (terminal_name(t) == name) return t;
  }
  throw ParseError("unknown terminal state: " + std::string(name));
}

std::size_t Trajectory::assistant_token_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.assistant_token_ids.size();
  return n;
}

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Records of one speaker ranked by how many distinct question terms they
// contain (ties by corpus order). Used when semantic search is ablated.
std::vector<std::size_t> keyword_seed(const MemoryBank& bank, const std::string& question, const std::string& speaker,
                                      int k, const SearchOptions& options) {
  std::set<std::string> terms;
  for (auto& t : normalize_answer_tokens(question)) {
    if (t.size() >= 4) terms.insert(t);
  }
  std::map<std::size_t, int> hits;
  SearchFilters filters{speaker, std::nullopt};
  SearchOptions unlimited = options;
  unlimited.keyword_cap = static_cast<int>(bank.size());
  for (const auto& term : terms) {
    for (const auto& g : keyword_search(bank, {term}, filters, unlimited).groups) ++hits[g.group.center];
  }
  std::vector<std::pair<int, std::size_t>> ranked;
  for (auto [p, n] : hits) ranked.emplace_back(-n, p);
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < k; ++i) out.push_back(ranked[i].second);
  return out;
}

std::string error_response(const std::string& message, int turns_remaining) {
  return "Error: " + message + "\n\n" + turns_remaining_line(turns_remaining);
}

}  // namespace

std::vector<ChatMessage> build_initial_prompt(const MemoryBank& bank, const QAItem& qa, const EpisodeConfig& config,
                                              Embedder* embedder) {
  config.validate();
  const bool semantic = !config.ablations.disable_semantic;
  if (semantic && !bank.fully_embedded()) {
    throw CapabilityError("semantic search enabled but the memory bank is not fully embedded");
  }
  if (semantic && embedder == nullptr) throw CapabilityError("semantic search enabled but no embedder configured");

  TrainingPromptFields fields;
  fields.total_memories = bank.size();
  std::vector<std::string> breakdown;
  const auto per_speaker = bank.records_per_speaker();
  const auto speakers = bank.speakers();
  for (const auto& s : speakers) breakdown.push_back(s + ": " + std::to_string(per_speaker.at(s)) + " memories");
  fields.breakdown = join(breakdown, ", ");
  fields.num_sessions = bank.session_count();
  fields.speakers = join(speakers, " and ");
  fields.level_descriptor = std::string(kConversationLevelDescriptor);
  fields.question = qa.question;
  fields.max_turns = config.max_turns;

  SearchOptions options;
  options.context_radius = 0;
  Embedding query;
  if (semantic && config.seed_context_k > 0) query = embedder->embed({qa.question}).row(0).transpose();
  for (const auto& speaker : speakers) {
    SeedSection section;
    section.speaker = speaker;
    if (config.seed_context_k > 0) {
      std::vector<std::size_t> positions;
      if (semantic) {
        for (const auto& g :
             semantic_search(bank, query, config.seed_context_k, SearchFilters{speaker, std::nullopt}, options).groups) {
          positions.push_back(g.group.center);
        }
      } else {
        positions = keyword_seed(bank, qa.question, speaker, config.seed_context_k, options);
      }
      for (auto p : positions) {
        const auto& r = bank.record(p);
        section.memories.push_back({r.message_timestamp, r.speaker + ": " + r.content});
      }
    }
    fields.seed_sections.push_back(std::move(section));
  }

  return {ChatMessage{Role::System, std::string(kSystemPrompt), {}, std::nullopt},
          ChatMessage{Role::User, render_training_prompt(fields), {}, std::nullopt}};
}

std::string execute_search_call(const MemoryBank& bank, const ToolCall& call, const EpisodeConfig& config,
                                Embedder* embedder, int turns_remaining) {
  if (call.arguments_error) return error_response("invalid search_memory arguments: " + *call.arguments_error, turns_remaining);
  const auto& args = call.arguments;

  if (!args.contains("search_type") || !args["search_type"].is_string()) {
    return error_response("search_memory requires field 'search_type' (\"semantic\" or \"keyword\")", turns_remaining);
  }
  const auto type = args["search_type"].get<std::string>();
  SearchQuery q;
  if (type == "semantic") {
    q.mode = SearchMode::Semantic;
  } else if (type == "keyword") {
    q.mode = SearchMode::Keyword;
  } else {
    return error_response("field 'search_type' must be \"semantic\" or \"keyword\", got \"" + type + "\"", turns_remaining);
  }

  if (q.mode == SearchMode::Keyword && config.ablations.disable_keyword) {
    return error_response("keyword search is disabled in this configuration", turns_remaining);
  }
  if (q.mode == SearchMode::Semantic && config.ablations.disable_semantic) {
    return error_response("semantic search is disabled in this configuration", turns_remaining);
  }

  if (args.contains("speaker") && !args["speaker"].is_null()) {
    if (!args["speaker"].is_string()) return error_response("field 'speaker' must be a string", turns_remaining);
    q.filters.speaker = args["speaker"].get<std::string>();
  }
  if (args.contains("session") && !args["session"].is_null()) {
    if (!args["session"].is_number_integer()) return error_response("field 'session' must be an integer", turns_remaining);
    q.filters.session = args["session"].get<int>();
  }
  q.top_k = config.default_top_k;
  if (args.contains("top_k") && !args["top_k"].is_null()) {
    if (!args["top_k"].is_number_integer() || args["top_k"].get<int>() < 1) {
      return error_response("field 'top_k' must be a positive integer", turns_remaining);
    }
    q.top_k = args["top_k"].get<int>();
  }

  SearchOptions options;
  options.context_radius = config.context_radius();
  options.keyword_cap = config.keyword_cap;

  if (q.mode == SearchMode::Semantic) {
    if (!args.contains("query") || !args["query"].is_string() || trim(args["query"].get<std::string>()).empty()) {
      return error_response("semantic search requires field 'query' (non-empty string)", turns_remaining);
    }
    if (embedder == nullptr) throw CapabilityError("semantic search requested but no embedder configured");
    const Embedding query = embedder->embed({args["query"].get<std::string>()}).row(0).transpose();
    return format_tool_response(bank, semantic_search(bank, query, q.top_k, q.filters, options), turns_remaining);
  }

  if (!args.contains("keywords") || !args["keywords"].is_array() || args["keywords"].empty()) {
    return error_response("keyword search requires field 'keywords' (non-empty array of strings)", turns_remaining);
  }
  for (const auto& k : args["keywords"]) {
    if (!k.is_string() || trim(k.get<std::string>()).empty()) {
      return error_response("field 'keywords' must contain only non-empty strings", turns_remaining);
    }
    q.keywords.push_back(k.get<std::string>());
  }
  return format_tool_response(bank, keyword_search(bank, q.keywords, q.filters, options), turns_remaining);
}

Trajectory run_episode(const MemoryBank& bank, const QAItem& qa, PolicyBackend& policy, const EpisodeConfig& config,
                       Embedder* embedder, EpisodeSampling sampling) {
  config.validate();
  Trajectory traj;
  traj.question_id = qa.question_id;
  traj.conversation_id = qa.conversation_id;
  traj.prompt_messages = build_initial_prompt(bank, qa, config, embedder);

  std::size_t total_tokens = 0;
  for (const auto& m : traj.prompt_messages) {
    traj.prompt_token_ids.push_back(policy.tokenize(m));
    total_tokens += traj.prompt_token_ids.back().size();
  }
  std::vector<ChatMessage> dialogue = traj.prompt_messages;
  const auto schemas = tool_schemas();
  const auto budget = static_cast<std::size_t>(config.prompt_token_budget) +
                      static_cast<std::size_t>(config.response_token_budget);

  bool finished = false;
  for (int turn = 1; turn <= config.max_turns && !finished; ++turn) {
    if (total_tokens + static_cast<std::size_t>(config.generation_reserve) > budget) {
      traj.terminal = Terminal::ContextExceeded;
      finished = true;
      break;
    }
    GenerationRequest request;
    request.messages = dialogue;
    request.tool_schemas = schemas;
    request.temperature = config.temperature;
    request.max_tokens =
        static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.max_generation_tokens), budget - total_tokens));
    request.seed = sampling.seed;
    request.episode_key = qa.question_id;
    request.sample_index = sampling.sample_index;

    auto gen = policy.generate(request);
    TurnRecord record;
    record.assistant_message = gen.message;
    record.assistant_message.role = Role::Assistant;
    if (gen.logprobs_available) {
      record.assistant_token_ids = std::move(gen.token_ids);
      record.assistant_token_logprobs = std::move(gen.token_logprobs);
    } else {
      traj.logprobs_available = false;
      record.assistant_token_ids = policy.tokenize(record.assistant_message);
    }
    total_tokens += record.assistant_token_ids.size();
    dialogue.push_back(record.assistant_message);

    const auto& calls = record.assistant_message.tool_calls;
    if (calls.empty()) {
      traj.turns.push_back(std::move(record));
      traj.terminal = Terminal::NoToolCall;
      finished = true;
      break;
    }

    const int turns_remaining = config.max_turns - turn;
    bool submitted = false;
    for (std::size_t k = 0; k < calls.size(); ++k) {
      const auto& call = calls[k];
      std::string response;
      if (submitted) {
        response = "Not executed: an answer was already submitted in this turn.";
      } else if (static_cast<int>(k) >= config.max_parallel_calls) {
        response = error_response("at most " + std::to_string(config.max_parallel_calls) +
                                      " tool calls are allowed per turn; this call was not executed",
                                  turns_remaining);
      } else {
        const auto tool = parse_tool_name(call.name);
        if (!tool) {
          response = error_response("unknown tool '" + call.name + "'; available tools are search_memory and submit_answer",
                                    turns_remaining);
        } else if (*tool == ToolName::SearchMemory) {
          response = execute_search_call(bank, call, config, embedder, turns_remaining);
        } else if (call.arguments_error) {
          response = error_response("invalid submit_answer arguments: " + *call.arguments_error, turns_remaining);
        } else if (!call.arguments.contains("answer") || !call.arguments["answer"].is_string()) {
          response = error_response("submit_answer requires field 'answer' (string)", turns_remaining);
        } else {
          submitted = true;
          traj.final_answer = call.arguments["answer"].get<std::string>();
          response = "Answer submitted.";
        }
      }
      ChatMessage tool_msg{Role::Tool, std::move(response), {}, call.call_id};
      record.tool_response_token_ids.push_back(policy.tokenize(tool_msg));
      total_tokens += record.tool_response_token_ids.back().size();
      dialogue.push_back(tool_msg);
      record.tool_responses.push_back(std::move(tool_msg));
    }
    traj.turns.push_back(std::move(record));

    if (submitted) {
      traj.terminal = Terminal::Submitted;
      finished = true;
    }
  }
  if (!finished) traj.terminal = Terminal::TurnCapExceeded;

  auto flat = flatten_with_mask(traj);
  traj.token_stream = std::move(flat.token_stream);
  traj.loss_mask = std::move(flat.loss_mask);
  return traj;
}

FlatTokens flatten_with_mask(const Trajectory& t) {
  FlatTokens out;
  std::size_t expected = 0;
  auto append = [&](const std::vector<std::int32_t>& ids, bool learned, const std::vector<double>* logprobs) {
    expected += ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.token_stream.push_back(ids[i]);
      out.loss_mask.push_back(learned ? 1 : 0);
      out.old_logprobs.push_back(logprobs && !logprobs->empty() ? (*logprobs)[i] : 0.0);
    }
  };
  if (t.prompt_token_ids.size() != t.prompt_messages.size()) {
    throw ValidationError("token accounting: prompt messages and prompt token segments differ in count");
  }
  for (const auto& ids : t.prompt_token_ids) append(ids, false, nullptr);
  for (const auto& turn : t.turns) {
    if (!turn.assistant_token_logprobs.empty() && turn.assistant_token_logprobs.size() != turn.assistant_token_ids.size()) {
      throw ValidationError("token accounting: assistant logprobs and token ids differ in length");
    }
    if (turn.tool_response_token_ids.size() != turn.tool_responses.size()) {
      throw ValidationError("token accounting: tool responses and tool token segments differ in count");
    }
    append(turn.assistant_token_ids, true, &turn.assistant_token_logprobs);
    for (const auto& ids : turn.tool_response_token_ids) append(ids, false, nullptr);
  }
  if (out.token_stream.size() != expected) {
    throw ValidationError("token accounting: stream length differs from the sum of segment lengths");
  }
  if (!t.token_stream.empty() && t.token_stream != out.token_stream) {
    throw ValidationError("token accounting: recorded token stream differs from its segments (" +
                          std::to_string(t.token_stream.size()) + " vs " + std::to_string(expected) + " tokens)");
  }
  return out;
}

json to_json(const Trajectory& t) {
  json prompt = json::array();
  for (std::size_t i = 0; i < t.prompt_messages.size(); ++i) {
    auto m = to_openai(t.prompt_messages[i]);
    m["token_ids"] = t.prompt_token_ids.at(i);
    prompt.push_back(std::move(m));
  }
  json turns = json::array();
  for (const auto& turn : t.turns) {
    json tools = json::array();
    for (std::size_t i = 0; i < turn.tool_responses.size(); ++i) {
      auto m = to_openai(turn.tool_responses[i]);
      m["token_ids"] = turn.tool_response_token_ids.at(i);
      tools.push_back(std::move(m));
    }
    turns.push_back({{"assistant", to_openai(turn.assistant_message)},
                     {"token_ids", turn.assistant_token_ids},
                     {"logprobs", turn.assistant_token_logprobs},
                     {"tool_responses", std::move(tools)}});
  }
  std::size_t prompt_tokens = 0, tool_tokens = 0;
  for (const auto& ids : t.prompt_token_ids) prompt_tokens += ids.size();
  for (const auto& turn : t.turns) {
    for (const auto& ids : turn.tool_response_token_ids) tool_tokens += ids.size();
  }
  return {{"question_id", t.question_id},
          {"conversation_id", t.conversation_id},
          {"terminal", terminal_name(t.terminal)},
          {"final_answer", t.final_answer ? json(*t.final_answer) : json(nullptr)},
          {"n_turns", t.turns.size()},
          {"logprobs_available", t.logprobs_available},
          {"token_counts",
           {{"total", t.token_stream.size()},
            {"prompt", prompt_tokens},
            {"assistant", t.assistant_token_count()},
            {"tool", tool_tokens}}},
          {"prompt", std::move(prompt)},
          {"turns", std::move(turns)}};
}

Trajectory trajectory_from_json(const json& j) {
  try {
    Trajectory t;
    t.question_id = j.at("question_id").get<std::string>();
    t.conversation_id = j.value("conversation_id", "");
    t.terminal = terminal_from_name(j.at("terminal").get<std::string>());
    if (!j.at("final_answer").is_null()) t.final_answer = j["final_answer"].get<std::string>();
    t.logprobs_available = j.value("logprobs_available", true);
    for (const auto& m : j.at("prompt")) {
      t.prompt_messages.push_back(message_from_openai(m));
      t.prompt_token_ids.push_back(m.at("token_ids").get<std::vector<std::int32_t>>());
    }
    for (const auto& tj : j.at("turns")) {
      TurnRecord turn;
      turn.assistant_message = message_from_openai(tj.at("assistant"));
      turn.assistant_token_ids = tj.at("token_ids").get<std::vector<std::int32_t>>();
      turn.assistant_token_logprobs = tj.at("logprobs").get<std::vector<double>>();
      for (const auto& m : tj.at("tool_responses")) {
        turn.tool_responses.push_back(message_from_openai(m));
        turn.tool_response_token_ids.push_back(m.at("token_ids").get<std::vector<std::int32_t>>());
      }
      t.turns.push_back(std::move(turn));
    }
    auto flat = flatten_with_mask(t);
    t.token_stream = std::move(flat.token_stream);
    t.loss_mask = std::move(flat.loss_mask);
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory record: ") + e.what());
  }
}

}  // namespace sumer
