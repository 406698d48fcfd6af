// SPDX-License-Identifier: Apache-2.0
#include "sumer/backends.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>

#include "sumer/errors.hpp"
#include "sumer/prompts.hpp"
#include "sumer/util.hpp"

namespace sumer {

std::string_view role_name(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

Role role_from_name(std::string_view name) {
  if (name == "system") return Role::System;
  if (name == "user") return Role::User;
  if (name == "assistant") return Role::Assistant;
  if (name == "tool") return Role::Tool;
  throw ParseError("unknown chat role: " + std::string(name));
}

std::optional<ToolName> parse_tool_name(std::string_view name) {
  if (name == "search_memory") return ToolName::SearchMemory;
  if (name == "submit_answer") return ToolName::SubmitAnswer;
  return std::nullopt;
}

std::string_view tool_name_string(ToolName t) {
  return t == ToolName::SearchMemory ? "search_memory" : "submit_answer";
}

std::string_view finish_reason_name(FinishReason f) {
  switch (f) {
    case FinishReason::Stop: return "stop";
    case FinishReason::ToolCalls: return "tool_calls";
    case FinishReason::Length: return "length";
    case FinishReason::Other: return "other";
  }
  return "other";
}

FinishReason finish_reason_from_name(std::string_view name) {
  if (name == "stop") return FinishReason::Stop;
  if (name == "tool_calls") return FinishReason::ToolCalls;
  if (name == "length") return FinishReason::Length;
  return FinishReason::Other;
}

json to_openai(const ChatMessage& m) {
  json j = {{"role", role_name(m.role)}, {"content", m.content}};
  if (!m.tool_calls.empty()) {
    json calls = json::array();
    for (const auto& c : m.tool_calls) {
      calls.push_back({{"id", c.call_id},
                       {"type", "function"},
                       {"function", {{"name", c.name}, {"arguments", c.arguments.dump()}}}});
    }
    j["tool_calls"] = std::move(calls);
  }
  if (m.tool_call_id) j["tool_call_id"] = *m.tool_call_id;
  return j;
}

namespace {

ToolCall parse_tool_call(const json& c, std::size_t index) {
  ToolCall call;
  call.call_id = c.value("id", "call_" + std::to_string(index));
  const auto& fn = c.contains("function") ? c["function"] : c;
  call.name = fn.value("name", "");
  const auto& args = fn.contains("arguments") ? fn["arguments"] : json::object();
  if (args.is_object()) {
    call.arguments = args;
  } else if (args.is_string()) {
    const auto raw = args.get<std::string>();
    try {
      auto parsed = json::parse(raw.empty() ? "{}" : raw);
      if (parsed.is_object()) {
        call.arguments = std::move(parsed);
      } else {
        call.arguments_error = "arguments must be a JSON object";
      }
    } catch (const json::parse_error& e) {
      call.arguments_error = std::string("arguments are not valid JSON: ") + e.what();
    }
  } else {
    call.arguments_error = "arguments must be a JSON object";
  }
  return call;
}

}  // namespace

ChatMessage message_from_openai(const json& j) {
  ChatMessage m;
  m.role = role_from_name(j.value("role", "assistant"));
  if (j.contains("content") && j["content"].is_string()) m.content = j["content"].get<std::string>();
  if (j.contains("tool_calls") && j["tool_calls"].is_array()) {
    std::size_t i = 0;
    for (const auto& c : j["tool_calls"]) m.tool_calls.push_back(parse_tool_call(c, i++));
  }
  if (j.contains("tool_call_id") && j["tool_call_id"].is_string()) m.tool_call_id = j["tool_call_id"].get<std::string>();
  return m;
}

// ---------------------------------------------------------------------------
// HttpPolicy

HttpPolicy::HttpPolicy(Transport& transport, HttpPolicyConfig config)
    : transport_(transport), config_(std::move(config)) {}

json HttpPolicy::build_request(const GenerationRequest& request, const std::string& model) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back(to_openai(m));
  json body = {{"model", model},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens},
               {"seed", request.seed},
               {"logprobs", true},
               {"return_tokens_as_token_ids", true}};
  if (!request.tool_schemas.empty()) {
    body["tools"] = request.tool_schemas;
    body["tool_choice"] = "auto";
  }
  return body;
}

GenerationResult HttpPolicy::parse_response(const json& response) {
  if (!response.contains("choices") || !response["choices"].is_array() || response["choices"].empty()) {
    throw InfrastructureError("chat completion response has no choices");
  }
  const auto& choice = response["choices"][0];
  GenerationResult out;
  out.message = message_from_openai(choice.value("message", json::object()));
  out.message.role = Role::Assistant;
  const auto finish = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                          ? choice["finish_reason"].get<std::string>()
                          : std::string("stop");
  out.finish_reason = finish_reason_from_name(finish);

  out.logprobs_available = false;
  if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains("content") &&
      choice["logprobs"]["content"].is_array()) {
    bool ok = true;
    for (const auto& t : choice["logprobs"]["content"]) {
      const auto token = t.value("token", "");
      const auto prefix = std::string_view("token_id:");
      if (!t.contains("logprob") || !t["logprob"].is_number() || token.rfind(prefix, 0) != 0) {
        ok = false;
        break;
      }
      out.token_ids.push_back(static_cast<std::int32_t>(std::stol(token.substr(prefix.size()))));
      out.token_logprobs.push_back(std::min(0.0, t["logprob"].get<double>()));
    }
    out.logprobs_available = ok && !out.token_ids.empty();
  }
  if (!out.logprobs_available) {
    out.token_ids.clear();
    out.token_logprobs.clear();
  }
  return out;
}

GenerationResult HttpPolicy::generate(const GenerationRequest& request) {
  auto out = parse_response(transport_.post(config_.chat_path, build_request(request, config_.model)));
  if (!out.logprobs_available) {
    std::lock_guard lock(capability_mutex_);
    if (saw_logprobs_) spdlog::warn("policy server returned no token logprobs; training is disabled for this backend");
    saw_logprobs_ = false;
  }
  return out;
}

std::vector<std::int32_t> HttpPolicy::tokenize(const ChatMessage& message) {
  const json body = {{"model", config_.model},
                     {"messages", json::array({to_openai(message)})},
                     {"add_generation_prompt", false}};
  const auto response = transport_.post(config_.tokenize_path, body);
  if (!response.contains("tokens") || !response["tokens"].is_array()) {
    throw InfrastructureError("tokenize response has no tokens array");
  }
  return response["tokens"].get<std::vector<std::int32_t>>();
}

std::vector<double> HttpPolicy::score(std::span<const std::int32_t> token_stream) {
  if (!config_.supports_score) throw CapabilityError("policy backend does not support scoring");
  const json body = {{"model", config_.model},
                     {"prompt", std::vector<std::int32_t>(token_stream.begin(), token_stream.end())},
                     {"max_tokens", 1},
                     {"temperature", 0.0},
                     {"echo", true},
                     {"logprobs", 0}};
  const auto response = transport_.post(config_.score_path, body);
  try {
    const auto& lp = response.at("choices").at(0).at("logprobs").at("token_logprobs");
    std::vector<double> out;
    out.reserve(token_stream.size());
    for (std::size_t i = 0; i < token_stream.size(); ++i) {
      out.push_back(lp.at(i).is_number() ? std::min(0.0, lp[i].get<double>()) : 0.0);
    }
    return out;
  } catch (const json::exception& e) {
    throw InfrastructureError(std::string("score response malformed: ") + e.what());
  }
}

PolicyCapabilities HttpPolicy::capabilities() const {
  std::lock_guard lock(capability_mutex_);
  return {saw_logprobs_, config_.supports_score};
}

// ---------------------------------------------------------------------------
// ScriptedPolicy

ScriptedPolicy::ScriptedPolicy(std::map<std::string, std::vector<Script>> scripts, PolicyCapabilities caps)
    : scripts_(std::move(scripts)), caps_(caps) {}

double ScriptedPolicy::synthetic_logprob(std::int32_t token_id) {
  return -0.05 * static_cast<double>(1 + (token_id % 20));
}

std::vector<std::int32_t> ScriptedPolicy::synthetic_tokens(const ChatMessage& message) {
  std::string rendered = std::string(role_name(message.role)) + ": " + message.content;
  for (const auto& c : message.tool_calls) rendered += " " + c.name + " " + c.arguments.dump();
  std::vector<std::int32_t> ids;
  for (const auto& w : split_whitespace(rendered)) ids.push_back(static_cast<std::int32_t>(fnv1a64(w) % 32000));
  return ids;
}

ScriptedPolicy::Turn ScriptedPolicy::search_turn(const json& arguments, std::string content) {
  return {std::move(content), {ToolCall{"", "search_memory", arguments, std::nullopt}}, std::nullopt, std::nullopt};
}

ScriptedPolicy::Turn ScriptedPolicy::submit_turn(const std::string& answer, std::string content) {
  return {std::move(content), {ToolCall{"", "submit_answer", json{{"answer", answer}}, std::nullopt}}, std::nullopt,
          std::nullopt};
}

ScriptedPolicy::Turn ScriptedPolicy::text_turn(std::string content) {
  return {std::move(content), {}, std::nullopt, std::nullopt};
}

std::unique_ptr<ScriptedPolicy> ScriptedPolicy::from_json(const json& j) {
  std::map<std::string, std::vector<Script>> scripts;
  for (const auto& [key, variants] : j.at("scripts").items()) {
    for (const auto& script_json : variants) {
      Script script;
      for (const auto& t : script_json) {
        Turn turn;
        turn.content = t.value("content", "");
        if (t.contains("tool_calls")) {
          std::size_t i = 0;
          for (const auto& c : t["tool_calls"]) {
            // Accept {"name", "arguments"} as well as the OpenAI nested form.
            json wrapped = c.contains("function") ? c : json{{"function", c}};
            if (c.contains("id")) wrapped["id"] = c["id"];
            auto call = parse_tool_call(wrapped, i++);
            if (!c.contains("id")) call.call_id.clear();
            turn.tool_calls.push_back(std::move(call));
          }
        }
        if (t.contains("token_ids")) turn.token_ids = t["token_ids"].get<std::vector<std::int32_t>>();
        if (t.contains("logprobs")) turn.logprobs = t["logprobs"].get<std::vector<double>>();
        script.push_back(std::move(turn));
      }
      scripts[key].push_back(std::move(script));
    }
  }
  PolicyCapabilities caps{true, true};
  if (j.contains("capabilities")) {
    caps.logprobs = j["capabilities"].value("logprobs", true);
    caps.score = j["capabilities"].value("score", true);
  }
  return std::make_unique<ScriptedPolicy>(std::move(scripts), caps);
}

std::unique_ptr<ScriptedPolicy> ScriptedPolicy::from_file(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError("policy script " + path.string() + ": " + e.what());
  }
}

GenerationResult ScriptedPolicy::generate(const GenerationRequest& request) {
  auto it = scripts_.find(request.episode_key);
  if (it == scripts_.end()) it = scripts_.find("*");
  if (it == scripts_.end() || it->second.empty()) {
    throw ScriptExhaustedError("no script for episode " + request.episode_key);
  }
  const auto& variants = it->second;
  const auto& script = variants[static_cast<std::size_t>(request.sample_index) % variants.size()];
  const auto turn_index = static_cast<std::size_t>(
      std::count_if(request.messages.begin(), request.messages.end(),
                    [](const ChatMessage& m) { return m.role == Role::Assistant; }));
  if (turn_index >= script.size()) {
    throw ScriptExhaustedError("script for " + request.episode_key + " exhausted at turn " +
                               std::to_string(turn_index + 1));
  }
  const auto& turn = script[turn_index];

  GenerationResult out;
  out.message.role = Role::Assistant;
  out.message.content = turn.content;
  out.message.tool_calls = turn.tool_calls;
  for (std::size_t i = 0; i < out.message.tool_calls.size(); ++i) {
    auto& c = out.message.tool_calls[i];
    if (c.call_id.empty()) c.call_id = "call_" + std::to_string(turn_index + 1) + "_" + std::to_string(i + 1);
  }
  out.finish_reason = out.message.tool_calls.empty() ? FinishReason::Stop : FinishReason::ToolCalls;
  out.token_ids = turn.token_ids ? *turn.token_ids : synthetic_tokens(out.message);
  if (turn.logprobs) {
    out.token_logprobs = *turn.logprobs;
  } else {
    for (auto id : out.token_ids) out.token_logprobs.push_back(synthetic_logprob(id));
  }
  if (out.token_logprobs.size() != out.token_ids.size()) {
    throw ValidationError("scripted turn has mismatched token_ids/logprobs lengths");
  }
  out.logprobs_available = caps_.logprobs;
  if (!caps_.logprobs) out.token_logprobs.clear();
  return out;
}

std::vector<std::int32_t> ScriptedPolicy::tokenize(const ChatMessage& message) { return synthetic_tokens(message); }

std::vector<double> ScriptedPolicy::score(std::span<const std::int32_t> token_stream) {
  if (!caps_.score) throw CapabilityError("scripted policy configured without scoring");
  std::vector<double> out;
  out.reserve(token_stream.size());
  for (std::size_t i = 0; i < token_stream.size(); ++i) out.push_back(i == 0 ? 0.0 : synthetic_logprob(token_stream[i]));
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddingClient

EmbeddingClient::EmbeddingClient(Transport& transport, EmbeddingConfig config)
    : transport_(transport), config_(std::move(config)) {
  if (config_.batch_size < 1) throw ValidationError("embedding batch size must be at least 1");
}

EmbeddingMatrix EmbeddingClient::embed(const std::vector<std::string>& texts) {
  std::vector<std::string> keys;
  keys.reserve(texts.size());
  for (const auto& t : texts) keys.push_back(sha256_hex(t));

  std::vector<std::size_t> missing;  // first index of each distinct uncached text
  {
    std::lock_guard lock(cache_mutex_);
    std::unordered_map<std::string, bool> queued;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (cache_.count(keys[i]) || queued.count(keys[i])) continue;
      queued[keys[i]] = true;
      missing.push_back(i);
    }
  }

  const auto batch = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < missing.size(); start += batch) {
    const auto end = std::min(missing.size(), start + batch);
    json input = json::array();
    for (auto k = start; k < end; ++k) input.push_back(texts[missing[k]]);
    ++remote_calls_;
    remote_texts_ += end - start;
    const auto response = transport_.post(config_.path, {{"model", config_.model}, {"input", input}});
    if (!response.contains("data") || !response["data"].is_array() || response["data"].size() != end - start) {
      throw InfrastructureError("embedding response has wrong number of vectors");
    }
    std::vector<Embedding> vectors(end - start);
    for (std::size_t r = 0; r < end - start; ++r) {
      const auto& item = response["data"][r];
      const auto slot = item.contains("index") ? item["index"].get<std::size_t>() : r;
      const auto values = item.at("embedding").get<std::vector<float>>();
      if (static_cast<int>(values.size()) != config_.dimension) {
        throw ValidationError("embedding service returned dimension " + std::to_string(values.size()) +
                              ", expected " + std::to_string(config_.dimension));
      }
      if (slot >= vectors.size()) throw InfrastructureError("embedding response index out of range");
      vectors[slot] = Eigen::Map<const Embedding>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
    std::lock_guard lock(cache_mutex_);
    for (std::size_t r = 0; r < vectors.size(); ++r) cache_[keys[missing[start + r]]] = std::move(vectors[r]);
  }

  EmbeddingMatrix out(static_cast<Eigen::Index>(texts.size()), config_.dimension);
  std::lock_guard lock(cache_mutex_);
  for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = cache_.at(keys[i]).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// HashingEmbedder

HashingEmbedder::HashingEmbedder(int dimension) : dimension_(dimension) {
  if (dimension < 2) throw ValidationError("hashing embedder dimension must be at least 2");
}

EmbeddingMatrix HashingEmbedder::embed(const std::vector<std::string>& texts) {
  EmbeddingMatrix out = EmbeddingMatrix::Zero(static_cast<Eigen::Index>(texts.size()), dimension_);
  const auto d = static_cast<std::uint64_t>(dimension_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto tokens = normalize_answer_tokens(texts[i]);
    for (const auto& tok : tokens) {
      const auto h = fnv1a64(tok);
      out(row, static_cast<Eigen::Index>(h % d)) += (h >> 63) ? -1.0f : 1.0f;
    }
    // Empty or fully cancelled texts still need a direction for cosine scoring.
    if (out.row(row).squaredNorm() == 0.0f) out(row, 0) = 1.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judge

std::optional<Verdict> parse_judge_label(const std::string& reply) {
  // Scan every {...} span from the last one backwards; the label usually closes the reply.
  for (auto close = reply.rfind('}'); close != std::string::npos; close = close == 0 ? std::string::npos : reply.rfind('}', close - 1)) {
    for (auto open = reply.rfind('{', close); open != std::string::npos;
         open = open == 0 ? std::string::npos : reply.rfind('{', open - 1)) {
      try {
        const auto j = json::parse(reply.substr(open, close - open + 1));
        if (!j.is_object()) continue;
        for (const auto& [key, value] : j.items()) {
          if (to_lower(key) != "label" || !value.is_string()) continue;
          const auto label = to_lower(trim(value.get<std::string>()));
          if (label == "correct") return Verdict::Correct;
          if (label == "wrong") return Verdict::Wrong;
        }
      } catch (const json::parse_error&) {
      }
    }
  }
  return std::nullopt;
}

JudgeClient::JudgeClient(Transport& transport, JudgeConfig config) : transport_(transport), config_(std::move(config)) {}

JudgeResult JudgeClient::judge(const std::string& question, const std::string& gold_answer,
                               const std::string& generated_answer) {
  if (trim(generated_answer).empty()) return {Verdict::Wrong, false, ""};
  json messages = json::array({{{"role", "user"}, {"content", render_judge_prompt(question, gold_answer, generated_answer)}}});
  auto ask = [&](const json& msgs) {
    const auto response =
        transport_.post(config_.path, {{"model", config_.model}, {"messages", msgs}, {"temperature", 0.0}});
    try {
      const auto& content = response.at("choices").at(0).at("message").at("content");
      return content.is_string() ? content.get<std::string>() : std::string();
    } catch (const json::exception&) {
      return std::string();
    }
  };
  auto reply = ask(messages);
  if (auto v = parse_judge_label(reply)) return {*v, false, reply};

  messages.push_back({{"role", "assistant"}, {"content", reply}});
  messages.push_back({{"role", "user"}, {"content", kJudgeFormatReminder}});
  auto second = ask(messages);
  if (auto v = parse_judge_label(second)) return {*v, false, second};

  spdlog::error("judge reply unparseable twice for question '{}'; scoring as WRONG", question);
  return {Verdict::Wrong, true, second};
}

}  // namespace sumer
