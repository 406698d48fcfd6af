// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sumer/memory_store.hpp"
#include "sumer/transport.hpp"

namespace sumer {

using nlohmann::json;

enum class Role { System, User, Assistant, Tool };
std::string_view role_name(Role r);
Role role_from_name(std::string_view name);

enum class ToolName { SearchMemory, SubmitAnswer };
std::optional<ToolName> parse_tool_name(std::string_view name);
std::string_view tool_name_string(ToolName t);

/// A tool call as emitted by the policy. `name` is kept raw so that calls to
/// unknown tools can be answered with an error instead of being dropped.
struct ToolCall {
  std::string call_id;
  std::string name;
  json arguments = json::object();
  /// Set when the raw argument string was not a JSON object.
  std::optional<std::string> arguments_error;

  bool operator==(const ToolCall&) const = default;
};

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  std::vector<ToolCall> tool_calls;
  std::optional<std::string> tool_call_id;

  bool operator==(const ChatMessage&) const = default;
};

/// OpenAI chat-completions message object.
json to_openai(const ChatMessage& m);
ChatMessage message_from_openai(const json& j);

enum class FinishReason { Stop, ToolCalls, Length, Other };
std::string_view finish_reason_name(FinishReason f);
FinishReason finish_reason_from_name(std::string_view name);

struct GenerationResult {
  ChatMessage message;
  std::vector<std::int32_t> token_ids;
  std::vector<double> token_logprobs;
  FinishReason finish_reason = FinishReason::Stop;
  /// False when the server returned no usable per-token logprobs/ids.
  bool logprobs_available = true;
};

struct GenerationRequest {
  std::vector<ChatMessage> messages;
  json tool_schemas = json::array();
  double temperature = 1.0;
  int max_tokens = 4096;
  std::uint64_t seed = 0;
  /// Identifies the episode (question id); scripted policies select scripts by it.
  std::string episode_key;
  /// Rollout index within a group; 0 for evaluation.
  int sample_index = 0;
};

struct PolicyCapabilities {
  bool logprobs = false;
  bool score = false;
};

/// The policy under training, behind an inference service.
class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
  /// Token ids of one message as rendered in the dialogue (chat template applied).
  virtual std::vector<std::int32_t> tokenize(const ChatMessage& message) = 0;
  /// Log-probability of every token of `token_stream` under the current
  /// parameters, conditioned on its prefix; position 0 gets 0.
  virtual std::vector<double> score(std::span<const std::int32_t> token_stream) = 0;
  virtual PolicyCapabilities capabilities() const = 0;
  virtual std::string model_id() const = 0;
};

struct HttpPolicyConfig {
  std::string model;
  std::string chat_path = "/v1/chat/completions";
  std::string tokenize_path = "/tokenize";
  std::string score_path = "/v1/completions";
  bool supports_score = true;
};

/// OpenAI-compatible chat completions with tool calling and logprobs.
/// Token ids come from `return_tokens_as_token_ids` ("token_id:N" strings).
class HttpPolicy final : public PolicyBackend {
 public:
  HttpPolicy(Transport& transport, HttpPolicyConfig config);
  GenerationResult generate(const GenerationRequest& request) override;
  std::vector<std::int32_t> tokenize(const ChatMessage& message) override;
  std::vector<double> score(std::span<const std::int32_t> token_stream) override;
  PolicyCapabilities capabilities() const override;
  std::string model_id() const override { return config_.model; }

  static json build_request(const GenerationRequest& request, const std::string& model);
  static GenerationResult parse_response(const json& response);

 private:
  Transport& transport_;
  HttpPolicyConfig config_;
  mutable std::mutex capability_mutex_;
  bool saw_logprobs_ = true;
};

/// Replays canned assistant turns. Stateless: the turn is the number of
/// assistant messages already in the request, the script is chosen by
/// episode_key (falling back to "*") and the variant by sample_index.
class ScriptedPolicy final : public PolicyBackend {
 public:
  struct Turn {
    std::string content;
    std::vector<ToolCall> tool_calls;
    std::optional<std::vector<std::int32_t>> token_ids;
    std::optional<std::vector<double>> logprobs;
  };
  using Script = std::vector<Turn>;

  ScriptedPolicy(std::map<std::string, std::vector<Script>> scripts, PolicyCapabilities caps = {true, true});
  /// {"scripts": {"<question_id>|*": [[turn, ...], ...]}, "capabilities": {...}}
  static std::unique_ptr<ScriptedPolicy> from_json(const json& j);
  static std::unique_ptr<ScriptedPolicy> from_file(const std::filesystem::path& path);

  /// Throws ScriptExhaustedError when the script has no turn left.
  GenerationResult generate(const GenerationRequest& request) override;
  std::vector<std::int32_t> tokenize(const ChatMessage& message) override;
  std::vector<double> score(std::span<const std::int32_t> token_stream) override;
  PolicyCapabilities capabilities() const override { return caps_; }
  std::string model_id() const override { return "scripted"; }

  /// Deterministic synthetic log-probability for a token id, in [-1, -0.05].
  static double synthetic_logprob(std::int32_t token_id);
  static std::vector<std::int32_t> synthetic_tokens(const ChatMessage& message);

  static Turn search_turn(const json& arguments, std::string content = {});
  static Turn submit_turn(const std::string& answer, std::string content = {});
  static Turn text_turn(std::string content);

 private:
  std::map<std::string, std::vector<Script>> scripts_;
  PolicyCapabilities caps_;
};

/// Text embedding service.
class Embedder {
 public:
  virtual ~Embedder() = default;
  /// One row per input text.
  virtual EmbeddingMatrix embed(const std::vector<std::string>& texts) = 0;
  virtual int dimension() const = 0;
};

struct EmbeddingConfig {
  std::string model;
  std::string path = "/v1/embeddings";
  int dimension = kDefaultEmbeddingDimension;
  int batch_size = 64;
};

/// OpenAI-style /v1/embeddings client with a content-hash cache: each
/// distinct text is sent at most once per process.
class EmbeddingClient final : public Embedder {
 public:
  EmbeddingClient(Transport& transport, EmbeddingConfig config);
  /// Throws ValidationError if the service returns a different dimension.
  EmbeddingMatrix embed(const std::vector<std::string>& texts) override;
  int dimension() const override { return config_.dimension; }

  std::size_t remote_calls() const { return remote_calls_.load(); }
  std::size_t remote_texts() const { return remote_texts_.load(); }

 private:
  Transport& transport_;
  EmbeddingConfig config_;
  std::mutex cache_mutex_;
  std::unordered_map<std::string, Embedding> cache_;
  std::atomic<std::size_t> remote_calls_{0};
  std::atomic<std::size_t> remote_texts_{0};
};

/// Offline stand-in for an embedding service: signed feature hashing of the
/// normalized tokens into `dimension` buckets. Deterministic, no network.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(int dimension = kDefaultEmbeddingDimension);
  EmbeddingMatrix embed(const std::vector<std::string>& texts) override;
  int dimension() const override { return dimension_; }

 private:
  int dimension_;
};

enum class Verdict { Wrong = 0, Correct = 1 };

struct JudgeResult {
  Verdict verdict = Verdict::Wrong;
  /// True when the judge never produced a parseable label and Wrong was assumed.
  bool judge_failure = false;
  std::string raw_reply;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// Throws InfrastructureError on transport failure.
  virtual JudgeResult judge(const std::string& question, const std::string& gold_answer,
                            const std::string& generated_answer) = 0;
  virtual std::string model_id() const = 0;
};

struct JudgeConfig {
  std::string model;
  std::string path = "/v1/chat/completions";
};

/// LLM-as-judge: sends the binary-classification prompt at temperature 0 and
/// reads {"label": ...}. An unparseable reply gets one stricter re-ask; a
/// second failure is scored Wrong with judge_failure set.
class JudgeClient final : public Judge {
 public:
  JudgeClient(Transport& transport, JudgeConfig config);
  JudgeResult judge(const std::string& question, const std::string& gold_answer,
                    const std::string& generated_answer) override;
  std::string model_id() const override { return config_.model; }

 private:
  Transport& transport_;
  JudgeConfig config_;
};

/// Extracts the label from a judge reply; nullopt if none can be found.
std::optional<Verdict> parse_judge_label(const std::string& reply);

inline constexpr std::string_view kJudgeFormatReminder =
    "Your previous reply could not be parsed. Respond with only a JSON object, either "
    "{\"label\": \"CORRECT\"} or {\"label\": \"WRONG\"}, and nothing else.";

}  // namespace sumer
