// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sumer/backends.hpp"
#include "sumer/corpus.hpp"
#include "sumer/episode.hpp"
#include "sumer/eval.hpp"
#include "sumer/rlvr.hpp"
#include "sumer/transport.hpp"

namespace sumer {

namespace fs = std::filesystem;

/// Everything a command needs. Defaults follow the reference training setup.
struct RunConfig {
  fs::path dataset;
  DatasetFormat dataset_format = DatasetFormat::LocomoJson;
  fs::path bank_dir;
  fs::path out;

  // Endpoint URLs: http(s)://..., replay:<fixture.json>, script:<script.json>
  // (policy only), hashing[:<dim>] (embedder only). Empty update_url = dry run.
  std::string policy_url;
  std::string policy_model;
  std::string embed_url;
  std::string embed_model;
  std::string judge_url;
  std::string judge_model;
  std::string update_url;

  EpisodeConfig episode;  // temperature is the training temperature
  GrpoConfig grpo;
  double val_temperature = 0.0;
  int validate_every = 50;  // 0 disables validation
  std::uint64_t seed = 42;
  std::size_t n_train = 1;  // conversations in the training split
  int steps = 1;            // total steps; resume continues up to this number
  int parallelism = 4;      // concurrent episodes
  int embedding_dimension = kDefaultEmbeddingDimension;
  std::size_t max_eval_questions = 0;  // 0 = all

  void validate() const;
  /// Settings that change results. Paths, URLs and model names are excluded.
  nlohmann::json hashed_fields() const;
  std::string config_hash() const;
  nlohmann::json to_json() const;
};

/// Owns the transports behind the model clients built from a RunConfig.
struct Backends {
  std::vector<std::unique_ptr<Transport>> transports;
  std::unique_ptr<PolicyBackend> policy;
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<Judge> judge;
};

/// API keys come from SUMER_POLICY_API_KEY, SUMER_EMBED_API_KEY, SUMER_JUDGE_API_KEY, SUMER_UPDATE_API_KEY.
std::unique_ptr<Transport> make_transport(const std::string& url, const std::string& api_key_env);
std::unique_ptr<PolicyBackend> make_policy(const RunConfig& c, Backends& owner);
std::unique_ptr<Embedder> make_embedder(const RunConfig& c, Backends& owner);
std::unique_ptr<Judge> make_judge(const RunConfig& c, Backends& owner);

/// Receives each assembled step and returns the updated policy version.
class UpdateBackend {
 public:
  virtual ~UpdateBackend() = default;
  virtual std::string apply(const TrainingStep& step, const std::string& config_hash) = 0;
};

class DryRunUpdate final : public UpdateBackend {
 public:
  std::string apply(const TrainingStep& step, const std::string& config_hash) override;
};

/// POSTs {"step", "config_hash", "summary", "batches"} and reads "policy_version".
class HttpUpdate final : public UpdateBackend {
 public:
  HttpUpdate(Transport& transport, std::string path = "/update") : transport_(transport), path_(std::move(path)) {}
  std::string apply(const TrainingStep& step, const std::string& config_hash) override;

 private:
  Transport& transport_;
  std::string path_;
};

/// Records the config hash in <dir>/run.json; throws ValidationError if the
/// directory already holds artifacts from a different hash.
void claim_output_dir(const fs::path& dir, const RunConfig& c);

/// Loads every bank under bank_dir/<conversation_id>.
std::map<std::string, MemoryBank> load_banks(const fs::path& bank_dir, const std::vector<std::string>& conversation_ids);

/// Questions of the training split picked for `step` (1-based): batch_size / G
/// per step, walking seeded per-epoch shuffles of the pool.
std::vector<QAItem> sample_step_questions(const std::vector<QAItem>& pool, const RunConfig& c, int step);

// Commands. Each writes human-readable output to `out` and returns an exit code;
// errors propagate as sumer::Error.
int cmd_ingest(const RunConfig& c, std::ostream& out);
int cmd_embed(const RunConfig& c, const std::vector<std::string>& conversation_ids, std::ostream& out);

struct SearchArgs {
  std::string conversation_id;
  SearchMode mode = SearchMode::Semantic;
  std::string query;
  std::vector<std::string> keywords;
  int top_k = 5;
  std::optional<std::string> speaker;
  std::optional<int> session;
  bool show_scores = true;
};
int cmd_search(const RunConfig& c, const SearchArgs& args, std::ostream& out);

int cmd_episode(const RunConfig& c, const std::string& question_id, std::ostream& out);
int cmd_train(const RunConfig& c, std::ostream& out, UpdateBackend* update = nullptr);

enum class EvalSplit { Validation, Train, All };
EvalSplit parse_eval_split(std::string_view s);
int cmd_eval(const RunConfig& c, EvalSplit split, std::optional<int> step, std::ostream& out);

int cmd_report(const std::vector<fs::path>& reports, const std::vector<std::string>& labels, bool allow_mixed,
               const std::optional<fs::path>& out_json, std::ostream& out);

}  // namespace sumer
