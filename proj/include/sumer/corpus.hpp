// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace sumer {

struct Message {
  std::string speaker;
  std::string text;
  int message_index = 0;  // 1-based within its session
  std::string timestamp;  // inherited from the session

  bool operator==(const Message&) const = default;
};

struct Session {
  int session_index = 0;  // 1-based, as numbered in the source file
  std::string timestamp;  // verbatim, e.g. "1:56 pm on 8 May, 2023"
  std::vector<Message> messages;

  bool operator==(const Session&) const = default;
};

struct Conversation {
  std::string conversation_id;
  std::array<std::string, 2> speakers;
  std::vector<Session> sessions;

  std::size_t message_count() const;
  bool operator==(const Conversation&) const = default;
};

/// Question categories under the released LoCoMo source-code numbering.
enum class Category { MultiHop, Temporal, OpenDomain, SingleHop, Adversarial };

inline constexpr std::array<Category, 4> kEvaluatedCategories = {
    Category::SingleHop, Category::MultiHop, Category::OpenDomain, Category::Temporal};

/// 1 MultiHop, 2 Temporal, 3 OpenDomain, 4 SingleHop, 5 Adversarial.
/// Throws ValidationError outside 1..5.
Category map_category(int code);
std::string_view category_name(Category c);
Category category_from_name(std::string_view name);

struct EvidenceRef {
  int session_index = 0;
  int message_index = 0;
  bool operator==(const EvidenceRef&) const = default;
};

struct QAItem {
  std::string question_id;  // "<conversation_id>#<1-based position in the qa list>"
  std::string conversation_id;
  std::string question;
  std::string gold_answer;
  int category_code = 0;
  Category category = Category::SingleHop;
  std::vector<EvidenceRef> evidence_refs;

  bool excluded() const { return category == Category::Adversarial; }
  bool operator==(const QAItem&) const = default;
};

struct DatasetEntry {
  Conversation conversation;
  std::vector<QAItem> qa;
  bool operator==(const DatasetEntry&) const = default;
};

using Dataset = std::vector<DatasetEntry>;

enum class DatasetFormat {
  LocomoJson,      // the publicly released locomo10.json layout
  NormalizedJsonl  // our versioned JSONL, one conversation per line
};

DatasetFormat parse_dataset_format(std::string_view id);

/// Throws NotFoundError, ParseError (naming the offending record) or ValidationError.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset parse_locomo_json(const nlohmann::json& root);

inline constexpr int kNormalizedFormatVersion = 1;
std::string serialize_normalized(const Dataset& dataset);
Dataset parse_normalized(std::string_view jsonl);

nlohmann::json to_json(const Conversation& c);
nlohmann::json to_json(const QAItem& q);

struct DatasetSplit {
  std::vector<std::string> train_conversations;
  std::vector<std::string> validation_conversations;
  std::uint64_t shuffle_seed = 0;
};

/// Shuffles conversation ids with CPython's `random.seed(seed); random.shuffle(ids)`
/// and takes the first n_train as training data.
DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed, std::size_t n_train);

struct ConversationStats {
  std::string conversation_id;
  std::size_t sessions = 0;
  std::size_t messages = 0;
  std::size_t questions_total = 0;      // adversarial included
  std::size_t questions_evaluated = 0;  // adversarial excluded
  double estimated_tokens = 0.0;        // words x 1.3
};

struct DatasetStats {
  std::vector<ConversationStats> conversations;
  std::size_t questions_total = 0;
  std::size_t questions_evaluated = 0;
  /// Counts keyed by category over all items, adversarial included.
  std::array<std::size_t, 5> category_counts{};
};

DatasetStats compute_stats(const Dataset& dataset);
nlohmann::json to_json(const DatasetStats& stats);

/// Rough token estimate (words x 1.3); informational only.
double estimate_tokens(std::string_view text);

/// Sortable key for LoCoMo timestamps like "1:56 pm on 8 May, 2023"; nullopt if unparseable.
std::optional<std::int64_t> timestamp_sort_key(std::string_view timestamp);

/// Returns the first session (by position) whose timestamp precedes its predecessor, if any.
std::optional<int> find_chronology_violation(const Conversation& c);

}  // namespace sumer
