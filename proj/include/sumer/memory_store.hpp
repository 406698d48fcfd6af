// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "sumer/corpus.hpp"

namespace sumer {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Embedding = Eigen::VectorXf;

inline constexpr int kDefaultEmbeddingDimension = 1024;
inline constexpr int kDefaultShardCount = 32;

/// "conv/session/message", e.g. "conv-48/3/12".
std::string make_record_id(std::string_view conversation_id, int session_index, int message_index);

/// One raw message as stored in the memory bank.
struct MemoryRecord {
  std::string record_id;
  std::string conversation_id;
  std::string speaker;
  int session_index = 0;
  int message_index = 0;
  std::string session_timestamp;
  std::string message_timestamp;
  std::string content;

  bool operator==(const MemoryRecord&) const = default;
};

/// Stringified metadata values searched by keyword mode, in a fixed order.
std::vector<std::string> metadata_values(const MemoryRecord& r);

/// Immutable after construction. Records are kept in corpus order
/// (conversation, session, message); a record's position in that order is
/// its tie-break rank everywhere.
class MemoryBank {
 public:
  MemoryBank() = default;

  /// Throws ValidationError on duplicate (conversation, session, message),
  /// a row count that does not match `records`, or non-finite embeddings.
  MemoryBank(std::vector<MemoryRecord> records, EmbeddingMatrix embeddings, std::vector<bool> has_embedding,
             int dimension, int shard_count = kDefaultShardCount);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int dimension() const { return dimension_; }
  int shard_count() const { return static_cast<int>(shards_.size()); }

  const std::vector<MemoryRecord>& records() const { return records_; }
  const MemoryRecord& record(std::size_t position) const { return records_.at(position); }
  std::optional<std::size_t> position_of(std::string_view record_id) const;

  bool has_embedding(std::size_t position) const { return has_embedding_.at(position); }
  std::size_t embedded_count() const;
  bool fully_embedded() const { return embedded_count() == size(); }
  /// Row `position` of the stored matrix; undefined content if !has_embedding.
  auto embedding(std::size_t position) const { return embeddings_.row(static_cast<Eigen::Index>(position)); }
  const EmbeddingMatrix& embeddings() const { return embeddings_; }
  /// Euclidean row norms, precomputed for cosine scoring.
  const Eigen::VectorXd& row_norms() const { return row_norms_; }

  /// Record positions per shard, each ascending. Shard = fnv1a64(record_id) % shard_count.
  const std::vector<std::vector<std::size_t>>& shards() const { return shards_; }

  std::vector<std::string> speakers() const;
  std::size_t session_count() const;
  std::map<std::string, std::size_t> records_per_speaker() const;

  /// Copy with embeddings installed for the given positions.
  MemoryBank with_embeddings(const std::vector<std::size_t>& positions, const EmbeddingMatrix& rows) const;

  bool operator==(const MemoryBank& other) const;

 private:
  std::vector<MemoryRecord> records_;
  EmbeddingMatrix embeddings_;
  std::vector<bool> has_embedding_;
  int dimension_ = kDefaultEmbeddingDimension;
  Eigen::VectorXd row_norms_;
  std::vector<std::vector<std::size_t>> shards_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Precomputed vectors keyed by record id.
using EmbeddingMap = std::unordered_map<std::string, Embedding>;

/// One record per message, in corpus order. Records absent from `embeddings`
/// stay unembedded; semantic search refuses them until they are filled in.
MemoryBank build_bank(const std::vector<Conversation>& conversations, const EmbeddingMap* embeddings = nullptr,
                      int dimension = kDefaultEmbeddingDimension, int shard_count = kDefaultShardCount);

/// A retrieved record with up to `radius` same-session neighbours each side.
struct MemoryGroup {
  std::size_t center = 0;
  std::vector<std::size_t> before;  // ascending message order
  std::vector<std::size_t> after;

  /// before + center + after, chronological.
  std::vector<std::size_t> positions() const;
};

/// Throws NotFoundError for an unknown id.
MemoryGroup context_group(const MemoryBank& bank, std::string_view record_id, int radius = 2);
MemoryGroup context_group_at(const MemoryBank& bank, std::size_t position, int radius = 2);

inline constexpr int kBankFormatVersion = 1;

/// Writes records.jsonl, embeddings.f32 (little-endian float32 rows for the
/// embedded records, in JSONL order) and manifest.json.
void persist(const MemoryBank& bank, const std::filesystem::path& dir);

/// Throws VersionError, TruncatedError, ValidationError (dimension/checksum) or NotFoundError.
MemoryBank load_bank(const std::filesystem::path& dir, std::optional<int> expected_dimension = std::nullopt);

}  // namespace sumer
