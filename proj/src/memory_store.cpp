// SPDX-License-Identifier: Apache-2.0
#include "sumer/memory_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "sumer/errors.hpp"
#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

std::string make_record_id(std::string_view conversation_id, int session_index, int message_index) {
  return std::string(conversation_id) + "/" + std::to_string(session_index) + "/" + std::to_string(message_index);
}

std::vector<std::string> metadata_values(const MemoryRecord& r) {
  return {r.conversation_id, r.speaker, std::to_string(r.session_index), r.session_timestamp, r.message_timestamp};
}

MemoryBank::MemoryBank(std::vector<MemoryRecord> records, EmbeddingMatrix embeddings, std::vector<bool> has_embedding,
                       int dimension, int shard_count)
    : records_(std::move(records)),
      embeddings_(std::move(embeddings)),
      has_embedding_(std::move(has_embedding)),
      dimension_(dimension) {
  if (dimension_ <= 0) throw ValidationError("embedding dimension must be positive");
  if (shard_count <= 0) throw ValidationError("shard count must be positive");
  const auto n = static_cast<Eigen::Index>(records_.size());
  if (has_embedding_.size() != records_.size()) throw ValidationError("embedding flags do not match record count");
  if (embeddings_.rows() != n || embeddings_.cols() != dimension_) {
    throw ValidationError("embedding matrix is " + std::to_string(embeddings_.rows()) + "x" +
                          std::to_string(embeddings_.cols()) + ", expected " + std::to_string(n) + "x" +
                          std::to_string(dimension_));
  }

  std::set<std::tuple<std::string, int, int>> seen;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!seen.emplace(r.conversation_id, r.session_index, r.message_index).second) {
      throw ValidationError("duplicate memory record " + r.record_id);
    }
    if (!by_id_.emplace(r.record_id, i).second) throw ValidationError("duplicate record id " + r.record_id);
    if (has_embedding_[i] && !embeddings_.row(static_cast<Eigen::Index>(i)).allFinite()) {
      throw ValidationError("non-finite embedding for record " + r.record_id);
    }
  }

  row_norms_ = embeddings_.cast<double>().rowwise().norm();

  shards_.assign(static_cast<std::size_t>(shard_count), {});
  for (std::size_t i = 0; i < records_.size(); ++i) {
    shards_[fnv1a64(records_[i].record_id) % static_cast<std::uint64_t>(shard_count)].push_back(i);
  }
}

std::optional<std::size_t> MemoryBank::position_of(std::string_view record_id) const {
  auto it = by_id_.find(std::string(record_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t MemoryBank::embedded_count() const {
  return static_cast<std::size_t>(std::count(has_embedding_.begin(), has_embedding_.end(), true));
}

std::vector<std::string> MemoryBank::speakers() const {
  std::vector<std::string> out;
  for (const auto& r : records_) {
    if (std::find(out.begin(), out.end(), r.speaker) == out.end()) out.push_back(r.speaker);
  }
  return out;
}

std::size_t MemoryBank::session_count() const {
  std::set<std::pair<std::string, int>> sessions;
  for (const auto& r : records_) sessions.emplace(r.conversation_id, r.session_index);
  return sessions.size();
}

std::map<std::string, std::size_t> MemoryBank::records_per_speaker() const {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records_) ++out[r.speaker];
  return out;
}

MemoryBank MemoryBank::with_embeddings(const std::vector<std::size_t>& positions, const EmbeddingMatrix& rows) const {
  if (rows.rows() != static_cast<Eigen::Index>(positions.size())) {
    throw ValidationError("with_embeddings: row count does not match positions");
  }
  if (rows.cols() != dimension_) {
    throw ValidationError("embedding dimension mismatch: got " + std::to_string(rows.cols()) + ", bank has " +
                          std::to_string(dimension_));
  }
  auto matrix = embeddings_;
  auto flags = has_embedding_;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    matrix.row(static_cast<Eigen::Index>(positions.at(k))) = rows.row(static_cast<Eigen::Index>(k));
    flags.at(positions[k]) = true;
  }
  return MemoryBank(records_, std::move(matrix), std::move(flags), dimension_, shard_count());
}

bool MemoryBank::operator==(const MemoryBank& other) const {
  if (records_ != other.records_ || has_embedding_ != other.has_embedding_ || dimension_ != other.dimension_) {
    return false;
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!has_embedding_[i]) continue;
    const auto a = embeddings_.row(static_cast<Eigen::Index>(i));
    const auto b = other.embeddings_.row(static_cast<Eigen::Index>(i));
    if (std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(dimension_)) != 0) return false;
  }
  return true;
}

MemoryBank build_bank(const std::vector<Conversation>& conversations, const EmbeddingMap* embeddings, int dimension,
                      int shard_count) {
  std::vector<MemoryRecord> records;
  for (const auto& c : conversations) {
    for (const auto& s : c.sessions) {
      for (const auto& m : s.messages) {
        records.push_back({make_record_id(c.conversation_id, s.session_index, m.message_index), c.conversation_id,
                           m.speaker, s.session_index, m.message_index, s.timestamp, m.timestamp, m.text});
      }
    }
  }
  EmbeddingMatrix matrix = EmbeddingMatrix::Zero(static_cast<Eigen::Index>(records.size()), dimension);
  std::vector<bool> flags(records.size(), false);
  if (embeddings != nullptr) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto it = embeddings->find(records[i].record_id);
      if (it == embeddings->end()) continue;
      if (it->second.size() != dimension) {
        throw ValidationError("embedding for " + records[i].record_id + " has dimension " +
                              std::to_string(it->second.size()) + ", expected " + std::to_string(dimension));
      }
      matrix.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
      flags[i] = true;
    }
  }
  return MemoryBank(std::move(records), std::move(matrix), std::move(flags), dimension, shard_count);
}

std::vector<std::size_t> MemoryGroup::positions() const {
  std::vector<std::size_t> out(before);
  out.push_back(center);
  out.insert(out.end(), after.begin(), after.end());
  return out;
}

MemoryGroup context_group_at(const MemoryBank& bank, std::size_t position, int radius) {
  const auto& center = bank.record(position);
  MemoryGroup g;
  g.center = position;
  auto same_session = [&](std::size_t p) {
    const auto& r = bank.record(p);
    return r.conversation_id == center.conversation_id && r.session_index == center.session_index;
  };
  // Records are in corpus order, so same-session neighbours are adjacent positions.
  for (int k = radius; k >= 1; --k) {
    if (position < static_cast<std::size_t>(k)) continue;
    const auto p = position - static_cast<std::size_t>(k);
    if (same_session(p)) g.before.push_back(p);
  }
  for (int k = 1; k <= radius; ++k) {
    const auto p = position + static_cast<std::size_t>(k);
    if (p >= bank.size() || !same_session(p)) break;
    g.after.push_back(p);
  }
  return g;
}

MemoryGroup context_group(const MemoryBank& bank, std::string_view record_id, int radius) {
  auto pos = bank.position_of(record_id);
  if (!pos) throw NotFoundError("unknown memory record: " + std::string(record_id));
  return context_group_at(bank, *pos, radius);
}

namespace {

json record_to_json(const MemoryRecord& r, bool embedded) {
  return {{"record_id", r.record_id},
          {"conversation_id", r.conversation_id},
          {"speaker", r.speaker},
          {"session_index", r.session_index},
          {"message_index", r.message_index},
          {"session_timestamp", r.session_timestamp},
          {"message_timestamp", r.message_timestamp},
          {"content", r.content},
          {"embedded", embedded}};
}

std::string encode_f32_le(const MemoryBank& bank) {
  std::string out;
  out.reserve(bank.embedded_count() * static_cast<std::size_t>(bank.dimension()) * 4);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (!bank.has_embedding(i)) continue;
    const auto row = bank.embedding(i);
    for (Eigen::Index d = 0; d < row.size(); ++d) {
      auto bits = std::bit_cast<std::uint32_t>(row(d));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return out;
}

}  // namespace

void persist(const MemoryBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string records;
  for (std::size_t i = 0; i < bank.size(); ++i) records += record_to_json(bank.record(i), bank.has_embedding(i)).dump() + "\n";
  const auto vectors = encode_f32_le(bank);
  json manifest = {{"format", "sumer-memory-bank"},
                   {"version", kBankFormatVersion},
                   {"dimension", bank.dimension()},
                   {"count", bank.size()},
                   {"embedded_count", bank.embedded_count()},
                   {"shard_count", bank.shard_count()},
                   {"records_sha256", sha256_hex(records)},
                   {"embeddings_sha256", sha256_hex(vectors)}};
  write_file_atomic(dir / "records.jsonl", records);
  write_file_atomic(dir / "embeddings.f32", vectors);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

MemoryBank load_bank(const std::filesystem::path& dir, std::optional<int> expected_dimension) {
  if (!std::filesystem::exists(dir / "manifest.json")) throw NotFoundError("no memory bank at " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ParseError("bank manifest " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "sumer-memory-bank") throw ParseError("not a memory bank manifest: " + dir.string());
  if (manifest.value("version", -1) != kBankFormatVersion) {
    throw VersionError("memory bank version " + manifest.value("version", json()).dump() + " unsupported (expected " +
                       std::to_string(kBankFormatVersion) + ")");
  }
  const int dimension = manifest.at("dimension").get<int>();
  if (expected_dimension && *expected_dimension != dimension) {
    throw ValidationError("memory bank dimension " + std::to_string(dimension) + " does not match expected " +
                          std::to_string(*expected_dimension));
  }
  const auto count = manifest.at("count").get<std::size_t>();
  const auto embedded = manifest.at("embedded_count").get<std::size_t>();

  const auto records_text = read_file(dir / "records.jsonl");
  if (sha256_hex(records_text) != manifest.at("records_sha256").get<std::string>()) {
    throw ValidationError("records.jsonl checksum mismatch in " + dir.string());
  }
  std::vector<MemoryRecord> records;
  std::vector<bool> flags;
  std::istringstream in(records_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    records.push_back({j.at("record_id").get<std::string>(), j.at("conversation_id").get<std::string>(),
                       j.at("speaker").get<std::string>(), j.at("session_index").get<int>(),
                       j.at("message_index").get<int>(), j.at("session_timestamp").get<std::string>(),
                       j.at("message_timestamp").get<std::string>(), j.at("content").get<std::string>()});
    flags.push_back(j.at("embedded").get<bool>());
  }
  if (records.size() != count) {
    throw ValidationError("manifest declares " + std::to_string(count) + " records, found " + std::to_string(records.size()));
  }
  if (static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true)) != embedded) {
    throw ValidationError("manifest embedded_count disagrees with records.jsonl");
  }

  const auto vectors = read_file(dir / "embeddings.f32");
  const auto expected_bytes = embedded * static_cast<std::size_t>(dimension) * 4;
  if (vectors.size() != expected_bytes) {
    throw TruncatedError("embeddings.f32 has " + std::to_string(vectors.size()) + " bytes, expected " +
                         std::to_string(expected_bytes));
  }
  if (sha256_hex(vectors) != manifest.at("embeddings_sha256").get<std::string>()) {
    throw ValidationError("embeddings.f32 checksum mismatch in " + dir.string());
  }
  EmbeddingMatrix matrix = EmbeddingMatrix::Zero(static_cast<Eigen::Index>(count), dimension);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (!flags[i]) continue;
    for (int d = 0; d < dimension; ++d) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(vectors[offset++])) << (8 * b);
      matrix(static_cast<Eigen::Index>(i), d) = std::bit_cast<float>(bits);
    }
  }
  return MemoryBank(std::move(records), std::move(matrix), std::move(flags), dimension,
                    manifest.value("shard_count", kDefaultShardCount));
}

}  // namespace sumer
