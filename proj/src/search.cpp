// SPDX-License-Identifier: Apache-2.0
#include "sumer/search.hpp"

#include <algorithm>

#include "sumer/errors.hpp"
#include "sumer/util.hpp"

namespace sumer {

std::string_view search_mode_tool_name(SearchMode mode) {
  return mode == SearchMode::Semantic ? "semantic_search" : "keyword_search";
}

bool SearchFilters::accepts(const MemoryRecord& r) const {
  if (speaker && r.speaker != *speaker) return false;
  if (session && r.session_index != *session) return false;
  return true;
}

std::string SearchFilters::describe() const {
  std::string out;
  if (speaker) out += "speaker: " + *speaker;
  if (session) {
    if (!out.empty()) out += ", ";
    out += "session: " + std::to_string(*session);
  }
  return out;
}

void SearchQuery::validate() const {
  if (top_k < 1) throw ValidationError("top_k must be at least 1");
  if (mode == SearchMode::Semantic && (!query_text || trim(*query_text).empty())) {
    throw ValidationError("semantic search requires a non-empty query");
  }
  if (mode == SearchMode::Keyword) {
    if (keywords.empty()) throw ValidationError("keyword search requires at least one keyword");
    for (const auto& k : keywords) {
      if (trim(k).empty()) throw ValidationError("keywords must be non-empty strings");
    }
  }
}

namespace {

struct Candidate {
  double score;
  std::size_t position;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.position < b.position;
}

void keep_top(std::vector<Candidate>& c, std::size_t k) {
  if (c.size() > k) {
    std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k), c.end(), ranks_before);
    c.resize(k);
  } else {
    std::sort(c.begin(), c.end(), ranks_before);
  }
}

}  // namespace

SearchResult semantic_search(const MemoryBank& bank, const Eigen::Ref<const Eigen::VectorXf>& query_embedding,
                             int top_k, const SearchFilters& filters, const SearchOptions& options) {
  if (top_k < 1) throw ValidationError("top_k must be at least 1");
  if (query_embedding.size() != bank.dimension()) {
    throw ValidationError("query embedding has dimension " + std::to_string(query_embedding.size()) + ", bank has " +
                          std::to_string(bank.dimension()));
  }
  const Eigen::VectorXd query = query_embedding.cast<double>();
  const double query_norm = query.norm();
  const auto k = static_cast<std::size_t>(top_k);

  // Scan each shard, keep its local top-k, then merge.
  std::vector<Candidate> merged;
  for (const auto& shard : bank.shards()) {
    std::vector<Candidate> local;
    for (auto p : shard) {
      const auto& r = bank.record(p);
      if (!filters.accepts(r)) continue;
      if (!bank.has_embedding(p)) {
        throw CapabilityError("semantic search refused: record " + r.record_id + " has no embedding");
      }
      const double denom = bank.row_norms()(static_cast<Eigen::Index>(p)) * query_norm;
      double score = denom == 0.0 ? 0.0 : bank.embedding(p).cast<double>().dot(query) / denom;
      score = std::clamp(score, -1.0, 1.0);
      local.push_back({score, p});
    }
    keep_top(local, k);
    merged.insert(merged.end(), local.begin(), local.end());
  }
  keep_top(merged, k);

  SearchResult result;
  result.mode_used = SearchMode::Semantic;
  result.filters_echoed = filters.describe();
  for (const auto& c : merged) {
    result.groups.push_back({context_group_at(bank, c.position, options.context_radius), c.score});
  }
  return result;
}

SearchResult keyword_search(const MemoryBank& bank, const std::vector<std::string>& keywords,
                            const SearchFilters& filters, const SearchOptions& options) {
  if (keywords.empty()) throw ValidationError("keyword search requires at least one keyword");
  std::vector<std::string> needles;
  for (const auto& k : keywords) {
    auto n = to_lower(trim(k));
    if (n.empty()) throw ValidationError("keywords must be non-empty strings");
    needles.push_back(std::move(n));
  }
  SearchResult result;
  result.mode_used = SearchMode::Keyword;
  result.filters_echoed = filters.describe();
  const auto cap = static_cast<std::size_t>(std::max(options.keyword_cap, 0));
  for (std::size_t p = 0; p < bank.size() && result.groups.size() < cap; ++p) {
    const auto& r = bank.record(p);
    if (!filters.accepts(r)) continue;
    std::vector<std::string> haystacks{to_lower(r.content)};
    for (auto& v : metadata_values(r)) haystacks.push_back(to_lower(v));
    const bool all = std::all_of(needles.begin(), needles.end(), [&](const std::string& n) {
      return std::any_of(haystacks.begin(), haystacks.end(),
                         [&](const std::string& h) { return h.find(n) != std::string::npos; });
    });
    if (all) result.groups.push_back({context_group_at(bank, p, options.context_radius), 0.0});
  }
  return result;
}

std::string turns_remaining_line(int turns_remaining) {
  return "[turns remaining: " + std::to_string(turns_remaining) + "]";
}

std::string format_tool_response(const MemoryBank& bank, const SearchResult& result, int turns_remaining) {
  std::string out = "Found " + std::to_string(result.groups.size()) + " relevant memories using " +
                    std::string(search_mode_tool_name(result.mode_used));
  if (!result.filters_echoed.empty()) out += " (filtered by: " + result.filters_echoed + ")";
  out += ":\n\n";
  int i = 0;
  for (const auto& g : result.groups) {
    const auto& center = bank.record(g.group.center);
    out += "Memory " + std::to_string(++i) + " [Time: " + center.message_timestamp + "]:\n";
    for (auto p : g.group.positions()) {
      const auto& r = bank.record(p);
      out += r.speaker + ": " + r.content + "\n";
    }
    out += "\n";
  }
  out += turns_remaining_line(turns_remaining);
  return out;
}

}  // namespace sumer
