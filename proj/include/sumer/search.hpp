// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sumer/memory_store.hpp"

namespace sumer {

enum class SearchMode { Semantic, Keyword };

std::string_view search_mode_tool_name(SearchMode mode);  // "semantic_search" / "keyword_search"

struct SearchFilters {
  std::optional<std::string> speaker;  // exact match on the speaker name
  std::optional<int> session;          // session_index

  bool accepts(const MemoryRecord& r) const;
  /// "speaker: Nate, session: 3", or empty when no filter is set.
  std::string describe() const;
};

struct SearchQuery {
  SearchMode mode = SearchMode::Semantic;
  std::optional<std::string> query_text;
  std::vector<std::string> keywords;
  int top_k = 5;
  SearchFilters filters;

  /// Semantic needs query_text, Keyword needs non-empty keywords, top_k >= 1.
  void validate() const;
};

struct ScoredGroup {
  MemoryGroup group;
  double score = 0.0;  // cosine similarity for Semantic, 0 for Keyword
};

struct SearchResult {
  SearchMode mode_used = SearchMode::Semantic;
  std::vector<ScoredGroup> groups;
  std::string filters_echoed;
};

/// Cosine similarity of two dense vectors; 0 when either has zero norm.
template <class DerivedA, class DerivedB>
auto cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar denom = a.norm() * b.norm();
  if (denom == Scalar(0)) return Scalar(0);
  return a.dot(b) / denom;
}

struct SearchOptions {
  int context_radius = 2;  // 0 disables context groups
  int keyword_cap = 20;
};

/// Top-k by cosine similarity among filtered records, ties by corpus position.
/// Throws CapabilityError if any filtered candidate lacks an embedding.
SearchResult semantic_search(const MemoryBank& bank, const Eigen::Ref<const Eigen::VectorXf>& query_embedding,
                             int top_k, const SearchFilters& filters = {}, const SearchOptions& options = {});

/// Records where every keyword occurs (case-insensitive substring) in the
/// content or any metadata value, in corpus order, truncated to `cap`.
SearchResult keyword_search(const MemoryBank& bank, const std::vector<std::string>& keywords,
                            const SearchFilters& filters = {}, const SearchOptions& options = {});

/// Tool response text shown to the agent.
std::string format_tool_response(const MemoryBank& bank, const SearchResult& result, int turns_remaining);

/// "[turns remaining: N]"
std::string turns_remaining_line(int turns_remaining);

}  // namespace sumer
