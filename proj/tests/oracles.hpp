// SPDX-License-Identifier: Apache-2.0
// Reference implementations and random inputs shared by the unit tests and
// the acceptance runner.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sumer/memory_store.hpp"
#include "sumer/rlvr.hpp"
#include "sumer/search.hpp"

namespace oracles {

using namespace sumer;

inline const std::vector<std::string> kVocabulary = {"tournament", "dog",     "screenplay", "festival", "walk", "Max",
                                                     "game",       "win",     "draft",      "pottery",  "blue", "coast",
                                                     "kitten",     "party",   "May",        "June",     "2022", "pm"};

inline Conversation random_conversation(std::mt19937& rng, const std::string& id, std::array<std::string, 2> speakers,
                                        int max_messages) {
  Conversation c;
  c.conversation_id = id;
  c.speakers = speakers;
  std::uniform_int_distribution<int> n_sessions(1, 6), n_words(1, 8), word(0, static_cast<int>(kVocabulary.size()) - 1),
      coin(0, 1);
  int remaining = max_messages;
  const int sessions = n_sessions(rng);
  for (int s = 1; s <= sessions && remaining > 0; ++s) {
    Session session;
    session.session_index = s;
    session.timestamp = std::to_string(1 + s % 12) + ":00 pm on " + std::to_string(s) + " May, 2023";
    std::uniform_int_distribution<int> n_messages(1, std::max(1, std::min(remaining, max_messages / sessions + 1)));
    const int messages = n_messages(rng);
    for (int m = 1; m <= messages; ++m) {
      std::string text;
      for (int w = n_words(rng); w > 0; --w) text += kVocabulary[word(rng)] + (w > 1 ? " " : ".");
      session.messages.push_back({speakers[coin(rng)], text, m, session.timestamp});
    }
    remaining -= messages;
    c.sessions.push_back(std::move(session));
  }
  return c;
}

inline MemoryBank random_bank(std::mt19937& rng, int dimension, int max_records, bool embed) {
  std::vector<Conversation> convs = {random_conversation(rng, "conv-a", {"Ann", "Ben"}, max_records / 2),
                                     random_conversation(rng, "conv-b", {"Cat", "Ann"}, max_records / 2)};
  auto bank = build_bank(convs, nullptr, dimension, 1 + static_cast<int>(rng() % 40));
  if (!embed) return bank;
  std::normal_distribution<float> normal;
  std::vector<std::size_t> positions(bank.size());
  EmbeddingMatrix rows(static_cast<Eigen::Index>(bank.size()), dimension);
  for (std::size_t p = 0; p < bank.size(); ++p) {
    positions[p] = p;
    for (int k = 0; k < dimension; ++k) rows(static_cast<Eigen::Index>(p), k) = normal(rng);
  }
  return bank.with_embeddings(positions, rows);
}

inline SearchFilters random_filters(std::mt19937& rng) {
  SearchFilters f;
  const std::vector<std::string> speakers = {"Ann", "Ben", "Cat"};
  if (rng() % 3 == 0) f.speaker = speakers[rng() % 3];
  if (rng() % 3 == 0) f.session = 1 + static_cast<int>(rng() % 6);
  return f;
}

/// Neighbours within `radius` in the same conversation and session, by message order.
inline std::vector<std::size_t> oracle_group(const MemoryBank& bank, std::size_t center, int radius) {
  const auto& c = bank.record(center);
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < bank.size(); ++p) {
    const auto& r = bank.record(p);
    if (r.conversation_id == c.conversation_id && r.session_index == c.session_index &&
        std::abs(r.message_index - c.message_index) <= radius) {
      out.push_back(p);
    }
  }
  return out;
}

struct OracleHit {
  long double score;
  std::size_t position;
};

inline std::vector<OracleHit> exhaustive_cosine(const MemoryBank& bank, const Embedding& q, int k, const SearchFilters& f) {
  std::vector<OracleHit> hits;
  for (std::size_t p = 0; p < bank.size(); ++p) {
    const auto& r = bank.record(p);
    if (f.speaker && r.speaker != *f.speaker) continue;
    if (f.session && r.session_index != *f.session) continue;
    long double dot = 0, nq = 0, nr = 0;
    for (Eigen::Index d = 0; d < q.size(); ++d) {
      const long double a = q(d), b = bank.embedding(p)(d);
      dot += a * b;
      nq += a * a;
      nr += b * b;
    }
    hits.push_back({dot / std::sqrt(nq * nr), p});
  }
  std::stable_sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& b) { return a.score > b.score; });
  if (hits.size() > static_cast<std::size_t>(k)) hits.resize(static_cast<std::size_t>(k));
  return hits;
}

inline std::vector<std::size_t> linear_keyword_scan(const MemoryBank& bank, const std::vector<std::string>& keywords,
                                             const SearchFilters& f, std::size_t cap) {
  auto lower = [](std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
  };
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < bank.size() && out.size() < cap; ++p) {
    const auto& r = bank.record(p);
    if (f.speaker && r.speaker != *f.speaker) continue;
    if (f.session && r.session_index != *f.session) continue;
    const std::vector<std::string> fields = {r.content,           r.conversation_id,   r.speaker,
                                             std::to_string(r.session_index), r.session_timestamp,
                                             r.message_timestamp};
    bool all = true;
    for (const auto& k : keywords) {
      bool any = false;
      for (const auto& field : fields) any = any || lower(field).find(lower(k)) != std::string::npos;
      all = all && any;
    }
    if (all) out.push_back(p);
  }
  return out;
}

template <class Scalar>
inline GRPOBatch<Scalar> random_batch(std::mt19937_64& rng, int max_rollouts = 8, int max_tokens = 64) {
  std::uniform_int_distribution<int> n_rollouts(1, max_rollouts), n_tokens(1, max_tokens), bit(0, 1);
  std::uniform_real_distribution<double> old_lp(-3.0, -0.05);
  std::normal_distribution<double> drift(0.0, 0.3), adv(0.0, 1.0);
  GRPOBatch<Scalar> b;
  b.per_token_mean = bit(rng) == 1;
  for (int i = n_rollouts(rng); i > 0; --i) {
    const int n = n_tokens(rng);
    RolloutTokens<Scalar> r;
    r.loss_mask.resize(n);
    r.old_logprobs.resize(n);
    r.new_logprobs.resize(n);
    for (int t = 0; t < n; ++t) {
      r.loss_mask(t) = static_cast<Scalar>(bit(rng));
      r.old_logprobs(t) = static_cast<Scalar>(old_lp(rng));
      r.new_logprobs(t) = static_cast<Scalar>(std::min(-0.01, static_cast<double>(r.old_logprobs(t)) + drift(rng)));
    }
    r.advantage = static_cast<Scalar>(bit(rng) && bit(rng) ? 0.0 : adv(rng));
    b.rollouts.push_back(std::move(r));
  }
  return b;
}

template <class To, class From>
inline GRPOBatch<To> cast_batch(const GRPOBatch<From>& b) {
  GRPOBatch<To> out;
  out.clip_low = static_cast<To>(b.clip_low);
  out.clip_high = static_cast<To>(b.clip_high);
  out.per_token_mean = b.per_token_mean;
  for (const auto& r : b.rollouts) {
    out.rollouts.push_back({r.token_stream, r.loss_mask.template cast<To>(), r.old_logprobs.template cast<To>(),
                            r.new_logprobs.template cast<To>(), static_cast<To>(r.advantage)});
  }
  return out;
}

/// Plain loops, no Eigen expressions.
inline double naive_objective(const GRPOBatch<double>& b) {
  double j = 0.0;
  const double g = static_cast<double>(b.rollouts.size());
  for (const auto& r : b.rollouts) {
    double learned = 0.0;
    for (Eigen::Index t = 0; t < r.loss_mask.size(); ++t) learned += r.loss_mask(t);
    double w = 1.0 / g;
    if (b.per_token_mean && learned > 0) w /= learned;
    double sum = 0.0;
    for (Eigen::Index t = 0; t < r.loss_mask.size(); ++t) {
      if (r.loss_mask(t) == 0.0) continue;
      const double rho = std::exp(r.new_logprobs(t) - r.old_logprobs(t));
      const double clipped = std::clamp(rho, 1.0 - b.clip_low, 1.0 + b.clip_high);
      sum += std::min(rho * r.advantage, clipped * r.advantage);
    }
    j += w * sum;
  }
  return j;
}

inline GRPOBatch<double> single_token(double rho, double advantage) {
  GRPOBatch<double> b;
  RolloutTokens<double> r;
  r.loss_mask = ArrayX<double>::Ones(1);
  r.old_logprobs = ArrayX<double>::Constant(1, -1.0);
  r.new_logprobs = ArrayX<double>::Constant(1, -1.0 + std::log(rho));
  r.advantage = advantage;
  b.rollouts.push_back(r);
  return b;
}

/// Judge double with a fixed verdict; counts calls.
class FixedJudge final : public Judge {
 public:
  explicit FixedJudge(Verdict v, bool failure = false) : v_(v), failure_(failure) {}
  JudgeResult judge(const std::string&, const std::string&, const std::string&) override {
    ++calls;
    return {v_, failure_, ""};
  }
  std::string model_id() const override { return "fixed"; }
  int calls = 0;

 private:
  Verdict v_;
  bool failure_;
};

}  // namespace oracles
