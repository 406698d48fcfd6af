// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit tests.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sumer/backends.hpp"
#include "sumer/corpus.hpp"
#include "sumer/errors.hpp"
#include "sumer/memory_store.hpp"
#include "sumer/util.hpp"

namespace testing {

inline std::filesystem::path test_dir() { return SUMER_TEST_DIR; }
inline std::filesystem::path fixture(const std::string& name) { return test_dir() / "fixtures" / name; }
inline std::string golden(const std::string& name) { return sumer::read_file(test_dir() / "golden" / name); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sumer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline sumer::Dataset mini_dataset() {
  return sumer::load_dataset(fixture("locomo_mini.json"), sumer::DatasetFormat::LocomoJson);
}

inline const sumer::DatasetEntry& entry(const sumer::Dataset& ds, const std::string& id) {
  for (const auto& e : ds) {
    if (e.conversation.conversation_id == id) return e;
  }
  throw sumer::NotFoundError(id);
}

/// Same vector for every text: all cosine scores tie at 1.
class ConstantEmbedder final : public sumer::Embedder {
 public:
  explicit ConstantEmbedder(int d = 8) : d_(d) {}
  sumer::EmbeddingMatrix embed(const std::vector<std::string>& texts) override {
    calls += texts.size();
    return sumer::EmbeddingMatrix::Ones(static_cast<Eigen::Index>(texts.size()), d_);
  }
  int dimension() const override { return d_; }
  std::size_t calls = 0;

 private:
  int d_;
};

inline sumer::MemoryBank embedded_bank(const sumer::Conversation& c, sumer::Embedder& e) {
  auto bank = sumer::build_bank({c}, nullptr, e.dimension());
  std::vector<std::size_t> positions;
  std::vector<std::string> texts;
  for (std::size_t p = 0; p < bank.size(); ++p) {
    positions.push_back(p);
    texts.push_back(bank.record(p).content);
  }
  return bank.with_embeddings(positions, e.embed(texts));
}

/// Two speakers, two sessions, two messages each.
inline sumer::Conversation small_conversation() {
  sumer::Conversation c;
  c.conversation_id = "conv-g";
  c.speakers = {"Joanna", "Nate"};
  sumer::Session s1;
  s1.session_index = 1;
  s1.timestamp = "11:54 am on 2 May 2022";
  s1.messages = {{"Joanna", "Hey Nate!", 1, s1.timestamp}, {"Nate", "Last week I won my second tournament!", 2, s1.timestamp}};
  sumer::Session s2;
  s2.session_index = 2;
  s2.timestamp = "3:00 pm on 25 May 2022";
  s2.messages = {{"Nate", "I took Max for a walk.", 1, s2.timestamp}, {"Joanna", "Max is adorable.", 2, s2.timestamp}};
  c.sessions = {s1, s2};
  return c;
}

}  // namespace testing
