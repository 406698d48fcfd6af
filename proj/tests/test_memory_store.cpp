// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "sumer/memory_store.hpp"

using namespace sumer;
using nlohmann::json;

namespace {

MemoryBank nj_bank() { return build_bank({testing::entry(testing::mini_dataset(), "conv-nj").conversation}, nullptr, 4); }

std::vector<std::string> ids(const MemoryBank& bank, const std::vector<std::size_t>& positions) {
  std::vector<std::string> out;
  for (auto p : positions) out.push_back(bank.record(p).record_id);
  return out;
}

}  // namespace

TEST_SUITE("memory_store") {

TEST_CASE("one record per message in corpus order") {
  const auto bank = nj_bank();
  REQUIRE(bank.size() == 14);
  CHECK(bank.record(0).record_id == "conv-nj/1/1");
  CHECK(bank.record(7).record_id == "conv-nj/2/1");
  CHECK(bank.record(13).record_id == "conv-nj/3/3");
  CHECK(bank.record(1).speaker == "Nate");
  CHECK(bank.record(1).session_timestamp == "11:54 am on 2 May 2022");
  CHECK(bank.position_of("conv-nj/2/3") == std::optional<std::size_t>(9));
  CHECK_FALSE(bank.position_of("conv-nj/9/9"));
  CHECK(bank.embedded_count() == 0);
  CHECK(bank.speakers() == std::vector<std::string>{"Joanna", "Nate"});
  CHECK(bank.session_count() == 3);
  CHECK(bank.records_per_speaker().at("Nate") == 6);
}

TEST_CASE("shards partition the records by record-id hash") {
  const auto bank = build_bank({testing::entry(testing::mini_dataset(), "conv-nj").conversation}, nullptr, 4, 5);
  std::size_t total = 0;
  for (std::size_t s = 0; s < bank.shards().size(); ++s) {
    for (auto p : bank.shards()[s]) {
      CHECK(fnv1a64(bank.record(p).record_id) % 5 == s);
      ++total;
    }
  }
  CHECK(total == bank.size());
}

TEST_CASE("context groups stay inside the session") {
  const auto bank = nj_bank();
  // Session 1 has 7 messages: positions 0..6.
  auto g = context_group(bank, "conv-nj/1/4");
  CHECK(ids(bank, g.positions()) ==
        std::vector<std::string>{"conv-nj/1/2", "conv-nj/1/3", "conv-nj/1/4", "conv-nj/1/5", "conv-nj/1/6"});
  g = context_group(bank, "conv-nj/1/1");
  CHECK(g.before.empty());
  CHECK(ids(bank, g.after) == std::vector<std::string>{"conv-nj/1/2", "conv-nj/1/3"});
  g = context_group(bank, "conv-nj/1/7");  // last of session 1, next session not crossed
  CHECK(ids(bank, g.before) == std::vector<std::string>{"conv-nj/1/5", "conv-nj/1/6"});
  CHECK(g.after.empty());
  g = context_group(bank, "conv-nj/2/1");
  CHECK(g.before.empty());
  g = context_group(bank, "conv-nj/1/4", 0);
  CHECK(g.positions() == std::vector<std::size_t>{3});
  CHECK_THROWS_AS(context_group(bank, "nope"), NotFoundError);
}

TEST_CASE("embeddings are validated") {
  const auto conv = testing::entry(testing::mini_dataset(), "conv-ab").conversation;
  EmbeddingMap map;
  map["conv-ab/1/1"] = Embedding::Ones(4);
  const auto bank = build_bank({conv}, &map, 4);
  CHECK(bank.embedded_count() == 1);
  CHECK(bank.has_embedding(0));
  CHECK_FALSE(bank.has_embedding(1));

  map["conv-ab/1/2"] = Embedding::Ones(3);
  CHECK_THROWS_AS(build_bank({conv}, &map, 4), ValidationError);
  map["conv-ab/1/2"] = Embedding::Constant(4, std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(build_bank({conv}, &map, 4), ValidationError);

  auto dup = conv;
  dup.sessions[0].messages[1].message_index = 1;
  CHECK_THROWS_AS(build_bank({dup}, nullptr, 4), ValidationError);
}

TEST_CASE("persist and load round-trip bit-exactly") {
  const auto dir = testing::scratch_dir("bank_roundtrip");
  const auto conv = testing::entry(testing::mini_dataset(), "conv-nj").conversation;
  std::mt19937 rng(3);
  std::normal_distribution<float> normal;
  EmbeddingMap map;
  for (int s = 1; s <= 3; ++s) {
    for (int m = 1; m <= 3; ++m) {
      Embedding e(6);
      for (int k = 0; k < 6; ++k) e(k) = normal(rng);
      map[make_record_id("conv-nj", s, m)] = e;
    }
  }
  map["conv-nj/1/5"] = Embedding::Constant(6, 1e-38f);  // denormal-adjacent values survive
  const auto bank = build_bank({conv}, &map, 6);
  persist(bank, dir);
  CHECK(std::filesystem::exists(dir / "records.jsonl"));
  CHECK(std::filesystem::file_size(dir / "embeddings.f32") == bank.embedded_count() * 6 * sizeof(float));
  const auto manifest = json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest.at("dimension") == 6);
  CHECK(manifest.at("count") == 14);
  CHECK(manifest.at("embedded_count") == 10);

  const auto loaded = load_bank(dir);
  CHECK(loaded == bank);
  CHECK(loaded.records() == bank.records());
  for (std::size_t p = 0; p < bank.size(); ++p) {
    if (!bank.has_embedding(p)) continue;
    for (int k = 0; k < 6; ++k) CHECK(loaded.embedding(p)(k) == bank.embedding(p)(k));
  }
  CHECK_THROWS_AS(load_bank(dir, 8), ValidationError);
}

TEST_CASE("load distinguishes version, truncation and checksum errors") {
  const auto conv = testing::entry(testing::mini_dataset(), "conv-ab").conversation;
  EmbeddingMap map;
  for (int m = 1; m <= 4; ++m) map[make_record_id("conv-ab", 1, m)] = Embedding::Ones(4) * static_cast<float>(m);
  const auto bank = build_bank({conv}, &map, 4);

  SUBCASE("version") {
    const auto dir = testing::scratch_dir("bank_version");
    persist(bank, dir);
    auto manifest = json::parse(read_file(dir / "manifest.json"));
    manifest["version"] = 99;
    write_file_atomic(dir / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_bank(dir), VersionError);
  }
  SUBCASE("truncated") {
    const auto dir = testing::scratch_dir("bank_truncated");
    persist(bank, dir);
    std::filesystem::resize_file(dir / "embeddings.f32", 4 * 4 * 3 + 2);
    CHECK_THROWS_AS(load_bank(dir), TruncatedError);
  }
  SUBCASE("checksum") {
    const auto dir = testing::scratch_dir("bank_checksum");
    persist(bank, dir);
    auto text = read_file(dir / "records.jsonl");
    text.replace(text.find("Pepper"), 6, "Peppar");
    write_file_atomic(dir / "records.jsonl", text);
    CHECK_THROWS_AS(load_bank(dir), ValidationError);
  }
  SUBCASE("missing") { CHECK_THROWS_AS(load_bank(testing::scratch_dir("bank_missing")), NotFoundError); }
}

TEST_CASE("with_embeddings fills rows and keeps records") {
  auto bank = nj_bank();
  EmbeddingMatrix rows(2, 4);
  rows << 1, 0, 0, 0, 0, 1, 0, 0;
  const auto filled = bank.with_embeddings({0, 5}, rows);
  CHECK(filled.embedded_count() == 2);
  CHECK(filled.embedding(5)(1) == 1.0f);
  CHECK(filled.records() == bank.records());
  CHECK_THROWS_AS(bank.with_embeddings({0}, EmbeddingMatrix::Ones(1, 3)), ValidationError);
}

}  // TEST_SUITE
