// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace sumer {

extern const std::string_view kSystemPrompt;

struct SeedMemory {
  std::string timestamp;
  std::string text;  // "<Speaker>: <content>"
};

struct SeedSection {
  std::string speaker;
  std::vector<SeedMemory> memories;
};

struct TrainingPromptFields {
  std::size_t total_memories = 0;
  std::string breakdown;         // "Deborah: 340 memories, Jolene: 341 memories"
  std::size_t num_sessions = 0;
  std::string speakers;          // "Deborah and Jolene"
  std::string level_descriptor;  // what a memory is
  std::string question;
  int max_turns = 20;
  std::vector<SeedSection> seed_sections;
};

inline constexpr std::string_view kConversationLevelDescriptor =
    "conversation-level memories (individual messages with metadata)";

std::string render_training_prompt(const TrainingPromptFields& fields);

std::string render_judge_prompt(std::string_view question, std::string_view gold_answer,
                                std::string_view generated_answer);

/// OpenAI "tools" array for search_memory and submit_answer.
nlohmann::json tool_schemas();

}  // namespace sumer
