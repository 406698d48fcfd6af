// SPDX-License-Identifier: Apache-2.0
#include "sumer/prompts.hpp"

namespace sumer {

const std::string_view kSystemPrompt =
    "You are an expert at searching memory databases for question-answering. Your goal is to search through an "
    "existing memory database to find relevant information and provide an answer to a target question. Available "
    "tools are described below.";

std::string render_training_prompt(const TrainingPromptFields& f) {
  std::string out;
  out += "You have access to the following memory database: " + std::to_string(f.total_memories) +
         " total memories (" + f.breakdown + ") across " + std::to_string(f.num_sessions) + " sessions between " +
         f.speakers + ". The database contains " + f.level_descriptor +
         ". Each memory includes speaker, session, timestamp, and source metadata.\n\n";
  out += "Target Question: " + f.question + "\n\n";
  out +=
      "Your task is to search through the memory database to find relevant information that helps answer the above "
      "question, then submit your final answer.\n\n"
      "Instructions:\n"
      "1. Use the search_memory tool to find relevant memories that could help answer the question\n"
      "2. You may search multiple times with different queries and search types to gather comprehensive "
      "information\n"
      "3. Once you have found sufficient information, use the submit_answer tool to provide your final answer\n\n"
      "IMPORTANT: The question may require:\n"
      "- Information from a single session\n"
      "- Synthesizing information from multiple sessions\n"
      "- Temporal reasoning across conversations\n"
      "- Integrating speaker information with general knowledge\n\n"
      "INSTRUCTIONS for answering the question:\n"
      "1. Carefully analyze all provided memories\n"
      "2. Pay special attention to any timestamps or temporal information\n"
      "3. If the question asks about a specific event or fact, look for direct evidence in the memories\n"
      "4. If the memories contain contradictory information, prioritize the most recent information\n"
      "5. If there is a question about time references (like \"last year\", \"two months ago\", etc.), calculate "
      "the actual date based on context\n"
      "6. Always convert relative time references to specific dates, months, or years when possible\n"
      "7. Focus only on the content of the memories provided\n"
      "8. The answer should be concise and direct, less than 5-6 words when possible\n\n";
  out += "You have up to " + std::to_string(f.max_turns) +
         " turns to search for information and submit your answer. Focus on finding the most relevant memories to "
         "answer the question accurately.\n\n";
  out += "Here is some relevant context from the conversation database that may help answer the question:\n\n";
  for (const auto& section : f.seed_sections) {
    out += "======\nConversation Memories - " + section.speaker + "\n======\n\n";
    int i = 0;
    for (const auto& m : section.memories) {
      out += "-- Memory " + std::to_string(++i) + " --\n" + m.timestamp + "\n" + m.text + "\n\n";
    }
  }
  out += "Now, please search for more specific information and submit your final answer using the submit_answer tool.";
  return out;
}

std::string render_judge_prompt(std::string_view question, std::string_view gold_answer,
                                std::string_view generated_answer) {
  std::string out =
      "Your task is to label an answer to a question as ’CORRECT’ or ’WRONG’. You will be given "
      "the following data:\n\n"
      "    (1) a question (posed by one user to another user), \n\n"
      "    (2) a ’gold’ (ground truth) answer, \n\n"
      "    (3) a generated answer\n\n"
      "which you will score as CORRECT/WRONG.\n\n"
      "The point of the question is to ask about something one user should know about the other user based on their "
      "prior conversations.\n"
      "The gold answer will usually be a concise and short answer that includes the referenced topic, for example:\n\n"
      "Question: Do you remember what I got the last time I went to Hawaii?\n\n"
      "Gold answer: A shell necklace\n\n"
      "The generated answer might be much longer, but you should be generous with your grading - as long as it "
      "touches on the same topic as the gold answer, it should be counted as CORRECT. \n\n"
      "For time related questions, the gold answer will be a specific date, month, year, etc. The generated answer "
      "might be much longer or use relative time references (like \"last Tuesday\" or \"next month\"), but you "
      "should be generous with your grading - as long as it refers to the same date or time period as the gold "
      "answer, it should be counted as CORRECT. Even if the format differs (e.g., \"May 7th\" vs \"7 May\"), "
      "consider it CORRECT if it's the same date.\n\n"
      "Now it's time for the real question:\n\n";
  out += "Question: " + std::string(question) + "\n\n";
  out += "Gold answer: " + std::string(gold_answer) + "\n\n";
  out += "Generated answer: " + std::string(generated_answer) + "\n\n";
  out +=
      "First, provide a short (one sentence) explanation of your reasoning, then finish with CORRECT or WRONG. \n\n"
      "Do NOT include both CORRECT and WRONG in your response, or it will break the evaluation script.\n\n"
      "Just return the label CORRECT or WRONG in a json format with the key as \"label\".";
  return out;
}

nlohmann::json tool_schemas() {
  using nlohmann::json;
  json search = {
      {"type", "function"},
      {"function",
       {{"name", "search_memory"},
        {"description",
         "Search the memory database. semantic: top_k memories most similar to `query`. keyword: all memories whose "
         "content or metadata contain every entry of `keywords`. Optional speaker/session filters."},
        {"parameters",
         {{"type", "object"},
          {"properties",
           {{"search_type", {{"type", "string"}, {"enum", {"semantic", "keyword"}}}},
            {"query", {{"type", "string"}, {"description", "Natural-language query (semantic)"}}},
            {"keywords", {{"type", "array"}, {"items", {{"type", "string"}}}, {"description", "All must match (keyword)"}}},
            {"top_k", {{"type", "integer"}, {"minimum", 1}, {"description", "Results for semantic search (default 5)"}}},
            {"speaker", {{"type", "string"}, {"description", "Only memories from this speaker"}}},
            {"session", {{"type", "integer"}, {"description", "Only memories from this session number"}}}}},
          {"required", {"search_type"}}}}}}};
  json submit = {{"type", "function"},
                 {"function",
                  {{"name", "submit_answer"},
                   {"description", "Submit the final answer to the target question. Ends the episode."},
                   {"parameters",
                    {{"type", "object"},
                     {"properties", {{"answer", {{"type", "string"}, {"description", "Concise final answer"}}}}},
                     {"required", {"answer"}}}}}}};
  return json::array({search, submit});
}

}  // namespace sumer
