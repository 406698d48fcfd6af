// SPDX-License-Identifier: Apache-2.0
#include "sumer/corpus.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <sstream>

#include "sumer/errors.hpp"
#include "sumer/python_random.hpp"
#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

std::size_t Conversation::message_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.messages.size();
  return n;
}

Category map_category(int code) {
  switch (code) {
    case 1: return Category::MultiHop;
    case 2: return Category::Temporal;
    case 3: return Category::OpenDomain;
    case 4: return Category::SingleHop;
    case 5: return Category::Adversarial;
    default: throw ValidationError("unknown category code: " + std::to_string(code));
  }
}

std::string_view category_name(Category c) {
  switch (c) {
    case Category::MultiHop: return "MultiHop";
    case Category::Temporal: return "Temporal";
    case Category::OpenDomain: return "OpenDomain";
    case Category::SingleHop: return "SingleHop";
    case Category::Adversarial: return "Adversarial";
  }
  return "?";
}

Category category_from_name(std::string_view name) {
  for (int code = 1; code <= 5; ++code) {
    auto c = map_category(code);
    if (category_name(c) == name) return c;
  }
  throw ValidationError("unknown category label: " + std::string(name));
}

DatasetFormat parse_dataset_format(std::string_view id) {
  if (id == "locomo" || id == "locomo-json") return DatasetFormat::LocomoJson;
  if (id == "jsonl" || id == "normalized" || id == "sumer-jsonl") return DatasetFormat::NormalizedJsonl;
  throw ValidationError("unknown dataset format: " + std::string(id));
}

namespace {

std::string scalar_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

// LoCoMo evidence strings look like "D3:12"; a few records pack several
// ids into one string, so every match in the string is taken.
std::vector<EvidenceRef> parse_evidence(const json& evidence) {
  static const std::regex kRef(R"(D(\d+)\s*:\s*(\d+))");
  std::vector<EvidenceRef> refs;
  if (!evidence.is_array()) return refs;
  for (const auto& e : evidence) {
    if (!e.is_string()) continue;
    const auto s = e.get<std::string>();
    for (auto it = std::sregex_iterator(s.begin(), s.end(), kRef); it != std::sregex_iterator(); ++it) {
      refs.push_back({std::stoi((*it)[1].str()), std::stoi((*it)[2].str())});
    }
  }
  return refs;
}

Conversation parse_locomo_conversation(const std::string& id, const json& conv) {
  Conversation c;
  c.conversation_id = id;
  if (!conv.is_object() || !conv.contains("speaker_a") || !conv.contains("speaker_b")) {
    throw ParseError("conversation " + id + ": missing speaker_a/speaker_b");
  }
  c.speakers = {conv["speaker_a"].get<std::string>(), conv["speaker_b"].get<std::string>()};

  static const std::regex kSessionKey(R"(session_(\d+))");
  std::map<int, const json*> sessions;
  for (const auto& [key, value] : conv.items()) {
    std::smatch m;
    if (std::regex_match(key, m, kSessionKey) && value.is_array()) {
      sessions[std::stoi(m[1].str())] = &value;
    }
  }

  for (const auto& [index, messages] : sessions) {
    Session s;
    s.session_index = index;
    const auto date_key = "session_" + std::to_string(index) + "_date_time";
    if (conv.contains(date_key)) s.timestamp = scalar_to_string(conv[date_key]);
    int position = 0;
    for (const auto& m : *messages) {
      ++position;
      if (!m.is_object() || !m.contains("speaker") || !m.contains("text")) {
        throw ParseError("conversation " + id + " session " + std::to_string(index) + " message " +
                         std::to_string(position) + ": missing speaker/text");
      }
      Message msg;
      msg.speaker = m["speaker"].get<std::string>();
      msg.text = scalar_to_string(m["text"]);
      msg.message_index = position;
      msg.timestamp = s.timestamp;
      if (msg.speaker != c.speakers[0] && msg.speaker != c.speakers[1]) {
        throw ValidationError("conversation " + id + " session " + std::to_string(index) + " message " +
                              std::to_string(position) + ": speaker '" + msg.speaker +
                              "' is not one of the two conversation speakers");
      }
      s.messages.push_back(std::move(msg));
    }
    if (!s.messages.empty()) c.sessions.push_back(std::move(s));
  }
  return c;
}

std::vector<QAItem> parse_locomo_qa(const std::string& id, const json& qa) {
  std::vector<QAItem> items;
  if (!qa.is_array()) throw ParseError("conversation " + id + ": qa is not an array");
  int position = 0;
  for (const auto& q : qa) {
    ++position;
    const auto where = "conversation " + id + " qa " + std::to_string(position);
    if (!q.is_object() || !q.contains("question") || !q.contains("category")) {
      throw ParseError(where + ": missing question/category");
    }
    if (!q["category"].is_number_integer()) throw ParseError(where + ": category is not an integer");
    QAItem item;
    item.question_id = id + "#" + std::to_string(position);
    item.conversation_id = id;
    item.question = scalar_to_string(q["question"]);
    if (q.contains("answer")) {
      item.gold_answer = scalar_to_string(q["answer"]);
    } else if (q.contains("adversarial_answer")) {
      item.gold_answer = scalar_to_string(q["adversarial_answer"]);
    }
    item.category_code = q["category"].get<int>();
    try {
      item.category = map_category(item.category_code);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (q.contains("evidence")) item.evidence_refs = parse_evidence(q["evidence"]);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

Dataset parse_locomo_json(const json& root) {
  if (!root.is_array()) throw ParseError("LoCoMo file: top level must be an array of samples");
  Dataset out;
  int position = 0;
  for (const auto& sample : root) {
    ++position;
    if (!sample.is_object() || !sample.contains("conversation")) {
      throw ParseError("LoCoMo sample " + std::to_string(position) + ": missing conversation");
    }
    const auto id = sample.contains("sample_id") ? scalar_to_string(sample["sample_id"])
                                                 : "conv-" + std::to_string(position);
    DatasetEntry entry;
    entry.conversation = parse_locomo_conversation(id, sample["conversation"]);
    entry.qa = parse_locomo_qa(id, sample.contains("qa") ? sample["qa"] : json::array());
    out.push_back(std::move(entry));
  }
  return out;
}

json to_json(const Conversation& c) {
  json sessions = json::array();
  for (const auto& s : c.sessions) {
    json messages = json::array();
    for (const auto& m : s.messages) {
      messages.push_back({{"speaker", m.speaker},
                          {"text", m.text},
                          {"message_index", m.message_index},
                          {"timestamp", m.timestamp}});
    }
    sessions.push_back({{"session_index", s.session_index}, {"timestamp", s.timestamp}, {"messages", messages}});
  }
  return {{"conversation_id", c.conversation_id}, {"speakers", c.speakers}, {"sessions", sessions}};
}

json to_json(const QAItem& q) {
  json evidence = json::array();
  for (const auto& e : q.evidence_refs) evidence.push_back({e.session_index, e.message_index});
  return {{"question_id", q.question_id},
          {"question", q.question},
          {"gold_answer", q.gold_answer},
          {"category_code", q.category_code},
          {"category_label", category_name(q.category)},
          {"excluded", q.excluded()},
          {"evidence_refs", evidence}};
}

std::string serialize_normalized(const Dataset& dataset) {
  std::string out = json{{"format", "sumer-dataset"}, {"version", kNormalizedFormatVersion}}.dump() + "\n";
  for (const auto& entry : dataset) {
    json qa = json::array();
    for (const auto& q : entry.qa) qa.push_back(to_json(q));
    json line = to_json(entry.conversation);
    line["qa"] = std::move(qa);
    out += line.dump() + "\n";
  }
  return out;
}

Dataset parse_normalized(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  Dataset out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("normalized dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header_seen) {
      if (j.value("format", "") != "sumer-dataset") throw ParseError("normalized dataset: missing header line");
      if (j.value("version", -1) != kNormalizedFormatVersion) {
        throw VersionError("normalized dataset: unsupported version " + j.value("version", json()).dump());
      }
      header_seen = true;
      continue;
    }
    try {
      DatasetEntry entry;
      auto& c = entry.conversation;
      c.conversation_id = j.at("conversation_id").get<std::string>();
      c.speakers = j.at("speakers").get<std::array<std::string, 2>>();
      for (const auto& s : j.at("sessions")) {
        Session session;
        session.session_index = s.at("session_index").get<int>();
        session.timestamp = s.at("timestamp").get<std::string>();
        for (const auto& m : s.at("messages")) {
          session.messages.push_back({m.at("speaker").get<std::string>(), m.at("text").get<std::string>(),
                                      m.at("message_index").get<int>(), m.at("timestamp").get<std::string>()});
        }
        c.sessions.push_back(std::move(session));
      }
      for (const auto& q : j.at("qa")) {
        QAItem item;
        item.question_id = q.at("question_id").get<std::string>();
        item.conversation_id = c.conversation_id;
        item.question = q.at("question").get<std::string>();
        item.gold_answer = q.at("gold_answer").get<std::string>();
        item.category_code = q.at("category_code").get<int>();
        item.category = map_category(item.category_code);
        for (const auto& e : q.at("evidence_refs")) item.evidence_refs.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
        entry.qa.push_back(std::move(item));
      }
      out.push_back(std::move(entry));
    } catch (const json::exception& e) {
      throw ParseError("normalized dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen && !out.empty()) throw ParseError("normalized dataset: missing header line");
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (!std::filesystem::exists(path)) throw NotFoundError("dataset file not found: " + path.string());
  const auto text = read_file(path);
  if (format == DatasetFormat::NormalizedJsonl) return parse_normalized(text);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("dataset " + path.string() + ": " + e.what());
  }
  return parse_locomo_json(root);
}

DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed, std::size_t n_train) {
  if (!dataset.empty() && n_train >= dataset.size()) {
    throw ValidationError("split_dataset: n_train must be smaller than the number of conversations");
  }
  std::vector<std::string> ids;
  for (const auto& e : dataset) ids.push_back(e.conversation.conversation_id);
  PythonRandom rng(seed);
  rng.shuffle(ids);
  DatasetSplit split;
  split.shuffle_seed = seed;
  const auto cut = static_cast<std::ptrdiff_t>(std::min(n_train, ids.size()));
  split.train_conversations.assign(ids.begin(), ids.begin() + cut);
  split.validation_conversations.assign(ids.begin() + cut, ids.end());
  return split;
}

double estimate_tokens(std::string_view text) {
  return static_cast<double>(split_whitespace(text).size()) * 1.3;
}

DatasetStats compute_stats(const Dataset& dataset) {
  DatasetStats stats;
  for (const auto& e : dataset) {
    ConversationStats cs;
    cs.conversation_id = e.conversation.conversation_id;
    cs.sessions = e.conversation.sessions.size();
    cs.messages = e.conversation.message_count();
    for (const auto& s : e.conversation.sessions) {
      for (const auto& m : s.messages) cs.estimated_tokens += estimate_tokens(m.text);
    }
    for (const auto& q : e.qa) {
      ++cs.questions_total;
      if (!q.excluded()) ++cs.questions_evaluated;
      ++stats.category_counts[static_cast<std::size_t>(q.category_code - 1)];
    }
    stats.questions_total += cs.questions_total;
    stats.questions_evaluated += cs.questions_evaluated;
    stats.conversations.push_back(std::move(cs));
  }
  return stats;
}

json to_json(const DatasetStats& stats) {
  json convs = json::array();
  for (const auto& c : stats.conversations) {
    convs.push_back({{"conversation_id", c.conversation_id},
                     {"sessions", c.sessions},
                     {"messages", c.messages},
                     {"questions_total", c.questions_total},
                     {"questions_evaluated", c.questions_evaluated},
                     {"estimated_tokens", c.estimated_tokens}});
  }
  json cats = json::object();
  for (int code = 1; code <= 5; ++code) {
    cats[std::string(category_name(map_category(code)))] = stats.category_counts[static_cast<std::size_t>(code - 1)];
  }
  return {{"conversations", convs},
          {"questions_total", stats.questions_total},
          {"questions_evaluated", stats.questions_evaluated},
          {"category_counts", cats}};
}

std::optional<std::int64_t> timestamp_sort_key(std::string_view timestamp) {
  static const std::regex kStamp(
      R"((\d{1,2}):(\d{2})\s*(am|pm)\s+on\s+(\d{1,2})\s+([A-Za-z]+),?\s+(\d{4}))", std::regex::icase);
  static const std::array<std::string_view, 12> kMonths = {"january", "february", "march",     "april",
                                                           "may",     "june",     "july",      "august",
                                                           "september", "october", "november", "december"};
  std::smatch m;
  const std::string s(timestamp);
  if (!std::regex_search(s, m, kStamp)) return std::nullopt;
  int hour = std::stoi(m[1].str()) % 12;
  if (to_lower(m[3].str()) == "pm") hour += 12;
  const int minute = std::stoi(m[2].str());
  const int day = std::stoi(m[4].str());
  const auto month_name = to_lower(m[5].str());
  int month = 0;
  for (std::size_t i = 0; i < kMonths.size(); ++i) {
    if (kMonths[i] == month_name || kMonths[i].substr(0, 3) == month_name) month = static_cast<int>(i) + 1;
  }
  if (month == 0) return std::nullopt;
  const std::int64_t year = std::stoi(m[6].str());
  return ((((year * 100 + month) * 100 + day) * 100 + hour) * 100) + minute;
}

std::optional<int> find_chronology_violation(const Conversation& c) {
  std::optional<std::int64_t> previous;
  for (const auto& s : c.sessions) {
    auto key = timestamp_sort_key(s.timestamp);
    if (!key) continue;
    if (previous && *key < *previous) return s.session_index;
    previous = key;
  }
  return std::nullopt;
}

}  // namespace sumer
