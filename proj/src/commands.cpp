// SPDX-License-Identifier: Apache-2.0
#include "sumer/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sumer/memory_store.hpp"
#include "sumer/python_random.hpp"
#include "sumer/search.hpp"
#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  episode.validate();
  if (grpo.group_size < 1) throw ValidationError("group size G must be at least 1");
  if (grpo.batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (grpo.clip_low < 0.0 || grpo.clip_low >= 1.0) throw ValidationError("clip-low must be in [0, 1)");
  if (grpo.clip_high < 0.0) throw ValidationError("clip-high must be non-negative");
  if (grpo.epsilon_std <= 0.0) throw ValidationError("epsilon-std must be positive");
  if (validate_every < 0) throw ValidationError("validate-every must be non-negative");
  if (steps < 0) throw ValidationError("steps must be non-negative");
  if (parallelism < 1) throw ValidationError("parallelism must be at least 1");
  if (embedding_dimension < 1) throw ValidationError("embedding dimension must be positive");
}

json RunConfig::hashed_fields() const {
  std::string dataset_digest;
  if (!dataset.empty() && fs::exists(dataset)) dataset_digest = sha256_hex(read_file(dataset));
  return {{"dataset_sha256", dataset_digest},
          {"episode", sumer::to_json(episode)},
          {"grpo", sumer::to_json(grpo)},
          {"val_temperature", val_temperature},
          {"validate_every", validate_every},
          {"seed", seed},
          {"n_train", n_train},
          {"embedding_dimension", embedding_dimension},
          {"max_eval_questions", max_eval_questions}};
}

std::string RunConfig::config_hash() const { return sha256_hex(hashed_fields().dump()).substr(0, 16); }

json RunConfig::to_json() const {
  auto j = hashed_fields();
  j["dataset"] = dataset.string();
  j["bank_dir"] = bank_dir.string();
  j["out"] = out.string();
  j["policy_url"] = policy_url;
  j["policy_model"] = policy_model;
  j["embed_url"] = embed_url;
  j["embed_model"] = embed_model;
  j["judge_url"] = judge_url;
  j["judge_model"] = judge_model;
  j["update_url"] = update_url;
  j["steps"] = steps;
  j["parallelism"] = parallelism;
  j["config_hash"] = config_hash();
  return j;
}

// ---------------------------------------------------------------------------
// Backend factory

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::string env_or_empty(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace

std::unique_ptr<Transport> make_transport(const std::string& url, const std::string& api_key_env) {
  if (starts_with(url, "replay:")) return ReplayTransport::from_file(url.substr(7));
  if (starts_with(url, "http://") || starts_with(url, "https://")) {
    HttpConfig hc;
    hc.base_url = url;
    hc.api_key = env_or_empty(api_key_env);
    return std::make_unique<HttpTransport>(hc);
  }
  throw ValidationError("unsupported endpoint URL '" + url + "' (expected http(s)://... or replay:<file>)");
}

std::unique_ptr<PolicyBackend> make_policy(const RunConfig& c, Backends& owner) {
  if (c.policy_url.empty()) throw ValidationError("--policy-url is required");
  if (starts_with(c.policy_url, "script:")) return ScriptedPolicy::from_file(c.policy_url.substr(7));
  owner.transports.push_back(make_transport(c.policy_url, "SUMER_POLICY_API_KEY"));
  HttpPolicyConfig pc;
  pc.model = c.policy_model;
  return std::make_unique<HttpPolicy>(*owner.transports.back(), pc);
}

std::unique_ptr<Embedder> make_embedder(const RunConfig& c, Backends& owner) {
  if (c.embed_url.empty()) throw ValidationError("--embed-url is required for semantic search");
  if (c.embed_url == "hashing") return std::make_unique<HashingEmbedder>(c.embedding_dimension);
  if (starts_with(c.embed_url, "hashing:")) {
    return std::make_unique<HashingEmbedder>(std::stoi(c.embed_url.substr(8)));
  }
  owner.transports.push_back(make_transport(c.embed_url, "SUMER_EMBED_API_KEY"));
  EmbeddingConfig ec;
  ec.model = c.embed_model;
  ec.dimension = c.embedding_dimension;
  return std::make_unique<EmbeddingClient>(*owner.transports.back(), ec);
}

std::unique_ptr<Judge> make_judge(const RunConfig& c, Backends& owner) {
  if (c.judge_url.empty()) throw ValidationError("--judge-url is required");
  owner.transports.push_back(make_transport(c.judge_url, "SUMER_JUDGE_API_KEY"));
  JudgeConfig jc;
  jc.model = c.judge_model;
  return std::make_unique<JudgeClient>(*owner.transports.back(), jc);
}

std::string DryRunUpdate::apply(const TrainingStep& step, const std::string& config_hash) {
  return fmt::format("dry-run-{}-step-{}", config_hash, step.summary.step);
}

std::string HttpUpdate::apply(const TrainingStep& step, const std::string& config_hash) {
  json batches = json::array();
  for (const auto& b : step.batches) batches.push_back(to_json(b));
  const auto response = transport_.post(path_, {{"step", step.summary.step},
                                                {"config_hash", config_hash},
                                                {"summary", to_json(step.summary)},
                                                {"batches", std::move(batches)}});
  if (!response.contains("policy_version") || !response["policy_version"].is_string()) {
    throw InfrastructureError("update endpoint reply has no policy_version");
  }
  return response["policy_version"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Shared helpers

void claim_output_dir(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  const auto marker = dir / "run.json";
  const auto hash = c.config_hash();
  if (fs::exists(marker)) {
    const auto existing = json::parse(read_file(marker), nullptr, false);
    const auto other = existing.is_object() ? existing.value("config_hash", std::string()) : std::string();
    if (other != hash) {
      throw ValidationError(fmt::format("{} holds artifacts from config {}, refusing to mix with config {}",
                                        dir.string(), other.empty() ? "<unknown>" : other, hash));
    }
  }
  write_file_atomic(marker, c.to_json().dump(2) + "\n");
}

std::map<std::string, MemoryBank> load_banks(const fs::path& bank_dir, const std::vector<std::string>& ids) {
  std::map<std::string, MemoryBank> banks;
  for (const auto& id : ids) {
    const auto dir = bank_dir / id;
    if (!fs::exists(dir / "manifest.json")) {
      throw NotFoundError("no memory bank at " + dir.string() + " (run `sumer ingest` first)");
    }
    banks.emplace(id, load_bank(dir));
  }
  return banks;
}

std::vector<QAItem> sample_step_questions(const std::vector<QAItem>& pool, const RunConfig& c, int step) {
  if (pool.empty()) throw ValidationError("training split has no evaluable questions");
  if (step < 1) throw ValidationError("steps are numbered from 1");
  const auto per_step = static_cast<std::size_t>(std::max(1, c.grpo.batch_size / c.grpo.group_size));
  std::vector<QAItem> picked;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < per_step; ++j) {
    const std::size_t k = static_cast<std::size_t>(step - 1) * per_step + j;
    const std::size_t epoch = k / pool.size();
    if (epoch != cached_epoch) {
      order.resize(pool.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      PythonRandom rng(c.seed + epoch);
      rng.shuffle(order);
      cached_epoch = epoch;
    }
    picked.push_back(pool[order[k % pool.size()]]);
  }
  return picked;
}

namespace {

void append_jsonl(const fs::path& path, const json& line) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw InfrastructureError("cannot append to " + path.string());
  f << line.dump() << '\n';
}

std::vector<QAItem> evaluable_questions(const Dataset& ds, const std::vector<std::string>& conversations) {
  std::vector<QAItem> out;
  for (const auto& entry : ds) {
    if (std::find(conversations.begin(), conversations.end(), entry.conversation.conversation_id) ==
        conversations.end()) {
      continue;
    }
    for (const auto& q : entry.qa) {
      if (!q.excluded()) out.push_back(q);
    }
  }
  return out;
}

bool needs_embedder(const EpisodeConfig& e) { return !e.ablations.disable_semantic; }

/// Runs fn(k) for k in [0, n) on up to `threads` workers; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min<std::size_t>(static_cast<std::size_t>(threads), n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<EvalRecord> validate_policy(const RunConfig& c, const std::map<std::string, MemoryBank>& banks,
                                        const std::vector<QAItem>& questions, PolicyBackend& policy, Judge& judge,
                                        Embedder* embedder, std::vector<Trajectory>* trajectories) {
  std::vector<EvalTarget> targets;
  for (const auto& q : questions) {
    if (c.max_eval_questions && targets.size() >= c.max_eval_questions) break;
    targets.push_back({&banks.at(q.conversation_id), q});
  }
  EvalOptions options;
  options.episode = c.episode;
  options.episode.temperature = c.val_temperature;
  options.parallelism = c.parallelism;
  return run_evaluation(targets, policy, judge, embedder, options, trajectories);
}

}  // namespace

// ---------------------------------------------------------------------------
// ingest / embed / search

int cmd_ingest(const RunConfig& c, std::ostream& out) {
  if (c.bank_dir.empty()) throw ValidationError("--bank-dir is required");
  const auto ds = load_dataset(c.dataset, c.dataset_format);
  fs::create_directories(c.bank_dir);
  const auto stats = compute_stats(ds);

  for (const auto& entry : ds) {
    const auto& conv = entry.conversation;
    const auto dir = c.bank_dir / conv.conversation_id;
    // Keep embeddings of an earlier ingest when the records are unchanged.
    EmbeddingMap carried;
    int dimension = c.embedding_dimension;
    if (fs::exists(dir / "manifest.json")) {
      try {
        const auto previous = load_bank(dir);
        for (std::size_t p = 0; p < previous.size(); ++p) {
          if (previous.has_embedding(p)) carried[previous.record(p).record_id] = previous.embedding(p).transpose();
        }
        if (!carried.empty()) dimension = previous.dimension();
      } catch (const Error& e) {
        spdlog::warn("ignoring unreadable bank at {}: {}", dir.string(), e.what());
      }
    }
    auto bank = build_bank({conv}, nullptr, dimension);
    if (!carried.empty()) {
      std::vector<std::size_t> positions;
      std::vector<Embedding> rows;
      for (std::size_t p = 0; p < bank.size(); ++p) {
        auto it = carried.find(bank.record(p).record_id);
        if (it == carried.end()) continue;
        positions.push_back(p);
        rows.push_back(it->second);
      }
      EmbeddingMatrix m(static_cast<Eigen::Index>(rows.size()), dimension);
      for (std::size_t k = 0; k < rows.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
      bank = bank.with_embeddings(positions, m);
    }
    persist(bank, dir);
  }
  write_file_atomic(c.bank_dir / "dataset.jsonl", serialize_normalized(ds));
  auto stats_json = to_json(stats);
  stats_json["dataset_sha256"] = sha256_hex(read_file(c.dataset));
  write_file_atomic(c.bank_dir / "stats.json", stats_json.dump(2) + "\n");

  out << fmt::format("{:<12} {:>9} {:>8} {:>10} {:>10}\n", "conversation", "sessions", "records", "questions",
                     "evaluated");
  for (const auto& s : stats.conversations) {
    out << fmt::format("{:<12} {:>9} {:>8} {:>10} {:>10}\n", s.conversation_id, s.sessions, s.messages,
                       s.questions_total, s.questions_evaluated);
  }
  out << fmt::format("{} conversations, {} questions ({} evaluated)\n", stats.conversations.size(),
                     stats.questions_total, stats.questions_evaluated);
  return 0;
}

int cmd_embed(const RunConfig& c, const std::vector<std::string>& conversation_ids, std::ostream& out) {
  if (c.bank_dir.empty()) throw ValidationError("--bank-dir is required");
  Backends backends;
  auto embedder = make_embedder(c, backends);
  std::vector<std::string> ids = conversation_ids;
  if (ids.empty()) {
    for (const auto& d : fs::directory_iterator(c.bank_dir)) {
      if (d.is_directory() && fs::exists(d.path() / "manifest.json")) ids.push_back(d.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  for (const auto& id : ids) {
    const auto dir = c.bank_dir / id;
    auto bank = load_bank(dir);
    const int d = embedder->dimension();
    if (bank.dimension() != d) {
      if (bank.embedded_count() > 0) {
        throw ValidationError(fmt::format("bank {} holds {}-dimensional embeddings but the endpoint produces {}", id,
                                          bank.dimension(), d));
      }
      bank = MemoryBank(bank.records(), EmbeddingMatrix::Zero(static_cast<Eigen::Index>(bank.size()), d),
                        std::vector<bool>(bank.size(), false), d, bank.shard_count());
    }
    std::vector<std::size_t> positions;
    std::vector<std::string> texts;
    for (std::size_t p = 0; p < bank.size(); ++p) {
      if (bank.has_embedding(p)) continue;
      positions.push_back(p);
      texts.push_back(bank.record(p).content);
    }
    if (!texts.empty()) {
      const auto rows = embedder->embed(texts);
      if (rows.cols() != d) {
        throw ValidationError(fmt::format("endpoint returned dimension {}, expected {}", rows.cols(), d));
      }
      bank = bank.with_embeddings(positions, rows);
      persist(bank, dir);
    }
    out << fmt::format("{}: dimension {}, embedded {}/{} ({} new)\n", id, bank.dimension(), bank.embedded_count(),
                       bank.size(), texts.size());
  }
  return 0;
}

int cmd_search(const RunConfig& c, const SearchArgs& args, std::ostream& out) {
  const auto bank = load_bank(c.bank_dir / args.conversation_id);
  SearchQuery q;
  q.mode = args.mode;
  if (!args.query.empty()) q.query_text = args.query;
  q.keywords = args.keywords;
  q.top_k = args.top_k;
  q.filters.speaker = args.speaker;
  q.filters.session = args.session;
  q.validate();
  SearchOptions options;
  options.context_radius = c.episode.context_radius();
  options.keyword_cap = c.episode.keyword_cap;

  SearchResult result;
  if (q.mode == SearchMode::Semantic) {
    Backends backends;
    auto embedder = make_embedder(c, backends);
    const Embedding query = embedder->embed({*q.query_text}).row(0).transpose();
    result = semantic_search(bank, query, q.top_k, q.filters, options);
  } else {
    result = keyword_search(bank, q.keywords, q.filters, options);
  }
  out << format_tool_response(bank, result, c.episode.max_turns - 1) << "\n";
  if (args.show_scores && q.mode == SearchMode::Semantic) {
    out << "\nscores:\n";
    for (std::size_t i = 0; i < result.groups.size(); ++i) {
      const auto& g = result.groups[i];
      out << fmt::format("  Memory {}: {:.6f} ({})\n", i + 1, g.score, bank.record(g.group.center).record_id);
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// episode / train

int cmd_episode(const RunConfig& c, const std::string& question_id, std::ostream& out) {
  c.validate();
  const auto ds = load_dataset(c.dataset, c.dataset_format);
  const QAItem* qa = nullptr;
  for (const auto& e : ds) {
    for (const auto& q : e.qa) {
      if (q.question_id == question_id) qa = &q;
    }
  }
  if (!qa) throw NotFoundError("question " + question_id + " not in dataset");
  const auto banks = load_banks(c.bank_dir, {qa->conversation_id});
  Backends b;
  auto policy = make_policy(c, b);
  std::unique_ptr<Embedder> embedder;
  if (needs_embedder(c.episode)) embedder = make_embedder(c, b);
  const auto traj = run_episode(banks.at(qa->conversation_id), *qa, *policy, c.episode, embedder.get(),
                                {c.seed, 0});
  auto j = to_json(traj);
  if (!c.judge_url.empty()) {
    auto judge = make_judge(c, b);
    const auto reward = compute_reward(traj, *qa, *judge);
    j["reward"] = {{"submitted", reward.submitted},
                   {"judge", static_cast<int>(reward.verdict)},
                   {"f1", reward.f1},
                   {"reward", reward.reward}};
  }
  out << j.dump(2) << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out, UpdateBackend* update) {
  c.validate();
  Backends b;
  auto policy = make_policy(c, b);
  const auto caps = policy->capabilities();
  if (!caps.logprobs || !caps.score) {
    throw CapabilityError("policy backend '" + policy->model_id() +
                          "' must report generation log-probabilities and support scoring for training");
  }
  std::unique_ptr<Embedder> embedder;
  if (needs_embedder(c.episode)) embedder = make_embedder(c, b);
  auto judge = make_judge(c, b);

  const auto ds = load_dataset(c.dataset, c.dataset_format);
  const auto split = split_dataset(ds, c.seed, c.n_train);
  std::vector<std::string> all_ids = split.train_conversations;
  all_ids.insert(all_ids.end(), split.validation_conversations.begin(), split.validation_conversations.end());
  const auto banks = load_banks(c.bank_dir, all_ids);
  const auto pool = evaluable_questions(ds, split.train_conversations);
  const auto validation = evaluable_questions(ds, split.validation_conversations);

  claim_output_dir(c.out, c);
  const auto hash = c.config_hash();
  const auto checkpoint_path = c.out / "checkpoint.json";
  int completed = 0;
  std::string policy_version = policy->model_id();
  if (fs::exists(checkpoint_path)) {
    const auto ck = json::parse(read_file(checkpoint_path));
    if (ck.value("config_hash", std::string()) != hash) {
      throw ValidationError("checkpoint belongs to a different config; refusing to resume");
    }
    completed = ck.at("completed_steps").get<int>();
    policy_version = ck.value("policy_version", policy_version);
    out << fmt::format("resuming after step {}\n", completed);
  }

  DryRunUpdate dry_run;
  std::unique_ptr<HttpUpdate> http_update;
  if (!update) {
    if (c.update_url.empty()) {
      update = &dry_run;
    } else {
      b.transports.push_back(make_transport(c.update_url, "SUMER_UPDATE_API_KEY"));
      http_update = std::make_unique<HttpUpdate>(*b.transports.back());
      update = http_update.get();
    }
  }

  const int g = c.grpo.group_size;
  for (int step = completed + 1; step <= c.steps; ++step) {
    const auto questions = sample_step_questions(pool, c, step);
    std::vector<Rollout> rollouts(questions.size() * static_cast<std::size_t>(g));
    parallel_for(rollouts.size(), c.parallelism, [&](std::size_t k) {
      const auto& qa = questions[k / static_cast<std::size_t>(g)];
      const int i = static_cast<int>(k % static_cast<std::size_t>(g));
      const std::uint64_t seed = fnv1a64(fmt::format("{}/{}/{}/{}", c.seed, step, qa.question_id, i));
      auto& r = rollouts[k];
      r.trajectory = run_episode(banks.at(qa.conversation_id), qa, *policy, c.episode, embedder.get(), {seed, i});
      try {
        r.reward = compute_reward(r.trajectory, qa, *judge);
      } catch (const InfrastructureError& e) {
        spdlog::error("judge unavailable for {} sample {}: {}; dropping the rollout", qa.question_id, i, e.what());
        r.reward = make_reward(true, Verdict::Wrong, 0.0, true);
      }
    });

    std::vector<RolloutGroup> groups;
    for (std::size_t q = 0; q < questions.size(); ++q) {
      std::vector<Rollout> members(std::make_move_iterator(rollouts.begin() + static_cast<std::ptrdiff_t>(q * g)),
                                   std::make_move_iterator(rollouts.begin() + static_cast<std::ptrdiff_t>((q + 1) * g)));
      auto group = make_rollout_group(questions[q].question_id, std::move(members), c.grpo.epsilon_std,
                                      c.grpo.min_group_size);
      if (!group) {
        spdlog::error("step {}: group for {} fell below {} usable rollouts and is skipped", step,
                      questions[q].question_id, c.grpo.min_group_size);
        continue;
      }
      if (group->dropped_rollouts) {
        spdlog::warn("step {}: {} rollout(s) for {} dropped after judge failures", step, group->dropped_rollouts,
                     group->question_id);
      }
      groups.push_back(std::move(*group));
    }
    if (groups.empty()) throw ValidationError(fmt::format("step {}: no usable rollout groups", step));

    const auto training_step = assemble_training_step(groups, *policy, c.grpo, step);
    policy_version = update->apply(training_step, hash);

    auto summary = to_json(training_step.summary);
    summary["config_hash"] = hash;
    summary["policy_version"] = policy_version;
    append_jsonl(c.out / "metrics.jsonl", summary);
    for (const auto& grp : groups) {
      for (std::size_t i = 0; i < grp.rollouts.size(); ++i) {
        const auto& r = grp.rollouts[i];
        append_jsonl(c.out / "trajectories.jsonl", {{"config_hash", hash},
                                                    {"step", step},
                                                    {"question_id", grp.question_id},
                                                    {"reward", r.reward.reward},
                                                    {"judge", static_cast<int>(r.reward.verdict)},
                                                    {"f1", r.reward.f1},
                                                    {"advantage", grp.advantages[i]},
                                                    {"trajectory", to_json(r.trajectory)}});
      }
    }
    const auto& s = training_step.summary;
    out << fmt::format(
        "step {} | trajectories {} | mean_reward {:.4f} | reward_std {:.4f} | mean_|A| {:.4f} | clip_fraction {:.4f} | "
        "mean_turns {:.2f} | policy {}\n",
        s.step, s.trajectories, s.mean_reward, s.reward_std, s.mean_abs_advantage, s.clip_fraction, s.mean_turns,
        policy_version);

    if (c.validate_every > 0 && step % c.validate_every == 0) {
      const auto records = validate_policy(c, banks, validation, *policy, *judge, embedder.get(), nullptr);
      const auto report = aggregate(records, {{"config_hash", hash}, {"step", step}, {"policy_version", policy_version}});
      append_jsonl(c.out / "validation.jsonl", {{"config_hash", hash},
                                                {"step", step},
                                                {"policy_version", policy_version},
                                                {"f1", report.overall.f1},
                                                {"bleu1", report.overall.bleu1},
                                                {"judge", report.overall.judge},
                                                {"mean_turns", report.overall.mean_turns},
                                                {"questions", report.overall.count},
                                                {"failed", report.failed}});
      out << fmt::format("validation @ step {} | J {:.2f} | F1 {:.2f} | B1 {:.2f} | questions {}\n", step,
                         report.overall.judge, report.overall.f1, report.overall.bleu1, report.overall.count);
    }
    write_file_atomic(checkpoint_path,
                      json{{"config_hash", hash}, {"completed_steps", step}, {"policy_version", policy_version}}.dump(2) +
                          "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval / report

EvalSplit parse_eval_split(std::string_view s) {
  if (s == "validation" || s == "val") return EvalSplit::Validation;
  if (s == "train") return EvalSplit::Train;
  if (s == "all") return EvalSplit::All;
  throw ValidationError("unknown split: " + std::string(s));
}

int cmd_eval(const RunConfig& c, EvalSplit split_kind, std::optional<int> step, std::ostream& out) {
  c.validate();
  Backends b;
  auto policy = make_policy(c, b);
  std::unique_ptr<Embedder> embedder;
  if (needs_embedder(c.episode)) embedder = make_embedder(c, b);
  auto judge = make_judge(c, b);

  const auto ds = load_dataset(c.dataset, c.dataset_format);
  std::vector<std::string> ids;
  if (split_kind == EvalSplit::All) {
    for (const auto& e : ds) ids.push_back(e.conversation.conversation_id);
  } else {
    const auto split = split_dataset(ds, c.seed, c.n_train);
    ids = split_kind == EvalSplit::Train ? split.train_conversations : split.validation_conversations;
  }
  const auto banks = load_banks(c.bank_dir, ids);
  const auto questions = evaluable_questions(ds, ids);

  claim_output_dir(c.out, c);
  const auto hash = c.config_hash();
  std::vector<Trajectory> trajectories;
  const auto records = validate_policy(c, banks, questions, *policy, *judge, embedder.get(), &trajectories);

  json metadata = {{"config_hash", hash},
                   {"model", policy->model_id()},
                   {"judge_model", judge->model_id()},
                   {"split", split_kind == EvalSplit::All ? "all" : split_kind == EvalSplit::Train ? "train" : "validation"},
                   {"step", step ? json(*step) : json(nullptr)}};
  const auto report = aggregate(records, metadata);

  std::string records_text, trajectories_text;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto r = to_json(records[i]);
    r["config_hash"] = hash;
    records_text += r.dump() + "\n";
    if (!records[i].infra_error) {
      trajectories_text += json{{"config_hash", hash}, {"trajectory", to_json(trajectories[i])}}.dump() + "\n";
    }
  }
  write_file_atomic(c.out / "records.jsonl", records_text);
  write_file_atomic(c.out / "trajectories.jsonl", trajectories_text);
  write_file_atomic(c.out / "report.json", to_json(report).dump(2) + "\n");
  const auto table = render_report_table(report);
  write_file_atomic(c.out / "report.txt", table);
  out << table;
  return report.incomplete() ? 2 : 0;
}

int cmd_report(const std::vector<fs::path>& paths, const std::vector<std::string>& labels, bool allow_mixed,
               const std::optional<fs::path>& out_json, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const auto& p : paths) {
    const auto file = fs::is_directory(p) ? p / "report.json" : p;
    reports.push_back(eval_report_from_json(json::parse(read_file(file))));
  }
  if (!allow_mixed) {
    for (std::size_t k = 1; k < reports.size(); ++k) {
      const auto a = reports[0].metadata.value("config_hash", std::string());
      const auto h = reports[k].metadata.value("config_hash", std::string());
      if (a != h) {
        throw ValidationError(fmt::format("report {} has config {} but report 0 has {}; pass --allow-mixed to compare",
                                          k, h, a));
      }
    }
  }
  for (std::size_t k = 0; k < reports.size(); ++k) {
    if (reports[k].incomplete()) out << fmt::format("warning: report {} is from an incomplete run\n", k);
  }
  const auto rows = compare_runs(reports, labels);
  out << render_delta_table(rows);
  if (out_json) write_file_atomic(*out_json, to_json(rows).dump(2) + "\n");
  return 0;
}

}  // namespace sumer
