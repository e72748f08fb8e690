#pragma once

// Uniform access to the language model in its roles: planner, the two
// evaluators, the initializer, and image question answering. Backends are
// live (chat-completion over HTTP), scripted, recording, and replaying.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "veritree/action_grammar.hpp"
#include "veritree/core.hpp"
#include "veritree/digest.hpp"

namespace veritree {

enum class Role { Planner, EvaluatorTrajectory, EvaluatorConfidence, Initializer, ImageQuestion };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::Planner: return "planner";
    case Role::EvaluatorTrajectory: return "evaluator_trajectory";
    case Role::EvaluatorConfidence: return "evaluator_confidence";
    case Role::Initializer: return "initializer";
    case Role::ImageQuestion: return "image_question";
  }
  return "unknown";
}

inline Role role_from_string(std::string_view s) {
  for (auto r : {Role::Planner, Role::EvaluatorTrajectory, Role::EvaluatorConfidence,
                 Role::Initializer, Role::ImageQuestion})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown reasoner role '" + std::string(s) + "'");
}

// Cost-accounting phase a role is billed to.
enum class Phase { Plan, Evaluate, Init, Tool };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Plan: return "plan";
    case Phase::Evaluate: return "evaluate";
    case Phase::Init: return "init";
    case Phase::Tool: return "tool";
  }
  return "unknown";
}

inline Phase phase_of(Role r) {
  switch (r) {
    case Role::Planner: return Phase::Plan;
    case Role::EvaluatorTrajectory:
    case Role::EvaluatorConfidence: return Phase::Evaluate;
    case Role::Initializer: return Phase::Init;
    case Role::ImageQuestion: return Phase::Tool;
  }
  return Phase::Tool;
}

struct Usage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  std::string model_name;
};

struct UsageRecord {
  Role role = Role::Planner;
  Usage usage;
};

struct TokenCount {
  std::uint64_t input = 0;
  std::uint64_t output = 0;
  std::uint64_t calls = 0;

  TokenCount& operator+=(const TokenCount& o) {
    input += o.input;
    output += o.output;
    calls += o.calls;
    return *this;
  }
  bool operator==(const TokenCount&) const = default;
};

// Token totals keyed by model, then phase. Merging is associative and
// commutative.
class UsageTotals {
 public:
  void add(const UsageRecord& r) {
    by_model_[r.usage.model_name][phase_of(r.role)] +=
        TokenCount{r.usage.input_tokens, r.usage.output_tokens, 1};
  }
  void merge(const UsageTotals& other) {
    for (const auto& [model, phases] : other.by_model_)
      for (const auto& [phase, count] : phases) by_model_[model][phase] += count;
  }
  TokenCount total() const {
    TokenCount t;
    for (const auto& [model, phases] : by_model_)
      for (const auto& [phase, count] : phases) t += count;
    return t;
  }
  const std::map<std::string, std::map<Phase, TokenCount>>& by_model() const { return by_model_; }
  bool operator==(const UsageTotals&) const = default;

 private:
  std::map<std::string, std::map<Phase, TokenCount>> by_model_;
};

struct ReasonerRequest {
  Role role = Role::Planner;
  std::string rendered_prompt;
  std::vector<std::filesystem::path> attachments;
  double temperature = 0.0;
  int sample_count = 1;
  std::uint64_t seed = 0;
  // Routing tags for scripted backends. Not part of the digest.
  std::string item_id;
  std::string subtask;
};

struct ReasonerResponse {
  std::vector<std::string> completions;
  Usage usage;
};

inline std::string request_digest(const ReasonerRequest& req) {
  std::string material(to_string(req.role));
  material += '\x1f';
  material += req.rendered_prompt;
  material += '\x1f';
  material += std::to_string(req.sample_count);
  return sha256_hex(material);
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ReasonerResponse complete(const ReasonerRequest& request) = 0;
  virtual bool supports_images() const { return false; }
  // Restart any ordered response sequences, so a corpus can be run again.
  virtual void rewind() {}
};

namespace detail {

inline std::uint64_t count_words(std::string_view s) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// Serves canned completions. Lookup tries (role, item, subtask), then
// (role, item, *), (role, *, subtask), (role, *, *); each key is a queue of
// responses consumed in order. A response shorter than sample_count is
// cycled to length.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::string model_name = "scripted") : model_(std::move(model_name)) {}

  void add(Role role, std::string item, std::string subtask, std::vector<std::string> candidates) {
    if (candidates.empty()) throw ConfigError("scripted response needs at least one completion");
    std::lock_guard lock(mu_);
    queues_[Key{role, std::move(item), std::move(subtask)}].responses.push_back(std::move(candidates));
  }
  void add(Role role, std::string item, std::string subtask, std::string completion) {
    add(role, std::move(item), std::move(subtask), std::vector<std::string>{std::move(completion)});
  }

  // {"model": "...", "entries": [{"role", "item"?, "subtask"?, "responses": [str | [str...]]}]}
  static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& j) {
    auto backend = std::make_unique<ScriptedBackend>(j.value("model", std::string("scripted")));
    backend->load(j);
    return backend;
  }

  void load(const nlohmann::json& j) {
    for (const auto& e : j.at("entries")) {
      const auto role = role_from_string(e.at("role").get<std::string>());
      const auto item = e.value("item", std::string());
      const auto subtask = e.value("subtask", std::string());
      for (const auto& r : e.at("responses")) {
        if (r.is_array()) add(role, item, subtask, r.get<std::vector<std::string>>());
        else add(role, item, subtask, r.get<std::string>());
      }
    }
  }

  ReasonerResponse complete(const ReasonerRequest& req) override {
    std::lock_guard lock(mu_);
    Queue* q = nullptr;
    for (const auto& key : {Key{req.role, req.item_id, req.subtask}, Key{req.role, req.item_id, ""},
                            Key{req.role, "", req.subtask}, Key{req.role, "", ""}}) {
      if (auto it = queues_.find(key); it != queues_.end()) {
        q = &it->second;
        break;
      }
    }
    if (q == nullptr || q->cursor >= q->responses.size())
      throw BackendUnavailable("scripted backend has no " + std::string(to_string(req.role)) +
                               " response left for item '" + req.item_id + "' subtask '" +
                               req.subtask + "'");
    const auto& candidates = q->responses[q->cursor++];
    ReasonerResponse resp;
    const auto want = static_cast<std::size_t>(std::max(1, req.sample_count));
    for (std::size_t i = 0; i < want; ++i) resp.completions.push_back(candidates[i % candidates.size()]);
    resp.usage.model_name = model_;
    resp.usage.input_tokens = detail::count_words(req.rendered_prompt);
    for (const auto& c : resp.completions) resp.usage.output_tokens += detail::count_words(c);
    return resp;
  }

  void rewind() override {
    std::lock_guard lock(mu_);
    for (auto& [k, q] : queues_) q.cursor = 0;
  }

 private:
  struct Key {
    Role role;
    std::string item;
    std::string subtask;
    auto operator<=>(const Key&) const = default;
  };
  struct Queue {
    std::vector<std::vector<std::string>> responses;
    std::size_t cursor = 0;
  };
  std::string model_;
  std::mutex mu_;
  std::map<Key, Queue> queues_;
};

struct TranscriptEntry {
  std::string digest;
  Role role = Role::Planner;
  std::string prompt;
  std::vector<std::string> completions;
  Usage usage;
};

inline nlohmann::json to_json(const TranscriptEntry& e) {
  return {{"digest", e.digest},
          {"role", std::string(to_string(e.role))},
          {"prompt", e.prompt},
          {"completions", e.completions},
          {"usage",
           {{"input_tokens", e.usage.input_tokens},
            {"output_tokens", e.usage.output_tokens},
            {"model", e.usage.model_name}}}};
}

inline TranscriptEntry transcript_entry_from_json(const nlohmann::json& j) {
  TranscriptEntry e;
  e.digest = j.at("digest").get<std::string>();
  e.role = role_from_string(j.at("role").get<std::string>());
  e.prompt = j.value("prompt", std::string());
  e.completions = j.at("completions").get<std::vector<std::string>>();
  const auto& u = j.at("usage");
  e.usage.input_tokens = u.value("input_tokens", std::uint64_t{0});
  e.usage.output_tokens = u.value("output_tokens", std::uint64_t{0});
  e.usage.model_name = u.value("model", std::string());
  return e;
}

// Append-only transcript file: one JSON record per line.
class TranscriptWriter {
 public:
  explicit TranscriptWriter(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw ConfigError("cannot open transcript for append: " + path.string());
  }
  void append(const TranscriptEntry& e) {
    std::lock_guard lock(mu_);
    out_ << to_json(e).dump() << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

class RecordingBackend : public Backend {
 public:
  RecordingBackend(Backend& inner, const std::filesystem::path& transcript)
      : inner_(inner), writer_(transcript) {}

  ReasonerResponse complete(const ReasonerRequest& req) override {
    auto resp = inner_.complete(req);
    writer_.append({request_digest(req), req.role, req.rendered_prompt, resp.completions, resp.usage});
    return resp;
  }
  bool supports_images() const override { return inner_.supports_images(); }
  void rewind() override { inner_.rewind(); }

 private:
  Backend& inner_;
  TranscriptWriter writer_;
};

// Answers from a recorded transcript. Entries sharing a digest are served in
// recorded order; once exhausted the last one repeats.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& transcript, bool images = false)
      : images_(images) {
    std::ifstream in(transcript);
    if (!in) throw ConfigError("cannot read transcript " + transcript.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      try {
        auto e = transcript_entry_from_json(nlohmann::json::parse(line));
        entries_[e.digest].items.push_back(std::move(e));
      } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("transcript line " + std::to_string(lineno) + ": " + ex.what());
      }
    }
  }

  ReasonerResponse complete(const ReasonerRequest& req) override {
    const auto digest = request_digest(req);
    std::lock_guard lock(mu_);
    auto it = entries_.find(digest);
    if (it == entries_.end()) throw ReplayMiss(digest);
    auto& slot = it->second;
    const auto& e = slot.items[std::min(slot.cursor, slot.items.size() - 1)];
    if (slot.cursor < slot.items.size()) ++slot.cursor;
    return {e.completions, e.usage};
  }
  bool supports_images() const override { return images_; }
  void rewind() override {
    std::lock_guard lock(mu_);
    for (auto& [d, slot] : entries_) slot.cursor = 0;
  }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Slot {
    std::vector<TranscriptEntry> items;
    std::size_t cursor = 0;
  };
  bool images_;
  std::mutex mu_;
  std::map<std::string, Slot> entries_;
};

struct LiveBackendOptions {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "VERITREE_API_KEY";
  int timeout_seconds = 60;
  int max_retries = 2;
  bool vision = true;
};

namespace detail {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // no trailing slash
};

inline UrlParts split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string_view::npos ? 0 : scheme_end + 3;
  const auto slash = url.find('/', host_start);
  UrlParts parts;
  parts.origin = std::string(url.substr(0, slash));
  parts.path = slash == std::string_view::npos ? "" : std::string(url.substr(slash));
  while (!parts.path.empty() && parts.path.back() == '/') parts.path.pop_back();
  return parts;
}

inline std::string mime_for(const std::filesystem::path& p) {
  auto ext = lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

}  // namespace detail

inline std::string require_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr || *v == '\0') throw ConfigError("environment variable " + name + " is not set");
  return v;
}

// OpenAI-style chat-completion client. The API key is read from the
// environment at construction and never written anywhere.
class LiveBackend : public Backend {
 public:
  explicit LiveBackend(LiveBackendOptions opts)
      : opts_(std::move(opts)), api_key_(require_env(opts_.api_key_env)),
        url_(detail::split_url(opts_.base_url)) {}

  ReasonerResponse complete(const ReasonerRequest& req) override {
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", req.rendered_prompt}});
    if (opts_.vision) {
      for (const auto& a : req.attachments) {
        const auto data = base64_encode(detail::read_file(a));
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + detail::mime_for(a) + ";base64," + data}}}});
      }
    }
    nlohmann::json body = {{"model", opts_.model},
                           {"messages", {{{"role", "user"}, {"content", content}}}},
                           {"n", req.sample_count},
                           {"temperature", req.temperature},
                           {"seed", req.seed}};
    httplib::Client client(url_.origin);
    client.set_connection_timeout(opts_.timeout_seconds);
    client.set_read_timeout(opts_.timeout_seconds);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(200 * attempt));
      auto res = client.Post(url_.path + "/chat/completions", headers, body.dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw BackendUnavailable("chat completion rejected with HTTP " + std::to_string(res->status));
      return parse_response(res->body);
    }
    throw BackendUnavailable("chat completion failed after retries: " + last_error);
  }

  bool supports_images() const override { return opts_.vision; }

  static ReasonerResponse parse_response(const std::string& body) {
    ReasonerResponse out;
    try {
      const auto j = nlohmann::json::parse(body);
      for (const auto& choice : j.at("choices"))
        out.completions.push_back(choice.at("message").at("content").get<std::string>());
      if (j.contains("usage")) {
        out.usage.input_tokens = j["usage"].value("prompt_tokens", std::uint64_t{0});
        out.usage.output_tokens = j["usage"].value("completion_tokens", std::uint64_t{0});
      }
      out.usage.model_name = j.value("model", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw BackendUnavailable(std::string("malformed chat completion: ") + e.what());
    }
    if (out.completions.empty()) throw BackendUnavailable("chat completion returned no choices");
    return out;
  }

 private:
  LiveBackendOptions opts_;
  std::string api_key_;
  detail::UrlParts url_;
};

// Template with `{{slot}}` placeholders; rendering fails on any unbound slot.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string text) : name_(std::move(name)), text_(std::move(text)) {}

  std::string render(const std::map<std::string, std::string, std::less<>>& slots) const {
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const auto open = text_.find("{{", pos);
      if (open == std::string::npos) break;
      const auto close = text_.find("}}", open + 2);
      if (close == std::string::npos) throw TemplateError(name_ + ": unterminated slot");
      out.append(text_, pos, open - pos);
      const auto slot = text_.substr(open + 2, close - open - 2);
      auto it = slots.find(slot);
      if (it == slots.end()) throw TemplateError(name_ + ": unbound slot '" + slot + "'");
      out += it->second;
      pos = close + 2;
    }
    out.append(text_, pos, std::string::npos);
    return out;
  }

  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::string text_;
};

namespace prompts {

inline const PromptTemplate& planner() {
  static const PromptTemplate t(
      "planner",
      "{{task}}\n"
      "- Thought: Can reason about the current situation.\n"
      "- Actions:\n"
      "{{actions}}\n"
      "{{memory}}"
      "News text: {{news_text}}\n"
      "News image: {{image}}\n"
      "{{trajectory}}"
      "Give only the next step in the form:\n"
      "Thought {{step}}: <reasoning>\n"
      "Action {{step}}: <Verb[argument]>\n");
  return t;
}

inline const PromptTemplate& trajectory_score() {
  static const PromptTemplate t(
      "trajectory_score",
      "Task: Analyze Misinformation Detection Trajectories.\n"
      "The trajectories are labeled by environmental observations about the situation, thoughts that "
      "can reason about the current situation, and actions. Given a news item and a trajectory, "
      "evaluate its correctness and provide your reasoning and analysis in detail. Focus on the "
      "latest thought, action, and observation.\n"
      "(1) Incomplete trajectories can be correct if the thoughts and actions so far are correct, "
      "even if the answer is not found yet.\n"
      "(2) Do not generate additional thoughts or actions beyond those provided.\n"
      "(3) At the last line of your analysis, conclude with \"Thus the correctness score is {s}\", "
      "where s is an integer from 1 to 10.\n\n"
      "News text: {{news_text}}\n"
      "News image: {{image}}\n"
      "Trajectory:\n{{trajectory}}");
  return t;
}

inline const PromptTemplate& confidence_score() {
  static const PromptTemplate t(
      "confidence_score",
      "Task: Given a news, thoughts, observations, and a generated answer. If the answer can be "
      "drawn by thoughts or observation, then the result is relatively reliable; otherwise, it is "
      "unreliable. Give a brief analysis of the reliability of the answer. Then, at the last line "
      "conclude \"Thus the reliability score is {s}\", where s is an integer from 1 to 10.\n\n"
      "News text: {{news_text}}\n"
      "News image: {{image}}\n"
      "Observations:\n{{observations}}"
      "Answer: {{answer}}\n");
  return t;
}

inline const PromptTemplate& initializer() {
  static const PromptTemplate t(
      "initializer",
      "Task: Given a news text and a news image, your task is to infer the probability that the "
      "news belongs to the following {{count}} different types of forgery based on your "
      "experience:\n"
      "{{categories}}\n"
      "Please avoid redundant analysis and directly return the judgment result in the following "
      "form: \"Thus, the possibility of {{names}} are [{{placeholders}}]\", where {{placeholders}} "
      "are floats from 0 to 1.\n\n"
      "News text: {{news_text}}\n"
      "News image: {{image}}\n");
  return t;
}

inline const PromptTemplate& image_question() {
  static const PromptTemplate t("image_question",
                                "Answer the question about the attached news image.\n"
                                "News image: {{image}}\n"
                                "Question: {{question}}\n");
  return t;
}

}  // namespace prompts

// One line of the planner's action menu.
struct ActionDoc {
  std::string signature;  // e.g. "Google[entity]"
  std::string description;
};

inline std::string render_trajectory(std::span<const TrajectoryStep> steps) {
  std::string out;
  for (const auto& s : steps) {
    const auto n = std::to_string(s.index + 1);
    out += "Thought " + n + ": " + s.thought + "\n";
    out += "Action " + n + ": " + render_action(s.action) + "\n";
    if (!s.action.is_finish()) out += "Observation " + n + ": " + s.observation + "\n";
  }
  return out;
}

struct ReasonerOptions {
  double temperature = 0.7;
  std::uint64_t seed = 0;
  int score_retries = 1;
  int default_raw_score = 5;
};

// Per-episode facade over a shared backend. Records usage and fallback
// warnings for the episode log; calls are sequential within an episode.
class Reasoner {
 public:
  Reasoner(Backend& backend, ReasonerOptions opts = {}) : backend_(backend), opts_(opts) {}

  // Produces the text shown for an item's image when the backend cannot take
  // attachments.
  void set_captioner(std::function<std::string(const NewsItem&)> fn) { captioner_ = std::move(fn); }

  std::vector<PlannerUtterance> plan(const SubtaskId& subtask, std::span<const TrajectoryStep> trajectory,
                                     const std::vector<std::string>& memory, const NewsItem& item,
                                     int n, const std::vector<ActionDoc>& actions) {
    std::string action_list;
    for (std::size_t i = 0; i < actions.size(); ++i)
      action_list += "(" + std::to_string(i + 1) + ") " + actions[i].signature + ": " +
                     actions[i].description + "\n";
    action_list += "(" + std::to_string(actions.size() + 1) +
                   ") Finish[answer]: Return the answer and finishes the task.";
    std::string memory_block;
    if (!memory.empty()) {
      memory_block = "Earlier attempts at this task that scored poorly:\n";
      for (const auto& m : memory) memory_block += "- " + m + "\n";
    }
    const auto prompt = prompts::planner().render({{"task", subtask.task_description},
                                                   {"actions", action_list},
                                                   {"memory", memory_block},
                                                   {"news_text", item.text},
                                                   {"image", image_note(item)},
                                                   {"trajectory", render_trajectory(trajectory)},
                                                   {"step", std::to_string(trajectory.size() + 1)}});
    auto resp = call(Role::Planner, prompt, item, subtask.key, n, opts_.temperature);
    std::vector<PlannerUtterance> out;
    for (const auto& c : resp.completions) out.push_back(parse_utterance(c));
    return out;
  }

  double score_trajectory(std::span<const TrajectoryStep> trajectory, const NewsItem& item,
                          const std::string& subtask_key = {}) {
    const auto prompt = prompts::trajectory_score().render(
        {{"news_text", item.text}, {"image", image_note(item)}, {"trajectory", render_trajectory(trajectory)}});
    return scored(Role::EvaluatorTrajectory, prompt, item, subtask_key, kCorrectnessMarker);
  }

  double score_confidence(const std::vector<std::string>& observations, const NewsItem& item,
                          const Action& answer, const std::string& subtask_key = {}) {
    std::string obs;
    for (std::size_t i = 0; i < observations.size(); ++i)
      obs += "Observation " + std::to_string(i + 1) + ": " + observations[i] + "\n";
    if (observations.empty()) obs = "(none)\n";
    const auto prompt = prompts::confidence_score().render(
        {{"news_text", item.text}, {"image", image_note(item)}, {"observations", obs},
         {"answer", render_action(answer)}});
    return scored(Role::EvaluatorConfidence, prompt, item, subtask_key, kReliabilityMarker);
  }

  InitDistribution init_priors(const NewsItem& item, const std::vector<SubtaskId>& subtasks) {
    std::string categories;
    std::string names;
    std::string placeholders;
    for (std::size_t i = 0; i < subtasks.size(); ++i) {
      const auto n = std::to_string(i + 1);
      categories += "(" + n + ") " + subtasks[i].category_name + ": " + subtasks[i].prior_hint + "\n";
      if (i > 0) {
        names += ", ";
        placeholders += ",";
      }
      names += subtasks[i].category_name;
      placeholders += "p" + n;
    }
    const auto prompt = prompts::initializer().render({{"count", std::to_string(subtasks.size())},
                                                       {"categories", categories},
                                                       {"names", names},
                                                       {"placeholders", placeholders},
                                                       {"news_text", item.text},
                                                       {"image", image_note(item)}});
    auto resp = call(Role::Initializer, prompt, item, "", 1, 0.0);
    auto dist = parse_init_distribution(resp.completions.front(), subtasks.size());
    if (dist.fallback) warn("initializer output unparsable; using uniform priors");
    if (dist.clamped) warn("initializer priors clamped to [0,1]");
    return dist;
  }

  std::string answer_image_question(const NewsItem& item, const std::string& question) {
    const auto prompt =
        prompts::image_question().render({{"image", image_note(item)}, {"question", question}});
    return call(Role::ImageQuestion, prompt, item, "", 1, 0.0).completions.front();
  }

  const std::vector<UsageRecord>& usage() const { return usage_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool supports_images() const { return backend_.supports_images(); }

 private:
  ReasonerResponse call(Role role, const std::string& prompt, const NewsItem& item,
                        const std::string& subtask, int n, double temperature) {
    ReasonerRequest req;
    req.role = role;
    req.rendered_prompt = prompt;
    req.sample_count = n;
    req.temperature = temperature;
    req.seed = opts_.seed;
    req.item_id = item.id;
    req.subtask = subtask;
    if (item.image && backend_.supports_images()) req.attachments.push_back(*item.image);
    auto resp = backend_.complete(req);
    if (resp.completions.empty()) throw BackendUnavailable("backend returned no completions");
    usage_.push_back({role, resp.usage});
    return resp;
  }

  double scored(Role role, const std::string& prompt, const NewsItem& item, const std::string& subtask,
                std::string_view marker) {
    for (int attempt = 0; attempt <= opts_.score_retries; ++attempt) {
      auto resp = call(role, prompt, item, subtask, 1, 0.0);
      try {
        return normalize_score(parse_score(resp.completions.front(), marker));
      } catch (const MissingMarker&) {
      } catch (const NonIntegerScore&) {
      } catch (const ScoreParseError&) {
      }
    }
    warn(std::string(to_string(role)) + " output unparsable after retry; using midpoint score");
    return normalize_score(opts_.default_raw_score);
  }

  std::string image_note(const NewsItem& item) {
    if (!item.image) return "(none)";
    if (backend_.supports_images()) return "(attached)";
    if (captioner_) {
      if (!caption_) caption_ = captioner_(item);
      return *caption_;
    }
    return "(image file " + item.image->filename().string() + ")";
  }

  void warn(std::string msg) { warnings_.push_back(std::move(msg)); }

  Backend& backend_;
  ReasonerOptions opts_;
  std::function<std::string(const NewsItem&)> captioner_;
  std::optional<std::string> caption_;
  std::vector<UsageRecord> usage_;
  std::vector<std::string> warnings_;
};

}  // namespace veritree
