#pragma once

// Profiles: one JSON file naming the subtasks, label set, tools, engine
// settings, reasoner backend, and price table for a run.
//
//   {
//     "name": "mmfakebench-replay",
//     "labels": "mmfakebench" | [{"key", "name", "real"?}],
//     "subtasks": ["text", "image", "match"] | [{"key", "name", "class", "authentic", "forged", ...}],
//     "engine": {"simulations": 6, "continuation": "best", ...},
//     "backend": {"mode": "scripted" | "replay" | "live", "script", "transcript", "model",
//                 "base_url", "api_key_env", "vision"},
//     "tools": {"profile": "mmfakebench", "mode": "fixture" | "live", "fixtures", "select": [...],
//               "cards": [...], "endpoints": {"<id>": {"base_url", "api_key_env", "timeout"}}},
//     "prices": "prices.json" | {"models": {...}}
//   }
//
// Relative paths resolve against the profile's directory and must exist.

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritree/bench.hpp"
#include "veritree/core.hpp"
#include "veritree/reasoner.hpp"
#include "veritree/search.hpp"
#include "veritree/toolkit.hpp"

namespace veritree {

enum class BackendMode { Scripted, Replay, Live };

struct BackendSpec {
  BackendMode mode = BackendMode::Scripted;
  std::filesystem::path script;
  std::filesystem::path transcript;
  LiveBackendOptions live;
};

struct ToolSpec {
  std::string family = "mmfakebench";
  bool live = false;
  std::filesystem::path fixtures;
  std::optional<std::vector<std::string>> select;  // keep only these verbs, in family order
  std::vector<ToolCard> extra_cards;
  std::map<std::string, HttpEndpoint> endpoints;
};

struct Profile {
  std::string name;
  std::filesystem::path dir;
  LabelSet labels = LabelSet::mmfakebench();
  std::vector<SubtaskId> subtasks = mmfakebench_subtasks();
  EngineConfig engine;
  BackendSpec backend;
  ToolSpec tools;
  std::optional<PriceTable> prices;
  nlohmann::json source;  // the parsed file, kept for re-export
};

namespace detail {

inline std::filesystem::path existing_path(const std::filesystem::path& dir, const std::string& value,
                                           std::string_view what) {
  std::filesystem::path p = value;
  if (p.is_relative()) p = dir / p;
  if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
  return p;
}

inline SubtaskId builtin_subtask(const std::string& key) {
  for (const auto& s : mmfakebench_subtasks())
    if (s.key == key) return s;
  for (const auto& s : amg_subtasks())
    if (s.key == key) return s;
  throw ConfigError("unknown built-in subtask '" + key + "'");
}

inline SubtaskId subtask_from_json(const nlohmann::json& j) {
  if (j.is_string()) return builtin_subtask(j.get<std::string>());
  SubtaskId s;
  const auto key = j.at("key").get<std::string>();
  if (j.size() == 1) return builtin_subtask(key);
  s.key = key;
  s.display_name = j.value("name", key);
  s.forgery_class = {j.at("class").get<std::string>()};
  s.authentic_token = j.at("authentic").get<std::string>();
  s.forged_token = j.at("forged").get<std::string>();
  s.task_description = j.value("task", std::string());
  s.category_name = j.value("category", s.display_name);
  s.prior_hint = j.value("hint", std::string());
  if (s.task_description.empty())
    s.task_description = "Solve a " + s.display_name + " task with interleaving Thought, Action, and Observation steps.\n"
                         "If there is credible evidence that this source is forged, answer Finish[" +
                         s.forged_token + "]. Otherwise answer Finish[" + s.authentic_token + "].";
  return s;
}

inline LabelSet labels_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "mmfakebench") return LabelSet::mmfakebench();
    if (name == "amg") return LabelSet::amg();
    throw ConfigError("unknown label set '" + name + "'");
  }
  std::vector<LabelInfo> labels;
  for (const auto& l : j) {
    const auto key = l.at("key").get<std::string>();
    labels.push_back({{key}, l.value("name", key), l.value("real", false)});
  }
  return LabelSet("custom", std::move(labels));
}

inline BackendMode backend_mode(const std::string& s) {
  if (s == "scripted") return BackendMode::Scripted;
  if (s == "replay") return BackendMode::Replay;
  if (s == "live") return BackendMode::Live;
  throw ConfigError("backend mode must be scripted, replay, or live; got '" + s + "'");
}

}  // namespace detail

inline Profile parse_profile(const nlohmann::json& j, const std::filesystem::path& dir) {
  Profile p;
  p.dir = dir;
  p.source = j;
  p.name = j.value("name", std::string("unnamed"));
  if (j.contains("labels")) p.labels = detail::labels_from_json(j["labels"]);
  if (j.contains("subtasks")) {
    p.subtasks.clear();
    for (const auto& s : j["subtasks"]) p.subtasks.push_back(detail::subtask_from_json(s));
  } else if (p.labels.name() == "amg") {
    p.subtasks = amg_subtasks();
  }
  validate_subtasks(p.subtasks, p.labels);

  const auto b = j.value("backend", nlohmann::json::object());
  p.backend.mode = detail::backend_mode(b.value("mode", std::string("scripted")));
  // Scripted runs replay canned candidates in order; live runs rank them.
  p.engine.continuation = p.backend.mode == BackendMode::Scripted ? Continuation::First : Continuation::BestScore;
  if (b.contains("script")) p.backend.script = detail::existing_path(dir, b["script"].get<std::string>(), "script");
  if (b.contains("transcript"))
    p.backend.transcript = detail::existing_path(dir, b["transcript"].get<std::string>(), "transcript");
  if (p.backend.mode == BackendMode::Scripted && p.backend.script.empty())
    throw ConfigError("scripted backend needs a 'script' file");
  if (p.backend.mode == BackendMode::Replay && p.backend.transcript.empty())
    throw ConfigError("replay backend needs a 'transcript' file");
  p.backend.live.base_url = b.value("base_url", p.backend.live.base_url);
  p.backend.live.model = b.value("model", p.backend.live.model);
  p.backend.live.api_key_env = b.value("api_key_env", p.backend.live.api_key_env);
  p.backend.live.timeout_seconds = b.value("timeout", p.backend.live.timeout_seconds);
  p.backend.live.max_retries = b.value("max_retries", p.backend.live.max_retries);
  p.backend.live.vision = b.value("vision", p.backend.live.vision);

  const auto engine = j.value("engine", nlohmann::json::object());
  for (const auto& [k, v] : engine.items())
    apply_setting(p.engine, k, v.is_string() ? v.get<std::string>() : v.dump());
  p.engine.validate();

  const auto t = j.value("tools", nlohmann::json::object());
  p.tools.family = t.value("profile", p.labels.name() == "amg" ? std::string("amg") : std::string("mmfakebench"));
  const auto mode = t.value("mode", std::string("fixture"));
  if (mode != "fixture" && mode != "live") throw ConfigError("tools mode must be fixture or live");
  p.tools.live = mode == "live";
  if (t.contains("fixtures"))
    p.tools.fixtures = detail::existing_path(dir, t["fixtures"].get<std::string>(), "tool fixtures");
  if (!p.tools.live && p.tools.fixtures.empty()) throw ConfigError("fixture tools need a 'fixtures' path");
  if (t.contains("select")) p.tools.select = t["select"].get<std::vector<std::string>>();
  for (const auto& c : t.value("cards", nlohmann::json::array())) p.tools.extra_cards.push_back(tool_card_from_json(c));
  const auto endpoints = t.value("endpoints", nlohmann::json::object());
  for (const auto& [id, e] : endpoints.items())
    p.tools.endpoints[id] = {e.at("base_url").get<std::string>(), e.value("timeout", 20),
                             e.value("api_key_env", std::string())};

  if (j.contains("prices")) {
    if (j["prices"].is_string())
      p.prices = PriceTable::load(detail::existing_path(dir, j["prices"].get<std::string>(), "price table"));
    else
      p.prices = PriceTable::from_json(j["prices"]);
  }
  return p;
}

inline Profile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read profile " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_profile(j, std::filesystem::absolute(path).parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Every tool card the profile makes available, before any selection.
inline std::vector<ToolCard> profile_cards(const Profile& p) {
  auto cards = builtin_cards(p.tools.family, !p.tools.live);
  for (const auto& c : p.tools.extra_cards) cards.push_back(c);
  return cards;
}

// Per-run overrides from the command line.
struct RunOptions {
  std::optional<std::filesystem::path> record;
  std::optional<std::filesystem::path> replay;
  std::vector<std::pair<std::string, std::string>> settings;
  std::optional<std::filesystem::path> config;
};

// Owns the backend stack and registry an Engine borrows. Not movable.
class Runtime {
 public:
  Runtime(Profile profile, const RunOptions& opts = {}) : profile_(std::move(profile)) {
    if (opts.config) profile_.engine = load_engine_config(*opts.config, profile_.engine);
    for (const auto& [k, v] : opts.settings) apply_setting(profile_.engine, k, v);
    profile_.engine.validate();

    if (opts.record && opts.replay) throw ConfigError("--record and --replay are mutually exclusive");
    if (opts.replay) {
      if (!std::filesystem::exists(*opts.replay)) throw ConfigError("transcript not found: " + opts.replay->string());
      base_ = std::make_unique<ReplayBackend>(*opts.replay, profile_.backend.live.vision);
    } else {
      switch (profile_.backend.mode) {
        case BackendMode::Scripted: {
          std::ifstream in(profile_.backend.script);
          try {
            base_ = ScriptedBackend::from_json(nlohmann::json::parse(in));
          } catch (const nlohmann::json::exception& e) {
            throw ConfigError(profile_.backend.script.string() + ": " + e.what());
          }
          break;
        }
        case BackendMode::Replay:
          base_ = std::make_unique<ReplayBackend>(profile_.backend.transcript, profile_.backend.live.vision);
          break;
        case BackendMode::Live:
          base_ = std::make_unique<LiveBackend>(profile_.backend.live);
          break;
      }
    }
    // Recording wraps whatever backend the profile names; a live profile
    // still needs its credentials.
    if (opts.record) recorder_ = std::make_unique<RecordingBackend>(*base_, *opts.record);
    set_cards(active_cards(profile_cards(profile_)));
  }

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const Profile& profile() const { return profile_; }
  Backend& backend() { return recorder_ ? *recorder_ : *base_; }
  const Registry& registry() const { return *registry_; }

  // Rebuilds the registry from the given cards, binding each to a client.
  void set_cards(const std::vector<ToolCard>& cards) {
    auto reg = std::make_unique<Registry>(profile_.engine.observation_budget);
    for (const auto& c : cards) reg->register_card(c, client_for(c));
    registry_ = std::move(reg);
  }

  std::vector<ToolCard> active_cards(const std::vector<ToolCard>& cards) const {
    if (!profile_.tools.select) return cards;
    std::vector<ToolCard> out;
    for (const auto& name : *profile_.tools.select) {
      auto it = std::find_if(cards.begin(), cards.end(), [&](const ToolCard& c) { return c.name == name; });
      if (it == cards.end()) throw ConfigError("selected tool '" + name + "' is not in the tool family");
      out.push_back(*it);
    }
    return out;
  }

  Engine engine() { return Engine(profile_.engine, profile_.subtasks, profile_.labels, *registry_, backend()); }

 private:
  std::shared_ptr<ToolClient> client_for(const ToolCard& card) {
    if (card.binding.kind == Binding::Kind::Fixture) {
      if (!fixtures_) {
        if (profile_.tools.fixtures.empty()) throw ConfigError("tool '" + card.name + "' needs fixtures");
        fixtures_ = FixtureStore::load(profile_.tools.fixtures);
      }
      return fixtures_;
    }
    const auto& id = card.binding.id;
    auto endpoint = [&](std::string default_url, std::string key_env = {}) {
      if (auto it = profile_.tools.endpoints.find(id); it != profile_.tools.endpoints.end()) return it->second;
      return HttpEndpoint{std::move(default_url), 20, std::move(key_env)};
    };
    if (id == "google") return std::make_shared<GoogleSearchClient>(endpoint("https://www.googleapis.com", "VERITREE_GOOGLE_KEY"));
    if (id == "wikipedia") return std::make_shared<WikipediaClient>(endpoint("https://en.wikipedia.org"));
    if (id == "tineye") return std::make_shared<TinEyeClient>(endpoint("https://api.tineye.com", "VERITREE_TINEYE_KEY"));
    if (id == "entity") return std::make_shared<EntityClient>(endpoint("http://localhost:8090"));
    if (id == "detector") return std::make_shared<ModelEndpointClient>(endpoint("http://localhost:8091"), "detect");
    if (id == "counterfactual")
      return std::make_shared<ModelEndpointClient>(endpoint("http://localhost:8092"), "counterfactual");
    if (id == "vqa") return std::make_shared<ReasonerImageClient>(backend());
    throw ConfigError("no live client for binding '" + id + "'");
  }

  Profile profile_;
  std::unique_ptr<Backend> base_;
  std::unique_ptr<Backend> recorder_;
  std::shared_ptr<FixtureStore> fixtures_;
  std::unique_ptr<Registry> registry_;
};

// Profile JSON with the tool selection replaced by `verbs`.
inline nlohmann::json export_profile(const Profile& p, const std::vector<std::string>& verbs) {
  auto j = p.source;
  j["tools"]["select"] = verbs;
  return j;
}

}  // namespace veritree
