#pragma once

// Tool cards, the verb registry, live service clients, and fixture-backed
// doubles. Tool faults surface as observations, never as episode errors.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "veritree/core.hpp"
#include "veritree/digest.hpp"
#include "veritree/reasoner.hpp"

namespace veritree {

enum class ArgumentKind { QueryText, ImageRef, ImageQuestion };

inline std::string_view to_string(ArgumentKind k) {
  switch (k) {
    case ArgumentKind::QueryText: return "query-text";
    case ArgumentKind::ImageRef: return "image-ref";
    case ArgumentKind::ImageQuestion: return "image+question";
  }
  return "unknown";
}

inline ArgumentKind argument_kind_from_string(std::string_view s) {
  for (auto k : {ArgumentKind::QueryText, ArgumentKind::ImageRef, ArgumentKind::ImageQuestion})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown tool argument kind '" + std::string(s) + "'");
}

struct Binding {
  enum class Kind { Live, Fixture };
  Kind kind = Kind::Fixture;
  std::string id;  // live client id, or fixture set name

  static Binding live(std::string id) { return {Kind::Live, std::move(id)}; }
  static Binding fixture(std::string id = "default") { return {Kind::Fixture, std::move(id)}; }
  bool operator==(const Binding&) const = default;
};

struct ToolCard {
  std::string name;
  std::string description;
  ArgumentKind input = ArgumentKind::QueryText;
  std::string output_kind = "text-observation";
  std::set<std::string> subtask_scopes;
  Binding binding;

  std::string signature() const {
    switch (input) {
      case ArgumentKind::QueryText: return name + "[entity]";
      case ArgumentKind::ImageRef: return name + "[image]";
      case ArgumentKind::ImageQuestion: return name + "[question]";
    }
    return name + "[argument]";
  }
};

// Implementations throw ToolTimeout or ToolTransportError on failure.
class ToolClient {
 public:
  virtual ~ToolClient() = default;
  virtual std::string call(const std::string& verb, const std::string& argument, const NewsItem& item) = 0;
};

// Observation fixtures: JSON-lines records
//   {"verb": "...", "argument": "...", "item": "<optional id>", "observation": "..."}
// loaded from one file or every *.jsonl file in a directory. Lookup is by
// (verb, argument digest), preferring an item-scoped record.
class FixtureStore : public ToolClient {
 public:
  FixtureStore() = default;

  static std::shared_ptr<FixtureStore> load(const std::filesystem::path& path) {
    auto store = std::make_shared<FixtureStore>();
    if (std::filesystem::is_directory(path)) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(path))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) store->load_file(f);
    } else {
      store->load_file(path);
    }
    return store;
  }

  void add(std::string verb, std::string_view argument, std::string observation, std::string item = {}) {
    std::lock_guard lock(mu_);
    records_[key(verb, argument, item)] = std::move(observation);
  }

  std::string call(const std::string& verb, const std::string& argument, const NewsItem& item) override {
    std::lock_guard lock(mu_);
    if (auto it = records_.find(key(verb, argument, item.id)); it != records_.end()) return it->second;
    if (auto it = records_.find(key(verb, argument, "")); it != records_.end()) return it->second;
    throw ToolTransportError("no fixture for " + verb + "[" + argument + "]");
  }

  std::size_t size() const { return records_.size(); }

 private:
  static std::string key(std::string_view verb, std::string_view argument, std::string_view item) {
    return std::string(verb) + '\x1f' + sha256_hex(detail::trim(argument)) + '\x1f' + std::string(item);
  }

  void load_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read fixture file " + file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        add(j.at("verb").get<std::string>(), j.at("argument").get<std::string>(),
            j.at("observation").get<std::string>(), j.value("item", std::string()));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  std::mutex mu_;
  std::map<std::string, std::string> records_;
};

struct HttpEndpoint {
  std::string base_url;
  int timeout_seconds = 20;
  std::string api_key_env;  // empty when the service needs no key
};

namespace detail {

inline std::string optional_env(const std::string& name) {
  if (name.empty()) return {};
  return require_env(name);
}

inline httplib::Client make_client(const HttpEndpoint& ep) {
  httplib::Client client(split_url(ep.base_url).origin);
  client.set_connection_timeout(ep.timeout_seconds);
  client.set_read_timeout(ep.timeout_seconds);
  client.set_follow_location(true);
  return client;
}

inline httplib::Response check(httplib::Result res, std::string_view service) {
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
      throw ToolTimeout(std::string(service) + ": " + httplib::to_string(err));
    throw ToolTransportError(std::string(service) + ": " + httplib::to_string(err));
  }
  if (res->status != 200)
    throw ToolTransportError(std::string(service) + ": HTTP " + std::to_string(res->status));
  return std::move(*res);
}

inline nlohmann::json parse_json(const std::string& body, std::string_view service) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ToolTransportError(std::string(service) + ": malformed response: " + e.what());
  }
}

inline const std::filesystem::path& require_image(const NewsItem& item, std::string_view service) {
  if (!item.image) throw ToolTransportError(std::string(service) + ": news item has no image");
  return *item.image;
}

}  // namespace detail

// Web search through a Custom Search JSON style endpoint.
class GoogleSearchClient : public ToolClient {
 public:
  GoogleSearchClient(HttpEndpoint ep, std::string engine_id_env = "VERITREE_GOOGLE_CX", int top_k = 3)
      : ep_(std::move(ep)), key_(detail::optional_env(ep_.api_key_env)),
        cx_(detail::optional_env(engine_id_env)), top_k_(top_k) {}

  std::string call(const std::string&, const std::string& argument, const NewsItem&) override {
    auto client = detail::make_client(ep_);
    httplib::Params params{{"q", argument}, {"num", std::to_string(top_k_)}};
    if (!key_.empty()) params.emplace("key", key_);
    if (!cx_.empty()) params.emplace("cx", cx_);
    const auto path = detail::split_url(ep_.base_url).path + "/customsearch/v1";
    const auto res = detail::check(client.Get(path, params, httplib::Headers{}), "Google");
    const auto j = detail::parse_json(res.body, "Google");
    std::string out;
    int k = 0;
    if (j.contains("items")) {
      for (const auto& it : j["items"]) {
        if (k == top_k_) break;
        if (k > 0) out += "\n";
        out += "Retrieved Information " + std::to_string(++k) + ": " + it.value("title", std::string()) +
               " ... " + it.value("snippet", std::string());
      }
    }
    if (k == 0) return "No results found for " + argument + ".";
    return out;
  }

 private:
  HttpEndpoint ep_;
  std::string key_;
  std::string cx_;
  int top_k_;
};

// Encyclopedia lookup through a MediaWiki action API.
class WikipediaClient : public ToolClient {
 public:
  explicit WikipediaClient(HttpEndpoint ep) : ep_(std::move(ep)) {}

  std::string call(const std::string&, const std::string& argument, const NewsItem&) override {
    auto client = detail::make_client(ep_);
    const auto path = detail::split_url(ep_.base_url).path + "/w/api.php";
    const auto entity = unquote(argument);
    httplib::Params params{{"action", "query"},  {"format", "json"},   {"prop", "extracts"},
                           {"exintro", "1"},     {"explaintext", "1"}, {"redirects", "1"},
                           {"titles", entity}};
    const auto res = detail::check(client.Get(path, params, httplib::Headers{}), "Wikipedia");
    const auto j = detail::parse_json(res.body, "Wikipedia");
    if (j.contains("query") && j["query"].contains("pages")) {
      for (const auto& [id, page] : j["query"]["pages"].items()) {
        if (page.contains("missing")) continue;
        auto extract = page.value("extract", std::string());
        if (auto nl = extract.find('\n'); nl != std::string::npos) extract.erase(nl);
        if (!extract.empty()) return extract;
      }
    }
    httplib::Params search{{"action", "opensearch"}, {"format", "json"}, {"limit", "5"}, {"search", entity}};
    const auto sres = detail::check(client.Get(path, search, httplib::Headers{}), "Wikipedia");
    const auto s = detail::parse_json(sres.body, "Wikipedia");
    std::string similar;
    if (s.is_array() && s.size() > 1 && s[1].is_array())
      for (const auto& title : s[1]) similar += (similar.empty() ? "" : ", ") + title.get<std::string>();
    return "Could not find " + entity + ". Similar: [" + similar + "].";
  }

 private:
  static std::string unquote(const std::string& s) {
    auto t = detail::trim(s);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return t;
  }
  HttpEndpoint ep_;
};

// Reverse image search reporting the earliest crawl date of the news image.
class TinEyeClient : public ToolClient {
 public:
  explicit TinEyeClient(HttpEndpoint ep) : ep_(std::move(ep)), key_(detail::optional_env(ep_.api_key_env)) {}

  std::string call(const std::string&, const std::string&, const NewsItem& item) override {
    const auto& image = detail::require_image(item, "TinEye");
    auto client = detail::make_client(ep_);
    httplib::MultipartFormDataItems form{
        {"image_upload", detail::read_file(image), image.filename().string(), detail::mime_for(image)}};
    httplib::Headers headers;
    if (!key_.empty()) headers.emplace("x-api-key", key_);
    const auto path = detail::split_url(ep_.base_url).path + "/rest/search/";
    const auto res = detail::check(client.Post(path, headers, form), "TinEye");
    const auto j = detail::parse_json(res.body, "TinEye");
    std::string earliest;
    std::string where;
    if (j.contains("results") && j["results"].contains("matches")) {
      for (const auto& m : j["results"]["matches"])
        for (const auto& b : m.value("backlinks", nlohmann::json::array())) {
          const auto date = b.value("crawl_date", std::string());
          if (!date.empty() && (earliest.empty() || date < earliest)) {
            earliest = date;
            where = b.value("backlink", std::string());
          }
        }
    }
    if (earliest.empty()) return "No earlier appearance of the image was found online.";
    return "The image first appeared online on " + earliest + " (" + where + ").";
  }

 private:
  HttpEndpoint ep_;
  std::string key_;
};

// Image entity recognition; reads `result[].keyword/root/score` payloads.
class EntityClient : public ToolClient {
 public:
  explicit EntityClient(HttpEndpoint ep) : ep_(std::move(ep)), key_(detail::optional_env(ep_.api_key_env)) {}

  std::string call(const std::string&, const std::string&, const NewsItem& item) override {
    const auto& image = detail::require_image(item, "Entity");
    auto client = detail::make_client(ep_);
    auto path = detail::split_url(ep_.base_url).path + "/entity";
    if (!key_.empty()) path += "?access_token=" + httplib::detail::encode_query_param(key_);
    httplib::Params form{{"image", base64_encode(detail::read_file(image))}};
    const auto res = detail::check(client.Post(path, form), "Entity");
    const auto j = detail::parse_json(res.body, "Entity");
    std::string out;
    for (const auto& r : j.value("result", nlohmann::json::array())) {
      if (!out.empty()) out += "; ";
      out += r.value("keyword", std::string());
      if (r.contains("root")) out += " (" + r["root"].get<std::string>() + ")";
    }
    if (out.empty()) return "No recognizable entities in the image.";
    return "Entities in the image: " + out + ".";
  }

 private:
  HttpEndpoint ep_;
  std::string key_;
};

// Remote model endpoint (forgery or counterfactual detector). POSTs
// {"image", "question", "text"} as JSON and reads {"observation"}.
class ModelEndpointClient : public ToolClient {
 public:
  ModelEndpointClient(HttpEndpoint ep, std::string route) : ep_(std::move(ep)), route_(std::move(route)) {}

  std::string call(const std::string& verb, const std::string& argument, const NewsItem& item) override {
    const auto& image = detail::require_image(item, verb);
    auto client = detail::make_client(ep_);
    httplib::Headers headers;
    if (!ep_.api_key_env.empty()) headers.emplace("Authorization", "Bearer " + require_env(ep_.api_key_env));
    const nlohmann::json body = {{"image", base64_encode(detail::read_file(image))},
                                 {"question", argument},
                                 {"text", item.text}};
    const auto path = detail::split_url(ep_.base_url).path + "/" + route_;
    const auto res = detail::check(client.Post(path, headers, body.dump(), "application/json"), verb);
    const auto j = detail::parse_json(res.body, verb);
    if (!j.contains("observation") || !j["observation"].is_string())
      throw ToolTransportError(verb + ": response lacks an observation");
    return j["observation"].get<std::string>();
  }

 private:
  HttpEndpoint ep_;
  std::string route_;
};

// Image understanding answered by the reasoner backend itself.
class ReasonerImageClient : public ToolClient {
 public:
  explicit ReasonerImageClient(Backend& backend) : backend_(backend) {}

  std::string call(const std::string&, const std::string& argument, const NewsItem& item) override {
    Reasoner r(backend_);
    try {
      auto answer = r.answer_image_question(item, argument);
      std::lock_guard lock(mu_);
      for (const auto& u : r.usage()) usage_.push_back(u);
      return answer;
    } catch (const BackendUnavailable& e) {
      throw ToolTransportError(std::string("VQA: ") + e.what());
    }
  }

  std::vector<UsageRecord> usage() const {
    std::lock_guard lock(mu_);
    return usage_;
  }

 private:
  Backend& backend_;
  mutable std::mutex mu_;
  std::vector<UsageRecord> usage_;
};

inline constexpr std::string_view kToolUnavailable = "tool unavailable";

namespace detail {

// Cuts at a UTF-8 code point boundary.
inline std::string truncate_utf8(std::string s, std::size_t budget) {
  if (s.size() <= budget) return s;
  std::size_t cut = budget;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  s.resize(cut);
  return s;
}

}  // namespace detail

struct ToolInvocation {
  std::string card;
  std::string argument;
  std::string item_id;
  std::string observation;
  std::chrono::microseconds latency{0};
  bool cache_hit = false;
};

// Ordered set of tool cards with per-subtask verb whitelists. The card set is
// fixed once built; the observation cache is shared between copies.
class Registry {
 public:
  explicit Registry(std::size_t observation_budget = 2000)
      : budget_(observation_budget), cache_(std::make_shared<Cache>()) {}

  void register_card(ToolCard card, std::shared_ptr<ToolClient> client) {
    if (card.name.empty() || !detail::is_identifier(card.name))
      throw ConfigError("tool card name must be an identifier: '" + card.name + "'");
    if (card.name == kFinishVerb || find(card.name) != nullptr) throw DuplicateVerb("verb '" + card.name + "' already registered");
    if (!client) throw ConfigError("tool card '" + card.name + "' has no client");
    entries_.push_back({std::move(card), std::move(client)});
  }

  const ToolCard* find(std::string_view verb) const {
    for (const auto& e : entries_)
      if (e.card.name == verb) return &e.card;
    return nullptr;
  }

  std::vector<ToolCard> cards() const {
    std::vector<ToolCard> out;
    for (const auto& e : entries_) out.push_back(e.card);
    return out;
  }

  std::vector<std::string> verbs() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.card.name);
    return out;
  }

  // Verbs invocable under a subtask, always including Finish.
  std::set<std::string, std::less<>> whitelist(std::string_view subtask_key) const {
    std::set<std::string, std::less<>> out{std::string(kFinishVerb)};
    for (const auto& e : entries_)
      if (e.card.subtask_scopes.count(std::string(subtask_key)) != 0) out.insert(e.card.name);
    return out;
  }

  std::vector<ActionDoc> action_docs(std::string_view subtask_key) const {
    std::vector<ActionDoc> out;
    for (const auto& e : entries_)
      if (e.card.subtask_scopes.count(std::string(subtask_key)) != 0)
        out.push_back({e.card.signature(), e.card.description});
    return out;
  }

  // A registry holding only the named verbs, sharing clients and cache.
  Registry restricted_to(const std::set<std::string>& keep) const {
    Registry r(budget_);
    r.cache_ = cache_;
    for (const auto& e : entries_)
      if (keep.count(e.card.name) != 0) r.entries_.push_back(e);
    return r;
  }

  ToolInvocation invoke_detailed(std::string_view verb, const std::string& argument, const NewsItem& item,
                                 std::optional<std::string_view> subtask_key = std::nullopt) const {
    const Entry* entry = nullptr;
    for (const auto& e : entries_)
      if (e.card.name == verb) entry = &e;
    if (entry == nullptr) throw UnregisteredVerb("verb '" + std::string(verb) + "' is not registered");
    if (subtask_key && entry->card.subtask_scopes.count(std::string(*subtask_key)) == 0)
      throw UnregisteredVerb("verb '" + std::string(verb) + "' is not whitelisted for subtask '" +
                             std::string(*subtask_key) + "'");

    const auto started = std::chrono::steady_clock::now();
    const auto key = std::string(verb) + '\x1f' + sha256_hex(argument) + '\x1f' + item.id;
    std::shared_ptr<Slot> slot;
    bool fresh = false;
    {
      std::lock_guard lock(cache_->mu);
      auto& s = cache_->slots[key];
      if (!s) {
        s = std::make_shared<Slot>();
        fresh = true;
      }
      slot = s;
    }
    std::call_once(slot->once, [&] {
      std::string obs;
      try {
        obs = entry->client->call(std::string(verb), argument, item);
        if (detail::trim(obs).empty()) obs = "no information returned";
      } catch (const ToolTimeout& e) {
        obs = std::string(kToolUnavailable) + " (timeout: " + e.what() + ")";
      } catch (const ToolTransportError& e) {
        obs = std::string(kToolUnavailable) + " (" + e.what() + ")";
      }
      slot->observation = detail::truncate_utf8(std::move(obs), budget_);
      std::lock_guard lock(cache_->mu);
      ++cache_->upstream_calls;
    });
    ToolInvocation inv;
    inv.card = std::string(verb);
    inv.argument = argument;
    inv.item_id = item.id;
    inv.observation = slot->observation;
    inv.cache_hit = !fresh;
    inv.latency = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started);
    return inv;
  }

  std::string invoke(std::string_view verb, const std::string& argument, const NewsItem& item,
                     std::optional<std::string_view> subtask_key = std::nullopt) const {
    return invoke_detailed(verb, argument, item, subtask_key).observation;
  }

  std::uint64_t upstream_calls() const {
    std::lock_guard lock(cache_->mu);
    return cache_->upstream_calls;
  }

  void clear_cache() const {
    std::lock_guard lock(cache_->mu);
    cache_->slots.clear();
  }

  std::size_t observation_budget() const { return budget_; }

 private:
  struct Entry {
    ToolCard card;
    std::shared_ptr<ToolClient> client;
  };
  struct Slot {
    std::once_flag once;
    std::string observation;
  };
  struct Cache {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<Slot>> slots;
    std::uint64_t upstream_calls = 0;
  };

  std::size_t budget_;
  std::vector<Entry> entries_;
  std::shared_ptr<Cache> cache_;
};

namespace cards {

inline ToolCard wikipedia(std::set<std::string> scopes, Binding b) {
  return {"Wikipedia",
          "Searches the exact entity on Wikipedia and returns the first paragraph if it exists. If "
          "not, it will return some similar entities to search.",
          ArgumentKind::QueryText, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard google(std::set<std::string> scopes, Binding b) {
  return {"Google",
          "Searches information on Google and returns the snippet if it exists. Please give priority "
          "to Wikipedia; Google should be considered when Wikipedia fails.",
          ArgumentKind::QueryText, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard detect(std::set<std::string> scopes, Binding b) {
  return {"Detect", "Return the forgery situation detected by a forgery detection model.",
          ArgumentKind::ImageRef, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard counterfactual(std::set<std::string> scopes, Binding b) {
  return {"Counterfactual",
          "Return whether the news image shows logically or physically implausible content, judged "
          "by a vision-language model.",
          ArgumentKind::ImageRef, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard vqa(std::set<std::string> scopes, Binding b) {
  return {"VQA", "Return the description of the image information concerned in the question.",
          ArgumentKind::ImageQuestion, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard entity(std::set<std::string> scopes, Binding b) {
  return {"Entity", "Return the entity of the image, including the identity of public figures.",
          ArgumentKind::ImageRef, "text-observation", std::move(scopes), std::move(b)};
}

inline ToolCard tineye(std::set<std::string> scopes, Binding b) {
  return {"TinEye", "Return the earliest time the news image appeared online.", ArgumentKind::ImageRef,
          "text-observation", std::move(scopes), std::move(b)};
}

}  // namespace cards

// The built-in tool families for a benchmark profile ("mmfakebench" or
// "amg"). With `offline` every card is fixture-bound.
inline std::vector<ToolCard> builtin_cards(std::string_view profile = "mmfakebench", bool offline = false) {
  auto bind = [&](std::string live_id) {
    return offline ? Binding::fixture() : Binding::live(std::move(live_id));
  };
  if (profile == "mmfakebench") {
    return {cards::wikipedia({"text"}, bind("wikipedia")),
            cards::google({"text"}, bind("google")),
            cards::vqa({"match"}, bind("vqa")),
            cards::entity({"match"}, bind("entity")),
            cards::counterfactual({"image"}, bind("counterfactual")),
            cards::detect({"image"}, bind("detector"))};
  }
  if (profile == "amg") {
    return {cards::wikipedia({"entity", "event"}, bind("wikipedia")),
            cards::google({"entity", "event", "time"}, bind("google")),
            cards::vqa({"evidence"}, bind("vqa")),
            cards::entity({"entity"}, bind("entity")),
            cards::counterfactual({"evidence"}, bind("counterfactual")),
            cards::detect({"fabrication"}, bind("detector")),
            cards::tineye({"time"}, bind("tineye"))};
  }
  throw ConfigError("unknown tool profile '" + std::string(profile) + "'");
}

inline nlohmann::json to_json(const ToolCard& c) {
  return {{"name", c.name},
          {"description", c.description},
          {"input", std::string(to_string(c.input))},
          {"output", c.output_kind},
          {"scopes", c.subtask_scopes},
          {"binding", (c.binding.kind == Binding::Kind::Live ? "live:" : "fixture:") + c.binding.id}};
}

inline ToolCard tool_card_from_json(const nlohmann::json& j) {
  ToolCard c;
  c.name = j.at("name").get<std::string>();
  c.description = j.value("description", std::string());
  c.input = argument_kind_from_string(j.value("input", std::string("query-text")));
  c.output_kind = j.value("output", std::string("text-observation"));
  c.subtask_scopes = j.value("scopes", std::set<std::string>{});
  const auto b = j.value("binding", std::string("fixture:default"));
  const auto colon = b.find(':');
  const auto kind = b.substr(0, colon);
  const auto id = colon == std::string::npos ? std::string("default") : b.substr(colon + 1);
  if (kind == "live") c.binding = Binding::live(id);
  else if (kind == "fixture") c.binding = Binding::fixture(id);
  else throw ConfigError("tool binding must be live:<id> or fixture:<id>, got '" + b + "'");
  return c;
}

}  // namespace veritree
