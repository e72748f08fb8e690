#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "veritree/errors.hpp"

namespace veritree {

namespace detail {

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace detail

enum class Binary { Real, Fake };

inline std::string_view to_string(Binary b) { return b == Binary::Real ? "Real" : "Fake"; }

inline Binary binary_from_string(std::string_view s) {
  const auto v = detail::lower(detail::trim(s));
  if (v == "real" || v == "true" || v == "original") return Binary::Real;
  if (v == "fake" || v == "false") return Binary::Fake;
  throw UnknownLabel("unknown binary label '" + std::string(s) + "'");
}

// Strong type for a multiclass label key such as "TVD" or "CCD".
struct ForgeryClass {
  std::string key;
  auto operator<=>(const ForgeryClass&) const = default;
};

struct LabelInfo {
  ForgeryClass cls;
  std::string benchmark_name;  // canonical string used by the benchmark files
  bool real = false;
};

// The benchmark-configurable multiclass label set. Exactly one label is Real.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::string name, std::vector<LabelInfo> labels)
      : name_(std::move(name)), labels_(std::move(labels)) {
    std::size_t reals = 0;
    std::set<std::string> keys;
    for (const auto& l : labels_) {
      if (l.cls.key.empty()) throw ConfigError("label with empty key in set '" + name_ + "'");
      if (!keys.insert(l.cls.key).second)
        throw ConfigError("duplicate label key '" + l.cls.key + "'");
      if (l.real) ++reals;
    }
    if (reals != 1) throw ConfigError("label set '" + name_ + "' must designate exactly one Real label");
  }

  static LabelSet mmfakebench() {
    return LabelSet("mmfakebench", {{{"Real"}, "Real", true},
                                    {{"TVD"}, "Textual Veracity Distortion", false},
                                    {{"VVD"}, "Visual Veracity Distortion", false},
                                    {{"CCD"}, "Mismatch", false}});
  }

  static LabelSet amg() {
    return LabelSet("amg", {{{"Real"}, "Real", true},
                            {{"IF"}, "Image Fabrication", false},
                            {{"NEI"}, "Non-evidential Image", false},
                            {{"EntI"}, "Entity Inconsistency", false},
                            {{"EvtI"}, "Event Inconsistency", false},
                            {{"TI"}, "Time Inconsistency", false}});
  }

  const std::string& name() const { return name_; }
  const std::vector<LabelInfo>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }

  const LabelInfo& real() const {
    for (const auto& l : labels_)
      if (l.real) return l;
    throw ConfigError("label set has no Real label");
  }

  // Accepts either the short key or the benchmark name, case-insensitively.
  const LabelInfo* find(std::string_view key_or_name) const {
    const auto needle = detail::lower(detail::trim(key_or_name));
    for (const auto& l : labels_)
      if (detail::lower(l.cls.key) == needle || detail::lower(l.benchmark_name) == needle) return &l;
    return nullptr;
  }

  const LabelInfo& at(std::string_view key_or_name) const {
    if (const auto* l = find(key_or_name)) return *l;
    throw UnknownLabel("label '" + std::string(key_or_name) + "' not in set '" + name_ + "'");
  }

  std::size_t index_of(const ForgeryClass& cls) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i].cls == cls) return i;
    throw UnknownLabel("label '" + cls.key + "' not in set '" + name_ + "'");
  }

 private:
  std::string name_;
  std::vector<LabelInfo> labels_;
};

enum class SourceVerdict { Authentic, Forged };

// One potential forgery source. The answer vocabulary has exactly one
// authentic token and one forged token.
struct SubtaskId {
  std::string key;
  std::string display_name;
  ForgeryClass forgery_class;
  std::string authentic_token;
  std::string forged_token;
  std::string task_description;
  std::string category_name;  // forgery type named in the initializer prompt
  std::string prior_hint;     // one-line cue shown to the initializer

  std::vector<std::string> answer_vocabulary() const { return {authentic_token, forged_token}; }

  std::optional<SourceVerdict> classify(std::string_view answer) const {
    const auto a = detail::trim(answer);
    if (a == authentic_token) return SourceVerdict::Authentic;
    if (a == forged_token) return SourceVerdict::Forged;
    return std::nullopt;
  }
};

inline SubtaskId text_subtask() {
  return {"text", "Textual Veracity Detection", {"TVD"}, "TEXT SUPPORT", "TEXT REFUTE",
          "Solve a textual veracity detecting task with interleaving Thought, Action, and "
          "Observation steps. You need to verify the knowledge-based information therein, such as "
          "public figures, political events, and scientific common sense.\n"
          "If there is any credible objective evidence refuting the news caption, please answer in "
          "the form: Finish[TEXT REFUTE]. If no such evidence is found, please answer in the form: "
          "Finish[TEXT SUPPORT].",
          "Textual Veracity Distortion",
          "If the news text contains rich information, the news is more likely to be text veracity "
          "distortion."};
}

inline SubtaskId image_subtask() {
  return {"image", "Image Veracity Detection", {"VVD"}, "IMAGE SUPPORT", "IMAGE REFUTE",
          "Solve an image veracity detecting task (determine whether the content in the news image "
          "contains counterfactual scenarios, e.g., violates physical laws) with interleaving "
          "Thought, Action, and Observation steps.\n"
          "If there is any credible objective fact refuting the news image, please answer in the "
          "form: Finish[IMAGE REFUTE]. If no such fact is found, please answer in the form: "
          "Finish[IMAGE SUPPORT].",
          "Visual Veracity Distortion",
          "If the content in the news image contains counterfactual scenarios (e.g. violates the "
          "physical laws), the news is more likely to be visual veracity distortion."};
}

inline SubtaskId match_subtask() {
  return {"match", "Cross-modal Matching Detection", {"CCD"}, "MATCH", "MISMATCH",
          "Solve a cross-modal matching detection task (determine whether the content in the news "
          "image supports the text or not) with interleaving Thought, Action, and Observation "
          "steps. Please make a direct judgment based on the image content and the text content.\n"
          "If the news caption matches the content of the news image, please answer in the form: "
          "Finish[MATCH]. If no match is found, please answer in the form: Finish[MISMATCH].",
          "Cross-modal Consistency Distortion",
          "If the content in the news image is irrelevant to the image or does not support the "
          "text, the news is more likely to be cross-modal consistency distortion."};
}

inline std::vector<SubtaskId> mmfakebench_subtasks() {
  return {text_subtask(), image_subtask(), match_subtask()};
}

inline std::vector<SubtaskId> amg_subtasks() {
  auto make = [](std::string key, std::string name, std::string cls, std::string stem,
                 std::string what, std::string category) {
    return SubtaskId{key, name, {cls}, stem + " SUPPORT", stem + " REFUTE",
                     "Solve a " + detail::lower(name) + " task (" + what +
                         ") with interleaving Thought, Action, and Observation steps.\n"
                         "If there is credible evidence of this forgery, please answer in the form: "
                         "Finish[" + stem + " REFUTE]. Otherwise answer in the form: Finish[" +
                         stem + " SUPPORT].",
                     category,
                     "Consider this type if the news suggests that one should " + what + "."};
  };
  return {make("fabrication", "Image Fabrication Detection", "IF", "FABRICATION",
               "determine whether the news image was digitally manipulated or synthesized",
               "Image Fabrication"),
          make("evidence", "Non-evidential Image Detection", "NEI", "EVIDENCE",
               "determine whether the news image actually evidences the claim", "Non-evidential Image"),
          make("entity", "Entity Consistency Detection", "EntI", "ENTITY",
               "determine whether people, places, and organizations agree between image and text",
               "Entity Inconsistency"),
          make("event", "Event Consistency Detection", "EvtI", "EVENT",
               "determine whether the depicted event is the one the text describes",
               "Event Inconsistency"),
          make("time", "Time Consistency Detection", "TI", "TIME",
               "determine whether the image predates or postdates the reported event",
               "Time Inconsistency")};
}

// Every non-Real label maps to exactly one subtask and every subtask's class
// is a non-Real label of the set.
inline void validate_subtasks(const std::vector<SubtaskId>& subtasks, const LabelSet& labels) {
  if (subtasks.empty()) throw ConfigError("at least one subtask is required");
  std::set<std::string> keys;
  for (const auto& s : subtasks) {
    if (s.key.empty()) throw ConfigError("subtask with empty key");
    if (!keys.insert(s.key).second) throw ConfigError("duplicate subtask key '" + s.key + "'");
    if (s.authentic_token.empty() || s.forged_token.empty() || s.authentic_token == s.forged_token)
      throw ConfigError("subtask '" + s.key + "' needs distinct authentic and forged tokens");
    const auto* l = labels.find(s.forgery_class.key);
    if (l == nullptr || l->real)
      throw ConfigError("subtask '" + s.key + "' maps to unknown or Real label '" +
                        s.forgery_class.key + "'");
  }
  for (const auto& l : labels.labels()) {
    if (l.real) continue;
    const auto n = std::count_if(subtasks.begin(), subtasks.end(),
                                 [&](const SubtaskId& s) { return s.forgery_class == l.cls; });
    if (n != 1)
      throw ConfigError("label '" + l.cls.key + "' must map to exactly one subtask (found " +
                        std::to_string(n) + ")");
  }
}

inline constexpr std::string_view kFinishVerb = "Finish";

struct Action {
  std::string name;
  std::string argument;

  bool is_finish() const { return name == kFinishVerb; }
  bool operator==(const Action&) const = default;
};

struct TrajectoryStep {
  std::size_t index = 0;
  std::string thought;
  Action action;
  std::string observation;
};

struct NewsItem {
  std::string id;
  std::string text;
  std::optional<std::filesystem::path> image;
  std::optional<Binary> gold_binary;
  std::optional<ForgeryClass> gold_multiclass;
};

inline void validate(const NewsItem& item) {
  if (item.id.empty()) throw ConfigError("news item without id");
  if (item.text.empty()) throw ConfigError("news item '" + item.id + "' has empty text");
  if (item.image) {
    std::ifstream probe(*item.image, std::ios::binary);
    if (!probe) throw ConfigError("image for item '" + item.id + "' not readable: " + item.image->string());
  }
}

enum class Continuation { First, BestScore };

struct EngineConfig {
  int n_actions = 2;
  int depth_limit = 6;
  int simulations = 6;
  double exploration = 2.0;
  double alpha = 0.5;
  double tau_early = 0.8;
  double tau_prune = 0.8;
  double tau_memory = 0.5;
  std::uint64_t seed = 0;
  int memory_capacity = 3;
  std::size_t observation_budget = 2000;
  Continuation continuation = Continuation::BestScore;
  double temperature = 0.7;

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    if (n_actions < 1) throw ConfigError("n_actions must be positive");
    if (depth_limit < 1) throw ConfigError("depth_limit must be positive");
    if (simulations < 1) throw ConfigError("simulations must be positive");
    if (!(exploration >= 0.0)) throw ConfigError("exploration must be non-negative");
    if (memory_capacity < 0) throw ConfigError("memory_capacity must be non-negative");
    unit(alpha, "alpha");
    unit(tau_early, "tau_early");
    unit(tau_prune, "tau_prune");
    unit(tau_memory, "tau_memory");
  }
};

inline std::string_view to_string(Continuation c) {
  return c == Continuation::First ? "first" : "best";
}

// Applies one `key = value` setting; keys mirror the EngineConfig field names.
inline void apply_setting(EngineConfig& cfg, std::string_view key, std::string_view value) {
  const auto k = detail::trim(key);
  const auto v = detail::trim(value);
  auto as_int = [&]() -> long long {
    std::size_t pos = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError("'" + k + "' expects an integer, got '" + v + "'");
    return out;
  };
  auto as_real = [&]() {
    std::size_t pos = 0;
    double out = 0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError("'" + k + "' expects a number, got '" + v + "'");
    return out;
  };
  if (k == "n_actions") cfg.n_actions = static_cast<int>(as_int());
  else if (k == "depth_limit") cfg.depth_limit = static_cast<int>(as_int());
  else if (k == "simulations") cfg.simulations = static_cast<int>(as_int());
  else if (k == "exploration") cfg.exploration = as_real();
  else if (k == "alpha") cfg.alpha = as_real();
  else if (k == "tau_early") cfg.tau_early = as_real();
  else if (k == "tau_prune") cfg.tau_prune = as_real();
  else if (k == "tau_memory") cfg.tau_memory = as_real();
  else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(as_int());
  else if (k == "memory_capacity") cfg.memory_capacity = static_cast<int>(as_int());
  else if (k == "observation_budget") cfg.observation_budget = static_cast<std::size_t>(as_int());
  else if (k == "temperature") cfg.temperature = as_real();
  else if (k == "continuation") {
    if (v == "first") cfg.continuation = Continuation::First;
    else if (v == "best") cfg.continuation = Continuation::BestScore;
    else throw ConfigError("continuation must be 'first' or 'best'");
  } else {
    throw ConfigError("unknown engine setting '" + k + "'");
  }
}

// Reads `key = value` lines; `#` starts a comment.
inline EngineConfig parse_engine_config(std::istream& in, EngineConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline EngineConfig load_engine_config(const std::filesystem::path& path, EngineConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_engine_config(in, cfg);
}

// Trajectory score S^T and confidence score S^C, both on [0,1].
class ScorePair {
 public:
  ScorePair(double trajectory, double confidence) : trajectory_(trajectory), confidence_(confidence) {
    if (!(trajectory >= 0.0 && trajectory <= 1.0) || !(confidence >= 0.0 && confidence <= 1.0))
      throw ScoreParseError("scores must lie in [0,1]");
  }
  double trajectory() const { return trajectory_; }
  double confidence() const { return confidence_; }

 private:
  double trajectory_;
  double confidence_;
};

// V = alpha * S^T + (1 - alpha) * S^C.
inline double combine_value(const ScorePair& scores, double alpha) {
  const double v = alpha * scores.trajectory() + (1.0 - alpha) * scores.confidence();
  return std::clamp(v, 0.0, 1.0);
}

inline constexpr int kMinRawScore = 1;
inline constexpr int kMaxRawScore = 10;

inline double normalize_score(int raw) {
  if (raw < kMinRawScore || raw > kMaxRawScore)
    throw ScoreParseError("score " + std::to_string(raw) + " outside 1..10");
  return static_cast<double>(raw) / 10.0;
}

}  // namespace veritree
