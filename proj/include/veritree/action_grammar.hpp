#pragma once

// The `Verb[argument]` action language, planner utterances, and the numeric
// tails of the evaluator and initializer completions.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "veritree/core.hpp"

namespace veritree {

inline constexpr std::string_view kCorrectnessMarker = "correctness score is";
inline constexpr std::string_view kReliabilityMarker = "reliability score is";

struct PlannerUtterance {
  std::string thought_text;
  std::string action_text;
};

namespace detail {

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto head = static_cast<unsigned char>(s.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

// Matches "<label>", "<label> 3", "<label>3" followed by ':' at line start.
inline std::optional<std::string_view> strip_label(std::string_view line, std::string_view label) {
  std::string_view s = line;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  if (s.size() < label.size()) return std::nullopt;
  for (std::size_t i = 0; i < label.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(label[i])))
      return std::nullopt;
  s.remove_prefix(label.size());
  while (!s.empty() && (s.front() == ' ' || std::isdigit(static_cast<unsigned char>(s.front()))))
    s.remove_prefix(1);
  if (s.empty() || s.front() != ':') return std::nullopt;
  s.remove_prefix(1);
  return s;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

}  // namespace detail

inline std::string render_action(const Action& action) {
  return action.name + "[" + action.argument + "]";
}

// The argument spans from the first '[' to the last ']' so nested brackets
// survive verbatim.
inline Action parse_action(std::string_view raw, const std::set<std::string, std::less<>>& allowed_verbs) {
  const auto text = detail::trim(raw);
  const auto open = text.find('[');
  const auto close = text.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw MalformedAction("action '" + text + "' lacks a Verb[argument] bracket pair");
  const auto verb = detail::trim(std::string_view(text).substr(0, open));
  if (!detail::is_identifier(verb))
    throw MalformedAction("action '" + text + "' has no verb identifier before '['");
  if (allowed_verbs.find(verb) == allowed_verbs.end())
    throw UnknownVerb("verb '" + verb + "' is not available here");
  return Action{verb, text.substr(open + 1, close - open - 1)};
}

// Splits a planner completion into its thought and action lines. Lines are
// recognised by "Thought N:" / "Action N:" labels; anything after the first
// "Observation" label is discarded.
inline PlannerUtterance parse_utterance(std::string_view completion) {
  PlannerUtterance out;
  std::vector<std::string> loose;
  bool have_thought = false;
  bool have_action = false;
  for (auto line : detail::split_lines(completion)) {
    if (detail::strip_label(line, "Observation")) break;
    if (auto rest = detail::strip_label(line, "Thought"); rest && !have_thought) {
      out.thought_text = detail::trim(*rest);
      have_thought = true;
    } else if (auto act = detail::strip_label(line, "Action"); act && !have_action) {
      out.action_text = detail::trim(*act);
      have_action = true;
    } else if (!detail::trim(line).empty()) {
      loose.push_back(detail::trim(line));
    }
  }
  if (!have_action && !loose.empty()) {
    out.action_text = loose.back();
    loose.pop_back();
  }
  if (!have_thought) {
    for (const auto& l : loose) {
      if (!out.thought_text.empty()) out.thought_text += ' ';
      out.thought_text += l;
    }
  }
  return out;
}

struct InitDistribution {
  std::vector<double> weights;
  bool fallback = false;
  bool clamped = false;
};

// Extracts the trailing bracketed list [p1,...,pk]. Values are clamped to
// [0,1]; anything unparsable yields the uniform vector with `fallback` set.
inline InitDistribution parse_init_distribution(std::string_view raw, std::size_t k) {
  InitDistribution out;
  if (k == 0) return out;
  auto uniform = [&] {
    InitDistribution u;
    u.weights.assign(k, 1.0 / static_cast<double>(k));
    u.fallback = true;
    return u;
  };
  const auto close = raw.rfind(']');
  if (close == std::string_view::npos) return uniform();
  const auto open = raw.rfind('[', close);
  if (open == std::string_view::npos) return uniform();
  auto body = raw.substr(open + 1, close - open - 1);
  std::vector<double> values;
  while (true) {
    const auto comma = body.find(',');
    const auto piece = detail::trim(body.substr(0, comma));
    double v = 0;
    const auto* first = piece.data();
    const auto* last = piece.data() + piece.size();
    if (!piece.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (piece.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v)) return uniform();
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  if (values.size() != k) return uniform();
  for (auto& v : values) {
    const double c = std::clamp(v, 0.0, 1.0);
    if (c != v) out.clamped = true;
    v = c;
  }
  out.weights = std::move(values);
  return out;
}

// Returns the integer following the final occurrence of `marker`.
inline int parse_score(std::string_view raw, std::string_view marker) {
  const auto at = raw.rfind(marker);
  if (at == std::string_view::npos)
    throw MissingMarker("completion lacks '" + std::string(marker) + "'");
  auto rest = raw.substr(at + marker.size());
  while (!rest.empty() && (std::isspace(static_cast<unsigned char>(rest.front())) ||
                           rest.front() == ':' || rest.front() == '{' || rest.front() == '*'))
    rest.remove_prefix(1);
  int value = 0;
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
  if (ec != std::errc{} || ptr == rest.data())
    throw NonIntegerScore("no integer after '" + std::string(marker) + "'");
  const std::string_view tail(ptr, static_cast<std::size_t>(rest.data() + rest.size() - ptr));
  if (tail.size() >= 2 && tail[0] == '.' && std::isdigit(static_cast<unsigned char>(tail[1])))
    throw NonIntegerScore("score after '" + std::string(marker) + "' is not an integer");
  return value;
}

}  // namespace veritree
