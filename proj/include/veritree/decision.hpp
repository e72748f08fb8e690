#pragma once

// Early stop, probabilistic fusion of per-source verdicts, and the mapping of
// fused answers onto benchmark label strings.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "veritree/core.hpp"

namespace veritree {

inline constexpr std::string_view kRealAnswerToken = "ORIGINAL";

struct SubtaskOutcome {
  SubtaskId subtask;
  std::size_t order = 0;  // position of the subtask in the configured list
  SourceVerdict answer = SourceVerdict::Authentic;
  double trajectory_score = 0.0;
  double confidence = 0.0;
  std::vector<TrajectoryStep> trajectory;
  std::size_t iteration = 0;
  bool depth_exhausted = false;
};

enum class DecisionPath { EarlyStop, Fusion };

inline std::string_view to_string(DecisionPath p) {
  return p == DecisionPath::EarlyStop ? "early_stop" : "fusion";
}

struct Verdict {
  Binary binary = Binary::Real;
  ForgeryClass multiclass;
  double p_real = 1.0;
  std::vector<std::pair<std::string, double>> p_fake;  // subtask key -> probability, configured order
  DecisionPath path = DecisionPath::Fusion;
  std::string final_answer;  // e.g. "MISMATCH" or "ORIGINAL"
  bool unreliable = false;   // no verified outcome backed this verdict
};

inline double p_fake(const SubtaskOutcome& o) {
  return o.answer == SourceVerdict::Forged ? o.confidence : 1.0 - o.confidence;
}

// Fires only on a forged verdict whose confidence reaches tau_early.
inline std::optional<Verdict> early_stop(const SubtaskOutcome& o, double tau_early) {
  if (o.depth_exhausted || o.answer != SourceVerdict::Forged || o.confidence < tau_early) return std::nullopt;
  Verdict v;
  v.binary = Binary::Fake;
  v.multiclass = o.subtask.forgery_class;
  v.p_real = 1.0 - o.confidence;
  v.p_fake = {{o.subtask.key, o.confidence}};
  v.path = DecisionPath::EarlyStop;
  v.final_answer = o.subtask.forged_token;
  return v;
}

// Probabilities closer than this count as tied, so rounding in the geometric
// mean cannot flip an exact tie away from Real.
inline constexpr double kTieTolerance = 1e-12;

// p(real) is the geometric mean of the complements of p(fake^i); the answer is
// the argmax over p(real) and every p(fake^i). Ties go to Real, then to the
// earlier configured subtask.
inline Verdict fuse(std::vector<SubtaskOutcome> outcomes, const LabelSet& labels) {
  outcomes.erase(std::remove_if(outcomes.begin(), outcomes.end(),
                                [](const SubtaskOutcome& o) { return o.depth_exhausted; }),
                 outcomes.end());
  if (outcomes.empty()) throw EmptyOutcomeSet();
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const SubtaskOutcome& a, const SubtaskOutcome& b) { return a.order < b.order; });

  const double inv_n = 1.0 / static_cast<double>(outcomes.size());
  Verdict v;
  v.path = DecisionPath::Fusion;
  v.p_real = 1.0;
  for (const auto& o : outcomes) {
    const double pf = p_fake(o);
    v.p_fake.emplace_back(o.subtask.key, pf);
    v.p_real *= std::pow(1.0 - pf, inv_n);
  }
  v.p_real = std::clamp(v.p_real, 0.0, 1.0);

  double best = v.p_real;
  const SubtaskOutcome* winner = nullptr;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (v.p_fake[i].second > best + kTieTolerance) {
      best = v.p_fake[i].second;
      winner = &outcomes[i];
    }
  }
  if (winner == nullptr) {
    v.binary = Binary::Real;
    v.multiclass = labels.real().cls;
    v.final_answer = std::string(kRealAnswerToken);
  } else {
    v.binary = Binary::Fake;
    v.multiclass = winner->subtask.forgery_class;
    v.final_answer = winner->subtask.forged_token;
  }
  return v;
}

// Verdict for an item no subtask could verify: Real, flagged unreliable.
inline Verdict unverifiable_verdict(const LabelSet& labels) {
  Verdict v;
  v.binary = Binary::Real;
  v.multiclass = labels.real().cls;
  v.p_real = 0.5;
  v.path = DecisionPath::Fusion;
  v.final_answer = std::string(kRealAnswerToken);
  v.unreliable = true;
  return v;
}

inline std::string to_benchmark_label(const Verdict& v, const LabelSet& labels) {
  const auto* info = labels.find(v.multiclass.key);
  if (info == nullptr || info->cls != v.multiclass)
    throw UnknownLabel("verdict class '" + v.multiclass.key + "' not in label set '" + labels.name() + "'");
  return info->benchmark_name;
}

inline nlohmann::json to_json(const Verdict& v, const LabelSet& labels) {
  nlohmann::json pf = nlohmann::json::object();
  for (const auto& [k, p] : v.p_fake) pf[k] = p;
  return {{"binary", std::string(to_string(v.binary))},
          {"multiclass", v.multiclass.key},
          {"label", to_benchmark_label(v, labels)},
          {"p_real", v.p_real},
          {"p_fake", pf},
          {"decision_path", std::string(to_string(v.path))},
          {"final_answer", v.final_answer},
          {"unreliable", v.unreliable}};
}

}  // namespace veritree
