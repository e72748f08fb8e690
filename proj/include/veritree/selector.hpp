#pragma once

// Single-pass greedy tool-subset selection against a development corpus.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritree/toolkit.hpp"

namespace veritree {

struct CandidateStep {
  std::string tool;
  double baseline_accuracy = 0.0;  // accuracy of the accepted set before this candidate
  double accuracy = 0.0;           // accuracy with the candidate added
  double delta = 0.0;
  bool accepted = false;
};

struct SelectionReport {
  std::vector<std::string> base;
  std::vector<std::string> order;
  double base_accuracy = 0.0;
  std::vector<CandidateStep> steps;
  std::vector<std::string> accepted;  // base followed by accepted candidates
  std::vector<double> accuracy_trace;  // base accuracy, then after each acceptance
  bool complete = true;
  std::string failure;

  double final_accuracy() const { return accuracy_trace.empty() ? 0.0 : accuracy_trace.back(); }
};

// Corpus accuracy of a tool set. Must be deterministic for a fixed set.
using AccuracyFn = std::function<double(const std::vector<ToolCard>&)>;

inline constexpr std::string_view kSelectionNote =
    "baseline recomputed after every acceptance (incremental greedy); a fixed initial baseline "
    "would compare every candidate against the base set alone";

// Walks candidates in order, accepting one iff it raises accuracy strictly
// above the current accepted set. Evaluator exceptions stop the pass and
// leave a partial report.
inline SelectionReport select_tools(const std::vector<ToolCard>& candidates, const std::vector<ToolCard>& base,
                                    const AccuracyFn& accuracy) {
  SelectionReport report;
  std::vector<ToolCard> current = base;
  std::set<std::string> names;
  for (const auto& c : base) {
    report.base.push_back(c.name);
    report.accepted.push_back(c.name);
    names.insert(c.name);
  }
  for (const auto& c : candidates) report.order.push_back(c.name);

  try {
    report.base_accuracy = accuracy(current);
  } catch (const std::exception& e) {
    report.complete = false;
    report.failure = std::string("baseline evaluation failed: ") + e.what();
    return report;
  }
  report.accuracy_trace.push_back(report.base_accuracy);
  double baseline = report.base_accuracy;

  for (const auto& c : candidates) {
    if (names.count(c.name) != 0) continue;
    auto trial = current;
    trial.push_back(c);
    CandidateStep step;
    step.tool = c.name;
    step.baseline_accuracy = baseline;
    try {
      step.accuracy = accuracy(trial);
    } catch (const std::exception& e) {
      report.complete = false;
      report.failure = "evaluation with " + c.name + " failed: " + e.what();
      return report;
    }
    step.delta = step.accuracy - baseline;
    if (step.delta > 0.0) {
      step.accepted = true;
      current = std::move(trial);
      names.insert(c.name);
      report.accepted.push_back(c.name);
      baseline = step.accuracy;
      report.accuracy_trace.push_back(baseline);
    }
    report.steps.push_back(step);
  }
  return report;
}

// Tool effects for a synthetic corpus: an item is correct iff its base
// correctness XOR an odd number of selected tools flip it.
//   {"items": 100, "base_correct": [[0, 50]], "tools": {"A": {"flips": [[50, 55]]}, "F": {"fail": true}}}
// Index lists accept single integers or half-open [lo, hi) ranges.
class SyntheticEffects {
 public:
  static SyntheticEffects load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read effects file " + path.string());
    SyntheticEffects e;
    try {
      const auto j = nlohmann::json::parse(in);
      e.items_ = j.at("items").get<std::size_t>();
      e.base_ = indices(j.at("base_correct"), e.items_);
      for (const auto& [name, t] : j.at("tools").items()) {
        e.order_.push_back(name);
        e.fail_[name] = t.value("fail", false);
        e.flips_[name] = indices(t.value("flips", nlohmann::json::array()), e.items_);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(path.string() + ": " + ex.what());
    }
    return e;
  }

  const std::vector<std::string>& tools() const { return order_; }

  double accuracy(const std::vector<ToolCard>& cards) const {
    std::vector<bool> correct = base_;
    for (const auto& c : cards) {
      auto it = flips_.find(c.name);
      if (it == flips_.end()) continue;
      if (fail_.at(c.name)) throw EvaluatorFailure("evaluation with tool " + c.name + " failed");
      for (std::size_t i = 0; i < items_; ++i)
        if (it->second[i]) correct[i] = !correct[i];
    }
    std::size_t hits = 0;
    for (bool b : correct) hits += b ? 1 : 0;
    return items_ == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(items_);
  }

 private:
  static std::vector<bool> indices(const nlohmann::json& list, std::size_t n) {
    std::vector<bool> out(n, false);
    for (const auto& v : list) {
      std::size_t lo = 0;
      std::size_t hi = 0;
      if (v.is_array()) {
        lo = v.at(0).get<std::size_t>();
        hi = v.at(1).get<std::size_t>();
      } else {
        lo = v.get<std::size_t>();
        hi = lo + 1;
      }
      if (hi > n || lo > hi) throw ConfigError("effects index range out of bounds");
      for (auto i = lo; i < hi; ++i) out[i] = true;
    }
    return out;
  }

  std::size_t items_ = 0;
  std::vector<bool> base_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<bool>> flips_;
  std::map<std::string, bool> fail_;
};

inline nlohmann::json to_json(const SelectionReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"tool", s.tool},
                     {"baseline_accuracy", s.baseline_accuracy},
                     {"accuracy", s.accuracy},
                     {"delta", s.delta},
                     {"accepted", s.accepted}});
  nlohmann::json j = {{"note", std::string(kSelectionNote)},
                      {"base", r.base},
                      {"order", r.order},
                      {"base_accuracy", r.base_accuracy},
                      {"steps", steps},
                      {"accepted", r.accepted},
                      {"accuracy_trace", r.accuracy_trace},
                      {"complete", r.complete}};
  if (!r.complete) j["failure"] = r.failure;
  return j;
}

inline std::string format_table(const SelectionReport& r) {
  std::ostringstream os;
  os << "# " << kSelectionNote << "\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "base {";
  for (std::size_t i = 0; i < r.base.size(); ++i) os << (i ? ", " : "") << r.base[i];
  os << "} accuracy " << r.base_accuracy << "\n";
  os << "tool            accuracy   delta      decision\n";
  for (const auto& s : r.steps) {
    std::string name = s.tool;
    name.resize(std::max<std::size_t>(name.size(), 15), ' ');
    os << name << " " << s.accuracy << "     " << (s.delta >= 0 ? "+" : "") << s.delta << "    "
       << (s.accepted ? "accept" : "reject") << "\n";
  }
  os << "selected {";
  for (std::size_t i = 0; i < r.accepted.size(); ++i) os << (i ? ", " : "") << r.accepted[i];
  os << "} accuracy " << r.final_accuracy() << "\n";
  if (!r.complete) os << "INCOMPLETE: " << r.failure << "\n";
  return os.str();
}

}  // namespace veritree
