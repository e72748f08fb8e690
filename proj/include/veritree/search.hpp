#pragma once

// Multi-source verification tree search: subtask nodes under the root,
// selection by the biased UCT rule, rollout through planner and tools,
// dual-score evaluation, running-mean backpropagation, pruning of confirmed
// sources, and a per-subtask memory of failed trajectories.

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "veritree/action_grammar.hpp"
#include "veritree/core.hpp"
#include "veritree/decision.hpp"
#include "veritree/reasoner.hpp"
#include "veritree/toolkit.hpp"

namespace veritree {

using NodeId = std::size_t;

enum class NodeKind { Root, Subtask, Step };

struct SearchNode {
  NodeId id = 0;
  NodeKind kind = NodeKind::Root;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::size_t subtask_index = 0;  // meaningful for Subtask and Step nodes
  double value = 0.0;
  std::uint64_t visits = 0;
  bool pruned = false;
  bool completed = false;
  std::optional<TrajectoryStep> step;  // the step a Step node appends to its parent's prefix
};

class SearchTree {
 public:
  SearchTree() { nodes_.push_back(SearchNode{}); }

  // Root plus one Subtask child per prior; each child's V starts at its prior.
  static SearchTree initialize(const std::vector<double>& priors) {
    SearchTree t;
    for (std::size_t i = 0; i < priors.size(); ++i) {
      auto id = t.add_child(t.root(), NodeKind::Subtask);
      t.nodes_[id].subtask_index = i;
      t.nodes_[id].value = priors[i];
    }
    return t;
  }

  NodeId root() const { return 0; }
  std::size_t size() const { return nodes_.size(); }

  NodeId add_child(NodeId parent, NodeKind kind) {
    SearchNode n;
    n.id = nodes_.size();
    n.kind = kind;
    n.parent = parent;
    n.subtask_index = nodes_.at(parent).subtask_index;
    nodes_.push_back(std::move(n));
    nodes_[parent].children.push_back(nodes_.back().id);
    return nodes_.back().id;
  }

  NodeId add_step(NodeId parent, TrajectoryStep step) {
    auto id = add_child(parent, NodeKind::Step);
    nodes_[id].step = std::move(step);
    return id;
  }

  const SearchNode& node(NodeId id) const { return nodes_.at(id); }
  SearchNode& node(NodeId id) { return nodes_.at(id); }

  const std::vector<NodeId>& subtask_nodes() const { return nodes_.front().children; }

  NodeId subtask_node(std::size_t index) const { return subtask_nodes().at(index); }

  // Leaf first, root last.
  std::vector<NodeId> path_to_root(NodeId leaf) const {
    std::vector<NodeId> path;
    std::optional<NodeId> cur = leaf;
    while (cur) {
      path.push_back(*cur);
      cur = nodes_.at(*cur).parent;
    }
    return path;
  }

  std::vector<TrajectoryStep> trajectory_prefix(NodeId id) const {
    std::vector<TrajectoryStep> steps;
    for (auto n : path_to_root(id))
      if (nodes_[n].step) steps.push_back(*nodes_[n].step);
    std::reverse(steps.begin(), steps.end());
    return steps;
  }

 private:
  std::vector<SearchNode> nodes_;
};

// UCT with the +1 bias on both visit counts, so an unvisited child scores
// V + C*sqrt(ln(N_parent + 1)) instead of an infinite bonus.
inline double uct(double value, std::uint64_t child_visits, std::uint64_t parent_visits, double c) {
  const double n_child = static_cast<double>(child_visits) + 1.0;
  const double n_parent = static_cast<double>(parent_visits) + 1.0;
  return value / n_child + c * std::sqrt(std::log(n_parent) / n_child);
}

inline double uct(const SearchNode& child, const SearchNode& parent, double c) {
  return uct(child.value, child.visits, parent.visits, c);
}

inline bool selectable(const SearchNode& n) { return !n.pruned && !n.completed; }

// Highest-UCT selectable subtask node; ties keep the earlier subtask.
inline NodeId select(const SearchTree& tree, double c) {
  const auto& root = tree.node(tree.root());
  std::optional<NodeId> best;
  double best_score = 0.0;
  for (auto id : tree.subtask_nodes()) {
    const auto& child = tree.node(id);
    if (!selectable(child)) continue;
    const double s = uct(child, root, c);
    if (!best || s > best_score) {
      best = id;
      best_score = s;
    }
  }
  if (!best) throw AllSubtasksResolved();
  return *best;
}

struct BackpropDelta {
  NodeId node = 0;
  double value_before = 0.0;
  std::uint64_t visits_before = 0;
  double value_after = 0.0;
  std::uint64_t visits_after = 0;
};

// Running-mean update of the leaf and every ancestor up to the root.
inline std::vector<BackpropDelta> backpropagate(SearchTree& tree, NodeId leaf, double reward) {
  std::vector<BackpropDelta> deltas;
  for (auto id : tree.path_to_root(leaf)) {
    auto& n = tree.node(id);
    BackpropDelta d{id, n.value, n.visits, 0.0, 0};
    n.value = (n.value * static_cast<double>(n.visits) + reward) / static_cast<double>(n.visits + 1);
    n.visits += 1;
    d.value_after = n.value;
    d.visits_after = n.visits;
    deltas.push_back(d);
  }
  return deltas;
}

// Retires a subtask confirmed authentic with confidence >= tau_prune.
inline bool maybe_prune(SearchTree& tree, NodeId subtask_node, const SubtaskOutcome& outcome, double tau_prune) {
  if (outcome.depth_exhausted || outcome.answer != SourceVerdict::Authentic || outcome.confidence < tau_prune)
    return false;
  auto& n = tree.node(subtask_node);
  n.pruned = true;
  n.completed = true;
  return true;
}

// Bounded FIFO of failed-trajectory digests per subtask.
class FailureMemory {
 public:
  FailureMemory(std::size_t subtasks, std::size_t capacity) : per_subtask_(subtasks), capacity_(capacity) {}

  void remember(std::size_t subtask, std::string digest) {
    if (capacity_ == 0) return;
    auto& q = per_subtask_.at(subtask);
    q.push_back(std::move(digest));
    while (q.size() > capacity_) q.pop_front();
  }

  std::vector<std::string> recall(std::size_t subtask) const {
    const auto& q = per_subtask_.at(subtask);
    return {q.begin(), q.end()};
  }

 private:
  std::vector<std::deque<std::string>> per_subtask_;
  std::size_t capacity_;
};

// One-line summary of a failed trajectory for the planner prompt.
inline std::string digest_failure(const std::vector<TrajectoryStep>& steps, double reward) {
  std::string chain;
  for (const auto& s : steps) {
    if (!chain.empty()) chain += " -> ";
    chain += render_action(s.action);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", reward);
  return "actions " + chain + " earned reward " + buf + "; gather stronger evidence before finishing.";
}

struct StepRecord {
  TrajectoryStep step;
  std::vector<std::string> candidates;  // raw action text of every expanded candidate
  std::vector<double> candidate_scores;  // empty unless candidates were ranked
};

struct IterationRecord {
  std::size_t index = 0;
  std::string subtask;
  std::vector<std::pair<std::string, double>> uct_scores;
  std::vector<StepRecord> steps;
  double trajectory_score = 0.0;
  double confidence = 0.0;
  double reward = 0.0;
  std::optional<SourceVerdict> answer;  // empty when depth was exhausted
  std::vector<BackpropDelta> backprop;
  bool pruned = false;
  bool early_stop = false;
  bool remembered_failure = false;
};

inline constexpr std::string_view kEpisodeSchema = "veritree.episode/1";

struct EpisodeLog {
  std::string item_id;
  std::vector<std::string> subtasks;
  std::vector<double> priors;
  bool prior_fallback = false;
  bool prior_clamped = false;
  std::vector<IterationRecord> iterations;
  std::vector<UsageRecord> usage;
  std::vector<std::string> warnings;
  std::optional<Verdict> verdict;

  UsageTotals usage_totals() const {
    UsageTotals t;
    for (const auto& u : usage) t.add(u);
    return t;
  }
};

inline nlohmann::json to_json(const UsageTotals& totals) {
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [model, phases] : totals.by_model()) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [phase, c] : phases)
      m[std::string(to_string(phase))] = {{"input_tokens", c.input}, {"output_tokens", c.output}, {"calls", c.calls}};
    models[model] = m;
  }
  const auto t = totals.total();
  return {{"input_tokens", t.input}, {"output_tokens", t.output}, {"calls", t.calls}, {"models", models}};
}

inline std::string_view to_string(std::optional<SourceVerdict> v) {
  if (!v) return "unverified";
  return *v == SourceVerdict::Authentic ? "authentic" : "forged";
}

// Line-delimited records: a header, one record per iteration, and the verdict.
inline std::vector<nlohmann::json> to_records(const EpisodeLog& log, const LabelSet& labels) {
  std::vector<nlohmann::json> out;
  out.push_back({{"record", "episode"},
                 {"schema", std::string(kEpisodeSchema)},
                 {"item", log.item_id},
                 {"subtasks", log.subtasks},
                 {"priors", log.priors},
                 {"prior_fallback", log.prior_fallback},
                 {"prior_clamped", log.prior_clamped}});
  for (const auto& it : log.iterations) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : it.steps)
      steps.push_back({{"index", s.step.index},
                       {"thought", s.step.thought},
                       {"action", render_action(s.step.action)},
                       {"observation", s.step.observation},
                       {"candidates", s.candidates},
                       {"candidate_scores", s.candidate_scores}});
    nlohmann::json backprop = nlohmann::json::array();
    for (const auto& d : it.backprop)
      backprop.push_back({{"node", d.node},
                          {"value_before", d.value_before},
                          {"visits_before", d.visits_before},
                          {"value_after", d.value_after},
                          {"visits_after", d.visits_after}});
    nlohmann::json uct_scores = nlohmann::json::array();
    for (const auto& [k, v] : it.uct_scores) uct_scores.push_back({{"subtask", k}, {"uct", v}});
    out.push_back({{"record", "iteration"},
                   {"index", it.index},
                   {"subtask", it.subtask},
                   {"uct", uct_scores},
                   {"steps", steps},
                   {"trajectory_score", it.trajectory_score},
                   {"confidence", it.confidence},
                   {"reward", it.reward},
                   {"answer", std::string(to_string(it.answer))},
                   {"backprop", backprop},
                   {"pruned", it.pruned},
                   {"early_stop", it.early_stop},
                   {"remembered_failure", it.remembered_failure}});
  }
  nlohmann::json fin = {{"record", "verdict"},
                        {"item", log.item_id},
                        {"iterations", log.iterations.size()},
                        {"usage", to_json(log.usage_totals())},
                        {"warnings", log.warnings}};
  if (log.verdict) fin["verdict"] = to_json(*log.verdict, labels);
  out.push_back(std::move(fin));
  return out;
}

inline std::string to_jsonl(const EpisodeLog& log, const LabelSet& labels) {
  std::string out;
  for (const auto& r : to_records(log, labels)) out += r.dump() + "\n";
  return out;
}

struct EpisodeResult {
  Verdict verdict;
  EpisodeLog log;
  SearchTree tree;
};

struct SimulationResult {
  SubtaskOutcome outcome;
  NodeId leaf = 0;
  std::vector<StepRecord> steps;
};

// Runs episodes over a fixed configuration. The engine is shareable across
// threads; each episode owns its tree and reasoner facade.
class Engine {
 public:
  Engine(EngineConfig config, std::vector<SubtaskId> subtasks, LabelSet labels, const Registry& registry,
         Backend& backend)
      : config_(config), subtasks_(std::move(subtasks)), labels_(std::move(labels)), registry_(registry),
        backend_(backend) {
    config_.validate();
    validate_subtasks(subtasks_, labels_);
  }

  // When the backend cannot take image attachments, the planner and
  // evaluators see this caption of the item's image instead.
  void set_captioner(std::function<std::string(const NewsItem&)> fn) { captioner_ = std::move(fn); }

  const EngineConfig& config() const { return config_; }
  const std::vector<SubtaskId>& subtasks() const { return subtasks_; }
  const LabelSet& labels() const { return labels_; }
  const Registry& registry() const { return registry_; }

  EpisodeResult run_episode(const NewsItem& item) const {
    ReasonerOptions ropts;
    ropts.temperature = config_.temperature;
    ropts.seed = episode_seed(item);
    Reasoner reasoner(backend_, ropts);
    if (captioner_ && !backend_.supports_images()) reasoner.set_captioner(captioner_);

    EpisodeResult result;
    auto& log = result.log;
    log.item_id = item.id;
    for (const auto& s : subtasks_) log.subtasks.push_back(s.key);

    const auto priors = reasoner.init_priors(item, subtasks_);
    log.priors = priors.weights;
    log.prior_fallback = priors.fallback;
    log.prior_clamped = priors.clamped;
    result.tree = SearchTree::initialize(priors.weights);
    auto& tree = result.tree;

    FailureMemory memory(subtasks_.size(), static_cast<std::size_t>(config_.memory_capacity));
    std::vector<std::optional<SubtaskOutcome>> latest(subtasks_.size());
    std::optional<Verdict> verdict;

    for (int k = 0; k < config_.simulations && !verdict; ++k) {
      NodeId chosen = 0;
      IterationRecord rec;
      rec.index = static_cast<std::size_t>(k);
      for (auto id : tree.subtask_nodes()) {
        const auto& n = tree.node(id);
        if (selectable(n))
          rec.uct_scores.emplace_back(subtasks_[n.subtask_index].key,
                                      uct(n, tree.node(tree.root()), config_.exploration));
      }
      try {
        chosen = select(tree, config_.exploration);
      } catch (const AllSubtasksResolved&) {
        break;
      }
      const auto index = tree.node(chosen).subtask_index;
      rec.subtask = subtasks_[index].key;

      auto sim = simulate(tree, chosen, item, memory.recall(index), reasoner);
      sim.outcome.iteration = rec.index;
      const double reward = combine_value(ScorePair(sim.outcome.trajectory_score, sim.outcome.confidence),
                                          config_.alpha);
      rec.steps = std::move(sim.steps);
      rec.trajectory_score = sim.outcome.trajectory_score;
      rec.confidence = sim.outcome.confidence;
      rec.reward = reward;
      if (!sim.outcome.depth_exhausted) rec.answer = sim.outcome.answer;
      rec.backprop = backpropagate(tree, sim.leaf, reward);

      if (reward < config_.tau_memory) {
        memory.remember(index, digest_failure(sim.outcome.trajectory, reward));
        rec.remembered_failure = true;
      }
      if (!sim.outcome.depth_exhausted) {
        if (auto stop = early_stop(sim.outcome, config_.tau_early)) {
          verdict = std::move(stop);
          rec.early_stop = true;
        } else {
          rec.pruned = maybe_prune(tree, chosen, sim.outcome, config_.tau_prune);
        }
        latest[index] = std::move(sim.outcome);
      }
      log.iterations.push_back(std::move(rec));
    }

    if (!verdict) {
      std::vector<SubtaskOutcome> outcomes;
      for (auto& o : latest)
        if (o) outcomes.push_back(*o);
      try {
        verdict = fuse(std::move(outcomes), labels_);
      } catch (const EmptyOutcomeSet&) {
        reasoner_warning(log, "no subtask produced a verified outcome; reporting an unreliable Real verdict");
        verdict = unverifiable_verdict(labels_);
      }
    }
    result.verdict = *verdict;
    log.verdict = *verdict;
    log.usage = reasoner.usage();
    auto warnings = reasoner.warnings();
    warnings.insert(warnings.end(), log.warnings.begin(), log.warnings.end());
    log.warnings = std::move(warnings);
    return result;
  }

  // Rollout from a subtask node until Finish or the depth limit.
  SimulationResult simulate(SearchTree& tree, NodeId subtask_node, const NewsItem& item,
                            const std::vector<std::string>& memory, Reasoner& reasoner) const {
    const auto index = tree.node(subtask_node).subtask_index;
    const auto& subtask = subtasks_[index];
    const auto whitelist = registry_.whitelist(subtask.key);
    const auto docs = registry_.action_docs(subtask.key);

    SimulationResult sim;
    std::vector<TrajectoryStep> trajectory;
    std::vector<std::string> observations;
    NodeId cursor = subtask_node;

    for (int depth = 0; depth < config_.depth_limit; ++depth) {
      auto candidates = reasoner.plan(subtask, trajectory, memory, item, config_.n_actions, docs);
      StepRecord rec;
      std::vector<NodeId> expanded;
      for (const auto& c : candidates) {
        TrajectoryStep s;
        s.index = trajectory.size();
        s.thought = c.thought_text;
        s.action = preview_action(c.action_text, whitelist);
        rec.candidates.push_back(c.action_text);
        expanded.push_back(tree.add_step(cursor, std::move(s)));
      }

      std::size_t pick = 0;
      if (config_.continuation == Continuation::BestScore && candidates.size() > 1) {
        double best = -1.0;
        for (std::size_t i = 0; i < expanded.size(); ++i) {
          auto probe = trajectory;
          probe.push_back(*tree.node(expanded[i]).step);
          const double s = reasoner.score_trajectory(probe, item, subtask.key);
          tree.node(expanded[i]).value = s;
          rec.candidate_scores.push_back(s);
          if (s > best) {
            best = s;
            pick = i;
          }
        }
      }
      cursor = expanded[pick];
      TrajectoryStep step = *tree.node(cursor).step;
      const auto& utterance = candidates[pick];

      bool finished = false;
      try {
        const auto action = parse_action(utterance.action_text, whitelist);
        step.action = action;
        if (action.is_finish()) {
          if (subtask.classify(action.argument)) finished = true;
          else step.observation = invalid_note("answer '" + action.argument + "' is not allowed", subtask, whitelist);
        } else {
          step.observation = registry_.invoke(action.name, action.argument, item, subtask.key);
          observations.push_back(step.observation);
        }
      } catch (const MalformedAction& e) {
        step.observation = invalid_note(e.what(), subtask, whitelist);
      } catch (const UnknownVerb& e) {
        step.observation = invalid_note(e.what(), subtask, whitelist);
      }
      tree.node(cursor).step = step;
      trajectory.push_back(step);
      rec.step = step;
      sim.steps.push_back(std::move(rec));

      if (finished) {
        auto& o = sim.outcome;
        o.subtask = subtask;
        o.order = index;
        o.answer = *subtask.classify(step.action.argument);
        o.trajectory_score = reasoner.score_trajectory(trajectory, item, subtask.key);
        o.confidence = reasoner.score_confidence(observations, item, step.action, subtask.key);
        o.trajectory = trajectory;
        sim.leaf = cursor;
        return sim;
      }
    }

    // Depth exhausted: no answer, no confidence; the path is still scored.
    auto& o = sim.outcome;
    o.subtask = subtask;
    o.order = index;
    o.answer = SourceVerdict::Authentic;
    o.depth_exhausted = true;
    o.trajectory_score = trajectory.empty() ? 0.0 : reasoner.score_trajectory(trajectory, item, subtask.key);
    o.confidence = 0.0;
    o.trajectory = trajectory;
    sim.leaf = cursor;
    return sim;
  }

 private:
  static Action preview_action(const std::string& text, const std::set<std::string, std::less<>>& whitelist) {
    try {
      return parse_action(text, whitelist);
    } catch (const MalformedAction&) {
    } catch (const UnknownVerb&) {
    }
    return Action{"Invalid", text};
  }

  static std::string invalid_note(const std::string& why, const SubtaskId& subtask,
                                  const std::set<std::string, std::less<>>& whitelist) {
    std::string verbs;
    for (const auto& v : whitelist) {
      if (v == kFinishVerb) continue;
      verbs += v + "[...], ";
    }
    return "Invalid action: " + why + ". Use one of " + verbs + "Finish[" + subtask.authentic_token + "] or Finish[" +
           subtask.forged_token + "].";
  }

  static void reasoner_warning(EpisodeLog& log, std::string msg) { log.warnings.push_back(std::move(msg)); }

  std::uint64_t episode_seed(const NewsItem& item) const {
    const auto h = sha256_hex(item.id).substr(0, 16);
    return config_.seed ^ std::stoull(h, nullptr, 16);
  }

  EngineConfig config_;
  std::vector<SubtaskId> subtasks_;
  LabelSet labels_;
  const Registry& registry_;
  Backend& backend_;
  std::function<std::string(const NewsItem&)> captioner_;
};

}  // namespace veritree
