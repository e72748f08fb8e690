#pragma once

// Independent reference computations and randomized scripted worlds, shared
// by the unit suites and the acceptance binary. Nothing here calls into the
// library's arithmetic.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "veritree/veritree.hpp"

namespace vt_oracle {

inline long double uct(long double v, long double nc, long double np, long double c) {
  return v / (nc + 1.0L) + c * std::sqrt(std::log(np + 1.0L) / (nc + 1.0L));
}

// Random tree grown by hand with explicit parent links; rewards are routed to
// random leaves and every node keeps the full list of rewards it saw.
struct BackpropTrial {
  veritree::SearchTree tree;
  std::vector<std::vector<double>> seen;  // by node id
  std::vector<double> initial;            // value before any update
};

inline BackpropTrial backprop_trial(std::mt19937_64& rng) {
  BackpropTrial t;
  std::uniform_int_distribution<int> fan(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> priors(static_cast<std::size_t>(fan(rng)));
  for (auto& p : priors) p = unit(rng);
  t.tree = veritree::SearchTree::initialize(priors);
  std::vector<veritree::NodeId> frontier = t.tree.subtask_nodes();
  // Depth counts the subtask layer as 1; grow up to three more layers.
  for (int depth = 2; depth <= 4; ++depth) {
    std::vector<veritree::NodeId> next;
    for (auto id : frontier) {
      if (unit(rng) < 0.3) continue;
      const int k = fan(rng);
      for (int i = 0; i < k; ++i) next.push_back(t.tree.add_child(id, veritree::NodeKind::Step));
    }
    frontier = std::move(next);
  }
  t.seen.resize(t.tree.size());
  for (std::size_t i = 0; i < t.tree.size(); ++i) t.initial.push_back(t.tree.node(i).value);

  std::uniform_int_distribution<std::size_t> any_node(1, t.tree.size() - 1);
  std::uniform_int_distribution<int> count(1, 100);
  const int rewards = count(rng);
  for (int r = 0; r < rewards; ++r) {
    const auto leaf = any_node(rng);
    const double reward = unit(rng);
    veritree::backpropagate(t.tree, leaf, reward);
    // Walk parents by hand.
    std::optional<veritree::NodeId> cur = leaf;
    while (cur) {
      t.seen[*cur].push_back(reward);
      cur = t.tree.node(*cur).parent;
    }
  }
  return t;
}

// Largest deviation between each node's (V, N) and the brute-force
// mean/count of rewards routed through it. Returns -1 on a count mismatch.
inline double backprop_error(const BackpropTrial& t) {
  double worst = 0.0;
  for (std::size_t i = 0; i < t.tree.size(); ++i) {
    const auto& n = t.tree.node(i);
    const auto& r = t.seen[i];
    if (n.visits != r.size()) return -1.0;
    long double mean = t.initial[i];
    if (!r.empty()) {
      long double sum = 0.0L;
      for (double x : r) sum += x;
      mean = sum / static_cast<long double>(r.size());
    }
    worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(n.value) - mean)));
  }
  return worst;
}

struct FusionCase {
  std::vector<bool> forged;
  std::vector<double> confidence;
};

struct FusionExpect {
  std::vector<double> p_fake;
  double p_real = 0.0;
  int winner = -1;  // -1 for Real, else subtask position
};

inline FusionExpect fusion(const FusionCase& c) {
  FusionExpect e;
  long double log_sum = 0.0L;
  bool zero = false;
  for (std::size_t i = 0; i < c.forged.size(); ++i) {
    const double pf = c.forged[i] ? c.confidence[i] : 1.0 - c.confidence[i];
    e.p_fake.push_back(pf);
    if (1.0 - pf <= 0.0) zero = true;
    else log_sum += std::log(static_cast<long double>(1.0 - pf));
  }
  e.p_real = zero ? 0.0 : static_cast<double>(std::exp(log_sum / static_cast<long double>(c.forged.size())));
  double best = e.p_real;
  for (std::size_t i = 0; i < e.p_fake.size(); ++i) {
    // Near-ties resolve toward Real and then toward the earlier subtask.
    if (e.p_fake[i] > best + 1e-12) {
      best = e.p_fake[i];
      e.winner = static_cast<int>(i);
    }
  }
  return e;
}

inline double macro_f1(const std::vector<std::size_t>& golds, const std::vector<std::size_t>& preds, std::size_t k) {
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) ++tp;
      else if (preds[i] == c) ++fp;
      else if (golds[i] == c) ++fn;
    }
    const auto denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(k);
}

// Reasoner backend whose every answer is drawn from a seeded generator. The
// planner picks a random whitelisted verb or a random Finish answer for the
// subtask named in the request; evaluators emit random integer scores.
class RandomBackend : public veritree::Backend {
 public:
  RandomBackend(std::uint64_t seed, std::vector<veritree::SubtaskId> subtasks,
                std::map<std::string, std::vector<std::string>> verbs)
      : rng_(seed), subtasks_(std::move(subtasks)), verbs_(std::move(verbs)) {}

  veritree::ReasonerResponse complete(const veritree::ReasonerRequest& req) override {
    veritree::ReasonerResponse resp;
    resp.usage.model_name = "random";
    const int n = std::max(1, req.sample_count);
    for (int i = 0; i < n; ++i) resp.completions.push_back(one(req));
    return resp;
  }

 private:
  std::string one(const veritree::ReasonerRequest& req) {
    using veritree::Role;
    std::uniform_int_distribution<int> score(1, 10);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (req.role) {
      case Role::Initializer: {
        std::string list = "[";
        for (std::size_t i = 0; i < subtasks_.size(); ++i) {
          char buf[16];
          std::snprintf(buf, sizeof(buf), "%.2f", unit(rng_));
          list += (i ? "," : "") + std::string(buf);
        }
        return "Thus, the possibility of these are " + list + "]";
      }
      case Role::EvaluatorTrajectory: return "Thus the correctness score is " + std::to_string(score(rng_));
      case Role::EvaluatorConfidence: return "Thus the reliability score is " + std::to_string(score(rng_));
      case Role::ImageQuestion: return "Something is shown.";
      case Role::Planner: break;
    }
    const veritree::SubtaskId* sub = nullptr;
    for (const auto& s : subtasks_)
      if (s.key == req.subtask) sub = &s;
    const auto& verbs = verbs_[req.subtask];
    const double r = unit(rng_);
    if (sub == nullptr || r < 0.05) return "Thought: hmm\nAction: not an action";
    if (r < 0.45 && !verbs.empty())
      return "Thought: look\nAction: " + verbs[rng_() % verbs.size()] + "[query " + std::to_string(rng_() % 5) + "]";
    return "Thought: decide\nAction: Finish[" + (unit(rng_) < 0.5 ? sub->authentic_token : sub->forged_token) + "]";
  }

  std::mt19937_64 rng_;
  std::vector<veritree::SubtaskId> subtasks_;
  std::map<std::string, std::vector<std::string>> verbs_;
};

// Tool client answering every call with a fixed observation.
class EchoClient : public veritree::ToolClient {
 public:
  std::string call(const std::string& verb, const std::string& argument, const veritree::NewsItem&) override {
    return verb + " says something about " + argument + ".";
  }
};

inline veritree::Registry echo_registry(const std::vector<veritree::ToolCard>& cards) {
  veritree::Registry r;
  auto client = std::make_shared<EchoClient>();
  for (const auto& c : cards) r.register_card(c, client);
  return r;
}

inline std::map<std::string, std::vector<std::string>> verbs_by_subtask(const veritree::Registry& r,
                                                                       const std::vector<veritree::SubtaskId>& subs) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& s : subs)
    for (const auto& v : r.whitelist(s.key))
      if (v != veritree::kFinishVerb) out[s.key].push_back(v);
  return out;
}

// Checks one episode log: a pruned subtask is never selected again and every
// early stop carries a forged answer with confidence >= tau_early.
inline std::optional<std::string> check_episode(const veritree::EpisodeLog& log, double tau_early) {
  std::set<std::string> pruned;
  for (const auto& it : log.iterations) {
    if (pruned.count(it.subtask)) return "pruned subtask " + it.subtask + " re-selected at iteration " + std::to_string(it.index);
    if (it.early_stop && !(it.answer == veritree::SourceVerdict::Forged && it.confidence >= tau_early))
      return "early stop without a confident forged answer at iteration " + std::to_string(it.index);
    if (it.pruned) pruned.insert(it.subtask);
  }
  return std::nullopt;
}

}  // namespace vt_oracle
