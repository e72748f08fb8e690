#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace veritree;

namespace {

// Records every prompt sent through it.
class Tap : public Backend {
 public:
  explicit Tap(Backend& inner) : inner_(inner) {}
  ReasonerResponse complete(const ReasonerRequest& req) override {
    requests.push_back(req);
    return inner_.complete(req);
  }
  std::vector<ReasonerRequest> requests;

 private:
  Backend& inner_;
};

const std::vector<SubtaskId> kSubs = mmfakebench_subtasks();

EngineConfig first_config() {
  EngineConfig c;
  c.continuation = Continuation::First;
  c.n_actions = 1;
  return c;
}

std::string finish(const std::string& token) { return "Thought: done\nAction: Finish[" + token + "]"; }
std::string correctness(int s) { return "Thus the correctness score is " + std::to_string(s); }
std::string reliability(int s) { return "Thus the reliability score is " + std::to_string(s); }

}  // namespace

TEST(Uct, Examples) {
  EXPECT_EQ(uct(0.0, 0, 0, 2.0), 0.0);
  EXPECT_NEAR(uct(0.8, 1, 2, 2.0), 0.4 + 2.0 * std::sqrt(std::log(3.0) / 2.0), 1e-9);
  EXPECT_NEAR(uct(0.8, 1, 2, 2.0), 1.8824, 1e-4);
  EXPECT_NEAR(uct(0.0, 0, 4, 2.0), 2.0 * std::sqrt(std::log(5.0)), 1e-9);
  EXPECT_NEAR(uct(0.0, 0, 4, 2.0), 2.5373, 1e-4);
}

TEST(Uct, RandomGridMatchesDirectArithmetic) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> v(0.0, 1.0);
  std::uniform_real_distribution<double> c(0.0, 5.0);
  std::uniform_int_distribution<std::uint64_t> n(0, 1000);
  for (int i = 0; i < 1000; ++i) {
    const double val = v(rng), cc = c(rng);
    const auto nc = n(rng), np = n(rng);
    EXPECT_NEAR(uct(val, nc, np, cc),
                static_cast<double>(vt_oracle::uct(val, static_cast<long double>(nc), static_cast<long double>(np), cc)),
                1e-9);
  }
}

TEST(Select, PicksHighestUctAndSkipsRetired) {
  auto t = SearchTree::initialize({0.2, 0.7, 0.7});
  EXPECT_EQ(select(t, 0.0), t.subtask_node(1));  // tie keeps the earlier subtask
  t.node(t.subtask_node(1)).pruned = true;
  EXPECT_EQ(select(t, 0.0), t.subtask_node(2));
  t.node(t.subtask_node(2)).completed = true;
  EXPECT_EQ(select(t, 0.0), t.subtask_node(0));
  t.node(t.subtask_node(0)).pruned = true;
  EXPECT_THROW(select(t, 2.0), AllSubtasksResolved);
}

TEST(Select, ExplorationFavoursUnvisited) {
  auto t = SearchTree::initialize({0.5, 0.5});
  backpropagate(t, t.subtask_node(0), 0.6);
  backpropagate(t, t.subtask_node(0), 0.6);
  // Subtask 0: 0.6/3 + 2*sqrt(ln3/3); subtask 1: 0.5/1 + 2*sqrt(ln3).
  EXPECT_EQ(select(t, 2.0), t.subtask_node(1));
  EXPECT_EQ(select(t, 0.0), t.subtask_node(1));
}

TEST(Backprop, RunningMeanExample) {
  auto t = SearchTree::initialize({0.3});
  const auto leaf = t.add_step(t.subtask_node(0), TrajectoryStep{});
  auto d = backpropagate(t, leaf, 0.2);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d[0].node, leaf);
  EXPECT_EQ(d.back().node, t.root());
  backpropagate(t, leaf, 0.8);
  EXPECT_NEAR(t.node(t.subtask_node(0)).value, 0.5, 1e-15);
  EXPECT_EQ(t.node(t.root()).visits, 2u);
  EXPECT_EQ(t.trajectory_prefix(leaf).size(), 1u);
}

TEST(Backprop, RandomTreesMatchBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto trial = vt_oracle::backprop_trial(rng);
    const double err = vt_oracle::backprop_error(trial);
    ASSERT_GE(err, 0.0) << "visit count mismatch, seed " << seed;
    ASSERT_LE(err, 1e-12) << "seed " << seed;
  }
}

TEST(Prune, OnlyConfidentAuthenticVerdicts) {
  auto t = SearchTree::initialize({0.5, 0.5});
  SubtaskOutcome o;
  o.answer = SourceVerdict::Forged;
  o.confidence = 1.0;
  EXPECT_FALSE(maybe_prune(t, t.subtask_node(0), o, 0.8));
  o.answer = SourceVerdict::Authentic;
  o.confidence = 0.7;
  EXPECT_FALSE(maybe_prune(t, t.subtask_node(0), o, 0.8));
  o.depth_exhausted = true;
  o.confidence = 0.9;
  EXPECT_FALSE(maybe_prune(t, t.subtask_node(0), o, 0.8));
  o.depth_exhausted = false;
  o.confidence = 0.8;
  EXPECT_TRUE(maybe_prune(t, t.subtask_node(0), o, 0.8));
  EXPECT_FALSE(selectable(t.node(t.subtask_node(0))));
}

TEST(FailureMemory, FifoOfThreePerSubtask) {
  FailureMemory m(2, 3);
  for (int i = 0; i < 5; ++i) m.remember(0, std::to_string(i));
  EXPECT_EQ(m.recall(0), (std::vector<std::string>{"2", "3", "4"}));
  EXPECT_TRUE(m.recall(1).empty());
  FailureMemory off(1, 0);
  off.remember(0, "x");
  EXPECT_TRUE(off.recall(0).empty());
}

TEST(Engine, PrunesConfidentTextThenEarlyStopsOnMismatch) {
  const std::vector<SubtaskId> subs{text_subtask(), match_subtask()};
  const LabelSet labels("two", {{{"Real"}, "Real", true}, {{"TVD"}, "Text", false}, {{"CCD"}, "Mismatch", false}});
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  ScriptedBackend be;
  be.add(Role::Initializer, "", "", "are [0.9,0.1]");
  be.add(Role::Planner, "", "text", finish("TEXT SUPPORT"));
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(9));
  be.add(Role::EvaluatorConfidence, "", "text", reliability(9));
  be.add(Role::Planner, "", "match", "Thought: look\nAction: VQA[what is shown?]");
  be.add(Role::Planner, "", "match", finish("MISMATCH"));
  be.add(Role::EvaluatorTrajectory, "", "match", correctness(8));
  be.add(Role::EvaluatorConfidence, "", "match", reliability(9));
  Engine engine(first_config(), subs, labels, reg, be);
  const auto ep = engine.run_episode(vt_test::item("x"));
  ASSERT_EQ(ep.log.iterations.size(), 2u);
  EXPECT_EQ(ep.log.iterations[0].subtask, "text");
  EXPECT_TRUE(ep.log.iterations[0].pruned);
  EXPECT_NEAR(ep.log.iterations[0].reward, 0.9, 1e-12);
  EXPECT_EQ(ep.log.iterations[1].subtask, "match");
  EXPECT_TRUE(ep.log.iterations[1].early_stop);
  EXPECT_NEAR(ep.log.iterations[1].reward, 0.85, 1e-12);
  ASSERT_EQ(ep.log.iterations[1].steps.size(), 2u);
  EXPECT_EQ(ep.log.iterations[1].steps[0].step.observation, "VQA says something about what is shown?.");
  EXPECT_EQ(ep.verdict.path, DecisionPath::EarlyStop);
  EXPECT_EQ(ep.verdict.multiclass.key, "CCD");
  EXPECT_EQ(ep.verdict.binary, Binary::Fake);
}

TEST(Engine, LowRewardsAreRememberedInLaterPlannerPrompts) {
  const std::vector<SubtaskId> subs{text_subtask()};
  const LabelSet labels("one", {{{"Real"}, "Real", true}, {{"TVD"}, "Text", false}});
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  ScriptedBackend inner;
  inner.add(Role::Initializer, "", "", "are [0.5]");
  for (int i = 0; i < 3; ++i) inner.add(Role::Planner, "", "text", finish("TEXT SUPPORT"));
  for (int i = 0; i < 3; ++i) inner.add(Role::EvaluatorTrajectory, "", "text", correctness(2));
  for (int i = 0; i < 3; ++i) inner.add(Role::EvaluatorConfidence, "", "text", reliability(3));
  Tap be(inner);
  auto cfg = first_config();
  cfg.simulations = 3;
  Engine engine(cfg, subs, labels, reg, be);
  const auto ep = engine.run_episode(vt_test::item("x"));
  ASSERT_EQ(ep.log.iterations.size(), 3u);
  for (const auto& it : ep.log.iterations) EXPECT_TRUE(it.remembered_failure);
  std::vector<std::string> planner_prompts;
  for (const auto& r : be.requests)
    if (r.role == Role::Planner) planner_prompts.push_back(r.rendered_prompt);
  ASSERT_EQ(planner_prompts.size(), 3u);
  EXPECT_EQ(planner_prompts[0].find("Earlier attempts"), std::string::npos);
  EXPECT_NE(planner_prompts[1].find("earned reward 0.25"), std::string::npos);
  // Fused over the latest text outcome: authentic at 0.3 -> p_fake 0.7 -> TVD.
  EXPECT_EQ(ep.verdict.multiclass.key, "TVD");
  EXPECT_NEAR(ep.verdict.p_real, 0.3, 1e-12);
}

TEST(Engine, DepthExhaustionYieldsUnreliableReal) {
  const std::vector<SubtaskId> subs{text_subtask()};
  const LabelSet labels("one", {{{"Real"}, "Real", true}, {{"TVD"}, "Text", false}});
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  ScriptedBackend be;
  be.add(Role::Initializer, "", "", "are [0.5]");
  be.add(Role::Planner, "", "text", "Thought: search\nAction: Google[x]");
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(4));
  auto cfg = first_config();
  cfg.depth_limit = 1;
  cfg.simulations = 1;
  Engine engine(cfg, subs, labels, reg, be);
  const auto ep = engine.run_episode(vt_test::item("x"));
  ASSERT_EQ(ep.log.iterations.size(), 1u);
  EXPECT_FALSE(ep.log.iterations[0].answer.has_value());
  EXPECT_NEAR(ep.log.iterations[0].reward, 0.2, 1e-12);  // 0.5*0.4 + 0.5*0
  EXPECT_TRUE(ep.verdict.unreliable);
  EXPECT_EQ(ep.verdict.p_real, 0.5);
  EXPECT_EQ(ep.verdict.binary, Binary::Real);
  EXPECT_FALSE(ep.log.warnings.empty());
}

TEST(Engine, InvalidActionsBecomeCorrectiveObservations) {
  const std::vector<SubtaskId> subs{text_subtask()};
  const LabelSet labels("one", {{{"Real"}, "Real", true}, {{"TVD"}, "Text", false}});
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  ScriptedBackend be;
  be.add(Role::Initializer, "", "", "are [0.5]");
  be.add(Role::Planner, "", "text", "Thought: a\nAction: VQA[not allowed here]");
  be.add(Role::Planner, "", "text", "Thought: b\nAction: Finish[MAYBE]");
  be.add(Role::Planner, "", "text", "Thought: c\nAction: Detect");
  be.add(Role::Planner, "", "text", finish("TEXT REFUTE"));
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(9));
  be.add(Role::EvaluatorConfidence, "", "text", reliability(9));
  Engine engine(first_config(), subs, labels, reg, be);
  const auto ep = engine.run_episode(vt_test::item("x"));
  const auto& steps = ep.log.iterations.at(0).steps;
  ASSERT_EQ(steps.size(), 4u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(steps[i].step.observation.rfind("Invalid action", 0), 0u) << i;
  EXPECT_EQ(reg.upstream_calls(), 0u);
  EXPECT_EQ(ep.verdict.multiclass.key, "TVD");
}

TEST(Engine, BestScoreContinuationRanksCandidates) {
  const std::vector<SubtaskId> subs{text_subtask()};
  const LabelSet labels("one", {{{"Real"}, "Real", true}, {{"TVD"}, "Text", false}});
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  ScriptedBackend be;
  be.add(Role::Initializer, "", "", "are [0.5]");
  be.add(Role::Planner, "", "text", std::vector<std::string>{finish("TEXT SUPPORT"), finish("TEXT REFUTE")});
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(3));
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(9));
  be.add(Role::EvaluatorTrajectory, "", "text", correctness(9));
  be.add(Role::EvaluatorConfidence, "", "text", reliability(9));
  EngineConfig cfg;
  cfg.n_actions = 2;
  Engine engine(cfg, subs, labels, reg, be);
  const auto ep = engine.run_episode(vt_test::item("x"));
  const auto& step = ep.log.iterations.at(0).steps.at(0);
  EXPECT_EQ(step.candidate_scores, (std::vector<double>{0.3, 0.9}));
  EXPECT_EQ(step.step.action.argument, "TEXT REFUTE");
  EXPECT_TRUE(ep.log.iterations[0].early_stop);
}

TEST(Engine, RandomEpisodesKeepPruneAndEarlyStopInvariants) {
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  const auto verbs = vt_oracle::verbs_by_subtask(reg, kSubs);
  EngineConfig cfg;
  cfg.simulations = 8;
  cfg.depth_limit = 3;
  std::size_t prunes = 0, stops = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    vt_oracle::RandomBackend be(seed, kSubs, verbs);
    Engine engine(cfg, kSubs, LabelSet::mmfakebench(), reg, be);
    const auto ep = engine.run_episode(vt_test::item("r" + std::to_string(seed)));
    const auto problem = vt_oracle::check_episode(ep.log, cfg.tau_early);
    ASSERT_FALSE(problem.has_value()) << *problem << " (seed " << seed << ")";
    for (const auto& it : ep.log.iterations) {
      prunes += it.pruned;
      stops += it.early_stop;
    }
  }
  EXPECT_GT(prunes, 0u);
  EXPECT_GT(stops, 0u);
}

TEST(Engine, SameSeedSameLog) {
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  const auto verbs = vt_oracle::verbs_by_subtask(reg, kSubs);
  auto run = [&] {
    vt_oracle::RandomBackend be(9, kSubs, verbs);
    Engine engine(EngineConfig{}, kSubs, LabelSet::mmfakebench(), reg, be);
    return to_jsonl(engine.run_episode(vt_test::item("same")).log, LabelSet::mmfakebench());
  };
  EXPECT_EQ(run(), run());
}

TEST(EpisodeLog, RecordsShape) {
  auto reg = vt_oracle::echo_registry(builtin_cards("mmfakebench", true));
  vt_oracle::RandomBackend be(1, kSubs, vt_oracle::verbs_by_subtask(reg, kSubs));
  Engine engine(EngineConfig{}, kSubs, LabelSet::mmfakebench(), reg, be);
  const auto ep = engine.run_episode(vt_test::item("shape"));
  const auto recs = to_records(ep.log, LabelSet::mmfakebench());
  ASSERT_EQ(recs.size(), ep.log.iterations.size() + 2);
  EXPECT_EQ(recs.front()["schema"], "veritree.episode/1");
  EXPECT_EQ(recs.back()["record"], "verdict");
  EXPECT_TRUE(recs.back().contains("verdict"));
}
