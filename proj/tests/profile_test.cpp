#include <gtest/gtest.h>

#include "support.hpp"

using namespace veritree;
namespace fs = std::filesystem;

namespace {

fs::path good(const std::string& f) { return vt_test::fixtures() / "good_case" / f; }

std::string run_good_case(Runtime& rt) {
  const auto items = load_corpus(good("item.jsonl"), rt.profile().labels);
  const auto r = run_item(rt.engine(), items.at(0));
  EXPECT_TRUE(r.error.empty()) << r.error;
  return verdict_record(r, rt.profile().labels).dump();
}

nlohmann::json minimal(const fs::path& dir) {
  return {{"backend", {{"mode", "scripted"}, {"script", (dir / "script.json").string()}}},
          {"tools", {{"fixtures", (dir / "tools.jsonl").string()}}}};
}

}  // namespace

TEST(Profile, LoadsGoodCase) {
  const auto p = load_profile(good("profile.json"));
  EXPECT_EQ(p.name, "good-case-scripted");
  EXPECT_EQ(p.labels.size(), 3u);
  EXPECT_EQ(p.labels.at("Mismatch").cls.key, "CCD");
  ASSERT_EQ(p.subtasks.size(), 2u);
  EXPECT_EQ(p.subtasks[1].forged_token, "MISMATCH");
  EXPECT_EQ(p.engine.continuation, Continuation::First);
  EXPECT_EQ(p.backend.mode, BackendMode::Scripted);
  EXPECT_FALSE(p.backend.live.vision);
  ASSERT_TRUE(p.prices.has_value());
  EXPECT_EQ(p.prices->at("gpt-4o-mini").input_per_token, Rational(15, 100'000'000));
}

TEST(Profile, ContinuationDefaultsFollowBackendMode) {
  const auto dir = vt_test::fixtures() / "good_case";
  auto j = minimal(dir);
  EXPECT_EQ(parse_profile(j, dir).engine.continuation, Continuation::First);
  j["backend"] = {{"mode", "replay"}, {"transcript", "transcript.jsonl"}};
  EXPECT_EQ(parse_profile(j, dir).engine.continuation, Continuation::BestScore);
  j["engine"] = {{"continuation", "first"}, {"simulations", 4}, {"alpha", "0.25"}};
  const auto p = parse_profile(j, dir);
  EXPECT_EQ(p.engine.continuation, Continuation::First);
  EXPECT_EQ(p.engine.simulations, 4);
  EXPECT_EQ(p.engine.alpha, 0.25);
}

TEST(Profile, ConfigErrors) {
  const auto dir = vt_test::fixtures() / "good_case";
  auto bad = [&](auto mutate) {
    auto j = minimal(dir);
    mutate(j);
    EXPECT_THROW(parse_profile(j, dir), ConfigError) << j.dump();
  };
  bad([](auto& j) { j["backend"]["mode"] = "psychic"; });
  bad([](auto& j) { j["backend"].erase("script"); });
  bad([](auto& j) { j["backend"]["script"] = "nope.json"; });
  bad([](auto& j) { j["backend"] = {{"mode", "replay"}}; });
  bad([](auto& j) { j["tools"].erase("fixtures"); });
  bad([](auto& j) { j["tools"]["mode"] = "carrier-pigeon"; });
  bad([](auto& j) { j["labels"] = "unknown-bench"; });
  bad([](auto& j) { j["subtasks"] = {"text", "astrology"}; });
  bad([](auto& j) { j["subtasks"] = {"text", "match"}; });  // VVD left without a subtask
  bad([](auto& j) { j["engine"] = {{"alpha", 2}}; });
  bad([](auto& j) { j["engine"] = {{"no_such_key", 1}}; });
  EXPECT_THROW(load_profile(dir / "absent.json"), ConfigError);
  vt_test::TempDir tmp;
  { std::ofstream(tmp / "p.json") << "{not json"; }
  EXPECT_THROW(load_profile(tmp / "p.json"), ConfigError);
}

TEST(Profile, CustomSubtaskAndAmgFamily) {
  const auto dir = vt_test::fixtures() / "good_case";
  auto j = minimal(dir);
  j["labels"] = nlohmann::json::array({{{"key", "Real"}, {"real", true}}, {{"key", "SAT"}, {"name", "Satire"}}});
  j["subtasks"] = nlohmann::json::array(
      {{{"key", "tone"}, {"class", "SAT"}, {"authentic", "SERIOUS"}, {"forged", "SATIRE"}}});
  const auto p = parse_profile(j, dir);
  EXPECT_EQ(p.subtasks[0].classify("SATIRE"), SourceVerdict::Forged);
  EXPECT_NE(p.subtasks[0].task_description.find("Finish[SATIRE]"), std::string::npos);

  auto a = minimal(dir);
  a["labels"] = "amg";
  const auto amg = parse_profile(a, dir);
  EXPECT_EQ(amg.subtasks.size(), 5u);
  EXPECT_EQ(amg.tools.family, "amg");
  EXPECT_EQ(profile_cards(amg).size(), 7u);
}

TEST(Runtime, ScriptedReplayAndRecordAgree) {
  Runtime scripted(load_profile(good("profile.json")));
  const auto a = run_good_case(scripted);

  Runtime replay(load_profile(good("replay.json")));
  EXPECT_EQ(run_good_case(replay), a);

  vt_test::TempDir dir;
  RunOptions rec;
  rec.record = dir / "t.jsonl";
  {
    Runtime recording(load_profile(good("profile.json")), rec);
    EXPECT_EQ(run_good_case(recording), a);
  }
  RunOptions rep;
  rep.replay = dir / "t.jsonl";
  Runtime replayed(load_profile(good("profile.json")), rep);
  EXPECT_EQ(run_good_case(replayed), a);
  EXPECT_EQ(vt_test::slurp(dir / "t.jsonl"), vt_test::slurp(good("transcript.jsonl")));
}

TEST(Runtime, SettingsAndConfigFileOverrideProfile) {
  vt_test::TempDir dir;
  { std::ofstream(dir / "e.conf") << "# tuned\nsimulations = 9\nalpha = 0.3\n"; }
  RunOptions o;
  o.config = dir / "e.conf";
  o.settings = {{"alpha", "0.7"}};
  Runtime rt(load_profile(good("profile.json")), o);
  EXPECT_EQ(rt.profile().engine.simulations, 9);
  EXPECT_EQ(rt.profile().engine.alpha, 0.7);
  o.settings = {{"tau_early", "-1"}};
  EXPECT_THROW(Runtime(load_profile(good("profile.json")), o), ConfigError);
}

TEST(Runtime, RecordAndReplayAreExclusiveAndReplayMustExist) {
  vt_test::TempDir dir;
  RunOptions o;
  o.record = dir / "a.jsonl";
  o.replay = good("transcript.jsonl");
  EXPECT_THROW(Runtime(load_profile(good("profile.json")), o), ConfigError);
  RunOptions r;
  r.replay = dir / "missing.jsonl";
  EXPECT_THROW(Runtime(load_profile(good("profile.json")), r), ConfigError);
}

TEST(Runtime, LiveBackendNeedsCredentials) {
  const auto dir = vt_test::fixtures() / "good_case";
  auto j = minimal(dir);
  j["backend"] = {{"mode", "live"}, {"api_key_env", "VERITREE_ABSENT_KEY"}};
  ::unsetenv("VERITREE_ABSENT_KEY");
  EXPECT_THROW(Runtime(parse_profile(j, dir)), ConfigError);
  vt_test::TempDir tmp;
  RunOptions rec;
  rec.record = tmp / "t.jsonl";
  EXPECT_THROW(Runtime(parse_profile(j, dir), rec), ConfigError);
}

TEST(Runtime, SelectRestrictsRegistry) {
  const auto dir = vt_test::fixtures() / "good_case";
  auto j = minimal(dir);
  j["tools"]["select"] = {"VQA", "Wikipedia"};
  Runtime rt(parse_profile(j, dir));
  EXPECT_EQ(rt.registry().verbs(), (std::vector<std::string>{"VQA", "Wikipedia"}));
  j["tools"]["select"] = {"Telepathy"};
  EXPECT_THROW(Runtime(parse_profile(j, dir)), ConfigError);
}

TEST(Runtime, LiveToolEndpointsAreConfigurable) {
  vt_test::LocalServer srv;
  srv.server().Get("/w/api.php", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"query":{"pages":{"1":{"extract":"An article."}}}})", "application/json");
  });
  srv.start();
  const auto dir = vt_test::fixtures() / "good_case";
  auto j = minimal(dir);
  j["tools"] = {{"mode", "live"}, {"select", {"Wikipedia"}}, {"endpoints", {{"wikipedia", {{"base_url", srv.url()}}}}}};
  Runtime rt(parse_profile(j, dir));
  EXPECT_EQ(rt.registry().invoke("Wikipedia", "Thing", vt_test::item("i")), "An article.");
}

TEST(ExportProfile, RoundTripsWithSelection) {
  const auto p = load_profile(good("profile.json"));
  const auto j = export_profile(p, {"VQA", "Google"});
  const auto back = parse_profile(j, p.dir);
  ASSERT_TRUE(back.tools.select.has_value());
  EXPECT_EQ(*back.tools.select, (std::vector<std::string>{"VQA", "Google"}));
  EXPECT_EQ(back.name, p.name);
}
