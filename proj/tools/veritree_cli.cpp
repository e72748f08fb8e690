// veritree: detect, bench, and select-tools over a profile.
//
// Exit codes: 0 ok, 2 an item or evaluation errored, 3 replay miss,
// 64 usage error, 65 bad input data, 78 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "veritree/veritree.hpp"

namespace fs = std::filesystem;
using namespace veritree;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitItemError = 2;
constexpr int kExitReplayMiss = 3;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitConfig = 78;

struct CommonArgs {
  std::string profile;
  std::string record;
  std::string replay;
  std::string config;
  std::vector<std::string> settings;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--profile", a.profile, "Profile JSON file")->required();
  cmd->add_option("--config", a.config, "Engine config file of key = value lines");
  cmd->add_option("--set", a.settings, "Engine setting override key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "Engine RNG seed");
  cmd->add_option("--record", a.record, "Append every reasoner call to this transcript");
  cmd->add_option("--replay", a.replay, "Serve reasoner calls from this transcript");
}

RunOptions run_options(const CommonArgs& a) {
  RunOptions o;
  if (!a.record.empty()) o.record = a.record;
  if (!a.replay.empty()) o.replay = a.replay;
  if (!a.config.empty()) o.config = a.config;
  for (const auto& s : a.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    o.settings.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed) o.settings.emplace_back("seed", std::to_string(*a.seed));
  return o;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

int report_item_errors(const std::vector<ItemResult>& items) {
  int code = kExitOk;
  for (const auto& r : items) {
    if (r.error.empty()) continue;
    std::cerr << "error: item " << r.id << ": " << r.error << "\n";
    if (r.error_kind == "replay_miss") {
      std::cerr << "replay miss digest: " << r.replay_digest << "\n";
      code = kExitReplayMiss;
    } else if (code == kExitOk) {
      code = kExitItemError;
    }
  }
  return code;
}

// ---------------------------------------------------------------------------
// detect

struct DetectArgs {
  CommonArgs common;
  std::vector<std::string> inputs;
  std::string id = "item";
  std::string text;
  std::string image;
  std::string log;
};

int run_detect(const DetectArgs& a) {
  Runtime rt(load_profile(a.common.profile), run_options(a.common));
  const auto& labels = rt.profile().labels;
  std::vector<NewsItem> items;
  for (const auto& in : a.inputs) {
    auto more = load_corpus(in, labels, false);
    items.insert(items.end(), more.begin(), more.end());
  }
  if (!a.text.empty()) {
    NewsItem item;
    item.id = a.id;
    item.text = a.text;
    if (!a.image.empty()) item.image = fs::path(a.image);
    items.push_back(std::move(item));
  }
  if (items.empty()) throw CLI::ValidationError("detect", "give --input or --text");
  for (const auto& item : items) {
    if (item.image && !fs::is_regular_file(*item.image))
      throw ConfigError("image for item " + item.id + " not found: " + item.image->string());
    validate(item);
  }

  const auto engine = rt.engine();
  std::string log;
  std::vector<ItemResult> results;
  for (const auto& item : items) {
    auto r = run_item(engine, item);
    std::cout << verdict_record(r, labels).dump() << "\n";
    if (r.verdict) log += to_jsonl(r.log, labels);
    results.push_back(std::move(r));
  }
  if (!a.log.empty()) write_file(a.log, log);
  return report_item_errors(results);
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  CommonArgs common;
  std::string corpus;
  std::size_t parallel = 1;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  Runtime rt(load_profile(a.common.profile), run_options(a.common));
  const auto& profile = rt.profile();
  const auto corpus = load_corpus(a.corpus, profile.labels);
  if (corpus.empty()) std::cerr << "warning: corpus " << a.corpus << " is empty\n";
  const auto engine = rt.engine();
  const auto result = run_benchmark(corpus, engine, a.parallel, profile.prices ? &*profile.prices : nullptr);

  std::cout << format_table(result.metrics);
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    std::string verdicts;
    for (const auto& r : result.items) verdicts += verdict_record(r, profile.labels).dump() + "\n";
    write_file(dir / "verdicts.jsonl", verdicts);
    write_file(dir / "metrics.json", to_json(result.metrics).dump(2) + "\n");
  }
  return report_item_errors(result.items);
}

// ---------------------------------------------------------------------------
// select-tools

struct SelectArgs {
  CommonArgs common;
  std::string corpus;
  std::vector<std::string> candidates;
  std::vector<std::string> base;
  std::string effects;
  std::size_t parallel = 1;
  std::string out;
  std::string export_profile;
};

std::vector<ToolCard> pick_cards(const std::vector<ToolCard>& pool, const std::vector<std::string>& names) {
  std::vector<ToolCard> out;
  for (const auto& n : names) {
    auto it = std::find_if(pool.begin(), pool.end(), [&](const ToolCard& c) { return c.name == n; });
    if (it == pool.end()) throw ConfigError("unknown tool '" + n + "'");
    out.push_back(*it);
  }
  return out;
}

int run_select(const SelectArgs& a, const CLI::App& cmd) {
  std::unique_ptr<Runtime> rt;
  std::vector<ToolCard> pool;
  AccuracyFn accuracy;
  std::vector<NewsItem> corpus;
  std::optional<SyntheticEffects> effects;
  const bool has_candidates = cmd.get_option("--candidates")->count() > 0;

  if (!a.effects.empty()) {
    effects = SyntheticEffects::load(a.effects);
    for (const auto& name : effects->tools()) pool.push_back(ToolCard{name, "synthetic tool", ArgumentKind::QueryText, "text-observation", {}, Binding::fixture()});
    accuracy = [&](const std::vector<ToolCard>& cards) { return effects->accuracy(cards); };
  } else {
    if (a.corpus.empty()) throw CLI::ValidationError("select-tools", "--corpus is required without --synthetic-effects");
    rt = std::make_unique<Runtime>(load_profile(a.common.profile), run_options(a.common));
    pool = profile_cards(rt->profile());
    corpus = load_corpus(a.corpus, rt->profile().labels);
    if (corpus.empty()) throw ConfigError("development corpus " + a.corpus + " is empty");
    accuracy = [&](const std::vector<ToolCard>& cards) {
      rt->set_cards(cards);
      rt->backend().rewind();
      const auto engine = rt->engine();
      const auto result = run_benchmark(corpus, engine, a.parallel);
      for (const auto& r : result.items)
        if (!r.error.empty()) throw EvaluatorFailure("item " + r.id + ": " + r.error);
      return result.metrics.accuracy;
    };
  }

  const auto base = pick_cards(pool, a.base);
  std::vector<ToolCard> candidates;
  if (has_candidates) {
    candidates = pick_cards(pool, a.candidates);
  } else {
    for (const auto& c : pool)
      if (std::find(a.base.begin(), a.base.end(), c.name) == a.base.end()) candidates.push_back(c);
  }

  const auto report = select_tools(candidates, base, accuracy);
  std::cout << format_table(report);
  if (!a.out.empty()) write_file(a.out, to_json(report).dump(2) + "\n");
  if (!a.export_profile.empty()) {
    nlohmann::json exported;
    if (rt) exported = candidates.empty() ? rt->profile().source : veritree::export_profile(rt->profile(), report.accepted);
    else exported = {{"tools", {{"select", report.accepted}}}};
    write_file(a.export_profile, exported.dump(2) + "\n");
  }
  return report.complete ? kExitOk : kExitItemError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"veritree: multi-source misinformation verification by tree search", "veritree"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "veritree 0.1.0");

  DetectArgs detect;
  auto* detect_cmd = app.add_subcommand("detect", "Verify news items and print one verdict record per item");
  add_common(detect_cmd, detect.common);
  detect_cmd->add_option("--input", detect.inputs, "Item file of JSON lines (repeatable)");
  detect_cmd->add_option("--text", detect.text, "News text of a single item");
  detect_cmd->add_option("--image", detect.image, "Image file of the single item");
  detect_cmd->add_option("--id", detect.id, "Id of the single item")->capture_default_str();
  detect_cmd->add_option("--log", detect.log, "Write episode logs (JSON lines) here");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Run a labeled corpus and report accuracy, macro-F1, iterations, cost");
  add_common(bench_cmd, bench.common);
  bench_cmd->add_option("--corpus", bench.corpus, "Corpus file of JSON lines")->required();
  bench_cmd->add_option("--parallel", bench.parallel, "Concurrent episodes")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", bench.out, "Directory for metrics.json and verdicts.jsonl");

  SelectArgs select;
  auto* select_cmd = app.add_subcommand("select-tools", "Greedy tool-subset selection on a development corpus");
  add_common(select_cmd, select.common);
  select_cmd->get_option("--profile")->required(false);
  select_cmd->add_option("--corpus", select.corpus, "Development corpus file");
  select_cmd->add_option("--candidates", select.candidates, "Candidate tools in evaluation order")->delimiter(',');
  select_cmd->add_option("--base", select.base, "Base tool set")->delimiter(',');
  select_cmd->add_option("--synthetic-effects", select.effects, "Score tool sets from a synthetic effects file");
  select_cmd->add_option("--parallel", select.parallel, "Concurrent episodes per evaluation")->capture_default_str()->check(CLI::PositiveNumber);
  select_cmd->add_option("--out", select.out, "Write the selection report (JSON) here");
  select_cmd->add_option("--export-profile", select.export_profile, "Write a profile restricted to the accepted tools");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*detect_cmd) return run_detect(detect);
    if (*bench_cmd) return run_bench(bench);
    if (*select_cmd) {
      if (select.effects.empty() && select.common.profile.empty())
        throw CLI::ValidationError("select-tools", "--profile is required without --synthetic-effects");
      return run_select(select, *select_cmd);
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ReplayMiss& e) {
    std::cerr << "error: " << e.what() << "\nreplay miss digest: " << e.digest() << "\n";
    return kExitReplayMiss;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DuplicateId& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const UnknownLabel& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitItemError;
  }
  return kExitUsage;
}
