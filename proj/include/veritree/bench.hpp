#pragma once

// Corpus ingestion, accuracy/macro-F1, exact cost accounting, and the
// corpus runner.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "veritree/decision.hpp"
#include "veritree/search.hpp"

namespace veritree {

// ---------------------------------------------------------------------------
// Corpus

// One JSON object per line:
//   {"id", "text", "image_path"?, "label_binary"?, "label_multiclass"?}
// image_path is resolved against the corpus file's directory.
inline std::vector<NewsItem> parse_corpus(std::istream& in, const LabelSet& labels,
                                          const std::filesystem::path& base_dir = {}, bool check_images = true) {
  std::vector<NewsItem> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "expected a JSON object");
    NewsItem item;
    try {
      item.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
      item.text = j.at("text").get<std::string>();
      if (j.contains("image_path") && !j["image_path"].is_null()) {
        std::filesystem::path p = j["image_path"].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        item.image = p;
      }
      if (j.contains("label_multiclass") && !j["label_multiclass"].is_null()) {
        const auto* info = labels.find(j["label_multiclass"].get<std::string>());
        if (info == nullptr)
          throw UnknownLabel("line " + std::to_string(lineno) + ": unknown label '" +
                             j["label_multiclass"].get<std::string>() + "'");
        item.gold_multiclass = info->cls;
      }
      if (j.contains("label_binary") && !j["label_binary"].is_null()) {
        try {
          item.gold_binary = binary_from_string(j["label_binary"].get<std::string>());
        } catch (const UnknownLabel&) {
          throw UnknownLabel("line " + std::to_string(lineno) + ": unknown binary label '" +
                             j["label_binary"].get<std::string>() + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    if (item.id.empty()) throw ParseError(lineno, "empty id");
    if (item.text.empty()) throw ParseError(lineno, "empty text");
    if (item.image && check_images) {
      std::ifstream probe(*item.image, std::ios::binary);
      if (!probe) throw ParseError(lineno, "image not readable: " + item.image->string());
    }
    if (item.gold_multiclass) {
      const bool real = labels.at(item.gold_multiclass->key).real;
      if (item.gold_binary && (*item.gold_binary == Binary::Real) != real)
        throw ParseError(lineno, "binary and multiclass labels disagree");
      if (!item.gold_binary) item.gold_binary = real ? Binary::Real : Binary::Fake;
    } else if (item.gold_binary == Binary::Real) {
      item.gold_multiclass = labels.real().cls;
    }
    if (!seen.insert(item.id).second) throw DuplicateId(lineno, item.id);
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<NewsItem> load_corpus(const std::filesystem::path& path, const LabelSet& labels,
                                         bool check_images = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read corpus " + path.string());
  return parse_corpus(in, labels, path.parent_path(), check_images);
}

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool absent = false;  // class appears in neither golds nor predictions
};

// Rows are gold classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : n_(classes), cells_(classes * classes, 0) {}

  void add(std::size_t gold, std::size_t predicted, std::uint64_t count = 1) {
    cells_.at(gold * n_ + predicted) += count;
  }
  std::uint64_t at(std::size_t gold, std::size_t predicted) const { return cells_.at(gold * n_ + predicted); }
  std::size_t classes() const { return n_; }

  std::uint64_t total() const { return std::accumulate(cells_.begin(), cells_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += at(i, i);
    return t;
  }
  std::uint64_t row_sum(std::size_t gold) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += at(gold, j);
    return s;
  }
  std::uint64_t col_sum(std::size_t predicted) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_; ++i) s += at(i, predicted);
    return s;
  }

  double accuracy() const {
    const auto t = total();
    return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
  }

  std::vector<ClassMetrics> per_class(const std::vector<std::string>& names = {}) const {
    std::vector<ClassMetrics> out;
    for (std::size_t c = 0; c < n_; ++c) {
      ClassMetrics m;
      m.label = c < names.size() ? names[c] : std::to_string(c);
      const auto tp = static_cast<double>(at(c, c));
      const auto predicted = static_cast<double>(col_sum(c));
      const auto actual = static_cast<double>(row_sum(c));
      m.support = row_sum(c);
      m.absent = predicted == 0 && actual == 0;
      m.precision = predicted == 0 ? 0.0 : tp / predicted;
      m.recall = actual == 0 ? 0.0 : tp / actual;
      m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
      out.push_back(m);
    }
    return out;
  }

  // Unweighted mean of per-class F1. Absent classes count as 0.
  double macro_f1() const {
    if (n_ == 0) return 0.0;
    double sum = 0.0;
    for (const auto& m : per_class()) sum += m.f1;
    return sum / static_cast<double>(n_);
  }

  std::vector<std::vector<std::uint64_t>> rows() const {
    std::vector<std::vector<std::uint64_t>> r(n_, std::vector<std::uint64_t>(n_));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) r[i][j] = at(i, j);
    return r;
  }

 private:
  std::size_t n_;
  std::vector<std::uint64_t> cells_;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::string> predictions, std::span<const std::string> golds,
                                        const std::vector<std::string>& classes) {
  if (predictions.size() != golds.size())
    throw LengthMismatch("predictions (" + std::to_string(predictions.size()) + ") and golds (" +
                         std::to_string(golds.size()) + ") differ in length");
  auto index = [&](const std::string& label) {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw UnknownLabel("label '" + label + "' not among the scored classes");
    return static_cast<std::size_t>(it - classes.begin());
  };
  ConfusionMatrix m(classes.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) m.add(index(golds[i]), index(predictions[i]));
  return m;
}

inline double macro_f1(std::span<const std::string> predictions, std::span<const std::string> golds,
                       const std::vector<std::string>& classes) {
  return confusion_matrix(predictions, golds, classes).macro_f1();
}

// ---------------------------------------------------------------------------
// Cost accounting with exact rational arithmetic.

class Rational {
 public:
  Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1) {
    if (den == 0) throw Error("rational with zero denominator");
    assign(static_cast<__int128>(num), static_cast<__int128>(den));
  }

  // Parses "12", "2.50", "-0.125" exactly.
  static Rational parse_decimal(std::string_view text) {
    const auto s = detail::trim(text);
    if (s.empty()) throw ConfigError("empty decimal");
    bool negative = false;
    std::size_t i = 0;
    if (s[0] == '-' || s[0] == '+') {
      negative = s[0] == '-';
      ++i;
    }
    __int128 num = 0;
    __int128 den = 1;
    bool dot = false;
    bool digits = false;
    for (; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '.' && !dot) {
        dot = true;
        continue;
      }
      if (c < '0' || c > '9') throw ConfigError("not a decimal number: '" + s + "'");
      digits = true;
      num = num * 10 + (c - '0');
      if (dot) den *= 10;
      if (num > kLimit || den > kLimit) throw ConfigError("decimal has too many digits: '" + s + "'");
    }
    if (!digits) throw ConfigError("not a decimal number: '" + s + "'");
    Rational r;
    r.assign(negative ? -num : num, den);
    return r;
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  friend Rational operator+(const Rational& a, const Rational& b) {
    Rational r;
    r.assign(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
             static_cast<__int128>(a.den_) * b.den_);
    return r;
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    Rational r;
    r.assign(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
    return r;
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  bool operator==(const Rational&) const = default;

  // Exact decimal when the denominator divides a power of ten, otherwise "p/q".
  std::string to_string() const {
    std::int64_t den = den_;
    int twos = 0;
    int fives = 0;
    while (den % 2 == 0) {
      den /= 2;
      ++twos;
    }
    while (den % 5 == 0) {
      den /= 5;
      ++fives;
    }
    if (den != 1) return std::to_string(num_) + "/" + std::to_string(den_);
    const int digits = std::max(twos, fives);
    __int128 scaled = static_cast<__int128>(num_);
    __int128 mult = 1;
    for (int i = 0; i < digits; ++i) mult *= 10;
    scaled = scaled * (mult / den_);
    const bool negative = scaled < 0;
    if (negative) scaled = -scaled;
    std::string s;
    do {
      s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(scaled % 10)));
      scaled /= 10;
    } while (scaled > 0);
    while (static_cast<int>(s.size()) <= digits) s.insert(s.begin(), '0');
    if (digits > 0) s.insert(s.end() - digits, '.');
    return (negative ? "-" : "") + s;
  }

 private:
  static constexpr __int128 kLimit = static_cast<__int128>(INT64_MAX);

  void assign(__int128 num, __int128 den) {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    __int128 a = num < 0 ? -num : num;
    __int128 b = den;
    while (b != 0) {
      const auto t = a % b;
      a = b;
      b = t;
    }
    const __int128 g = a == 0 ? 1 : a;
    num /= g;
    den /= g;
    if (num > kLimit || num < -kLimit || den > kLimit) throw Error("rational overflow in cost accounting");
    num_ = static_cast<std::int64_t>(num);
    den_ = static_cast<std::int64_t>(den);
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

struct ModelRates {
  Rational input_per_token;
  Rational output_per_token;
};

// Model name -> per-token rates. Files give USD per million tokens:
//   {"models": {"gpt-4o": {"input_per_million": "2.50", "output_per_million": "10.00"}}}
class PriceTable {
 public:
  void set(std::string model, ModelRates rates) { rates_[std::move(model)] = rates; }

  const ModelRates& at(const std::string& model) const {
    auto it = rates_.find(model);
    if (it == rates_.end()) throw UnknownModel("no price for model '" + model + "'");
    return it->second;
  }

  static PriceTable from_json(const nlohmann::json& j) {
    auto decimal = [](const nlohmann::json& v) {
      if (v.is_string()) return Rational::parse_decimal(v.get<std::string>());
      if (v.is_number()) return Rational::parse_decimal(v.dump());
      throw ConfigError("price must be a decimal string or number");
    };
    const Rational per_million(1, 1'000'000);
    PriceTable t;
    for (const auto& [model, r] : j.at("models").items())
      t.set(model, {decimal(r.at("input_per_million")) * per_million, decimal(r.at("output_per_million")) * per_million});
    return t;
  }

  static PriceTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read price table " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

 private:
  std::map<std::string, ModelRates> rates_;
};

struct CostReport {
  std::map<std::string, Rational> per_model;
  std::map<std::string, Rational> per_phase;
  Rational total;
};

inline CostReport cost_report(const UsageTotals& usage, const PriceTable& prices) {
  CostReport r;
  for (const auto& [model, phases] : usage.by_model()) {
    const auto& rates = prices.at(model);
    for (const auto& [phase, count] : phases) {
      const Rational cost = Rational(static_cast<std::int64_t>(count.input)) * rates.input_per_token +
                            Rational(static_cast<std::int64_t>(count.output)) * rates.output_per_token;
      r.per_model[model] += cost;
      r.per_phase[std::string(to_string(phase))] += cost;
      r.total += cost;
    }
  }
  return r;
}

inline nlohmann::json to_json(const CostReport& c) {
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [m, v] : c.per_model) models[m] = v.to_string();
  nlohmann::json phases = nlohmann::json::object();
  for (const auto& [p, v] : c.per_phase) phases[p] = v.to_string();
  return {{"total_usd", c.total.to_string()}, {"per_model", models}, {"per_phase", phases}};
}

// ---------------------------------------------------------------------------
// Corpus runs

struct ItemResult {
  std::string id;
  std::optional<Verdict> verdict;
  std::size_t iterations = 0;
  UsageTotals usage;
  std::string error;         // non-empty when the item errored
  std::string error_kind;    // "backend_unavailable" | "replay_miss"
  std::string replay_digest;
  EpisodeLog log;
};

struct MetricsReport {
  std::size_t items = 0;
  std::size_t scored = 0;
  std::size_t errored = 0;
  std::size_t unlabeled = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double binary_accuracy = 0.0;
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::uint64_t>> confusion;
  double mean_iterations = 0.0;
  UsageTotals usage;
  std::optional<CostReport> cost;
};

inline std::string format_fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// Folds per-item results in corpus order.
inline MetricsReport compute_metrics(const std::vector<NewsItem>& corpus, const std::vector<ItemResult>& results,
                                     const LabelSet& labels, const PriceTable* prices = nullptr) {
  MetricsReport m;
  m.items = corpus.size();
  for (const auto& l : labels.labels()) m.classes.push_back(l.benchmark_name);
  ConfusionMatrix cm(labels.size());
  std::size_t binary_hits = 0;
  std::size_t iterations = 0;
  std::size_t completed = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = results.at(i);
    m.usage.merge(r.usage);
    if (!r.verdict) {
      ++m.errored;
      continue;
    }
    ++completed;
    iterations += r.iterations;
    if (!corpus[i].gold_multiclass) {
      ++m.unlabeled;
      continue;
    }
    ++m.scored;
    cm.add(labels.index_of(*corpus[i].gold_multiclass), labels.index_of(r.verdict->multiclass));
    if (corpus[i].gold_binary && *corpus[i].gold_binary == r.verdict->binary) ++binary_hits;
  }
  m.accuracy = cm.accuracy();
  m.macro_f1 = cm.macro_f1();
  m.binary_accuracy = m.scored == 0 ? 0.0 : static_cast<double>(binary_hits) / static_cast<double>(m.scored);
  m.per_class = cm.per_class(m.classes);
  m.confusion = cm.rows();
  m.mean_iterations = completed == 0 ? 0.0 : static_cast<double>(iterations) / static_cast<double>(completed);
  if (prices != nullptr) m.cost = cost_report(m.usage, *prices);
  return m;
}

inline nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : m.per_class)
    per_class.push_back({{"label", c.label},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support},
                         {"absent", c.absent}});
  nlohmann::json j = {{"items", m.items},
                      {"scored", m.scored},
                      {"errored", m.errored},
                      {"unlabeled", m.unlabeled},
                      {"accuracy", m.accuracy},
                      {"macro_f1", m.macro_f1},
                      {"binary_accuracy", m.binary_accuracy},
                      {"classes", m.classes},
                      {"per_class", per_class},
                      {"confusion", m.confusion},
                      {"mean_iterations", m.mean_iterations},
                      {"usage", to_json(m.usage)}};
  if (m.cost) j["cost"] = to_json(*m.cost);
  return j;
}

inline std::string format_table(const MetricsReport& m) {
  std::ostringstream os;
  os << "items " << m.items << "  scored " << m.scored << "  errored " << m.errored;
  if (m.unlabeled) os << "  unlabeled " << m.unlabeled;
  os << "\n";
  os << "accuracy        " << format_fixed(m.accuracy, 4) << "\n";
  os << "macro-F1        " << format_fixed(m.macro_f1, 4) << "\n";
  os << "binary accuracy " << format_fixed(m.binary_accuracy, 4) << "\n";
  os << "iterations      " << format_fixed(m.mean_iterations, 2) << "\n";
  const auto t = m.usage.total();
  os << "tokens          " << t.input << " in / " << t.output << " out over " << t.calls << " calls\n";
  if (m.cost) os << "cost (USD)      " << m.cost->total.to_string() << "\n";
  os << "\nclass                              precision  recall  f1      support\n";
  for (const auto& c : m.per_class) {
    std::string name = c.label + (c.absent ? " (absent)" : "");
    name.resize(std::max<std::size_t>(name.size(), 34), ' ');
    os << name << " " << format_fixed(c.precision, 4) << "     " << format_fixed(c.recall, 4) << "  "
       << format_fixed(c.f1, 4) << "  " << c.support << "\n";
  }
  os << "\nconfusion (rows gold, columns predicted)\n";
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    os << "  ";
    for (auto v : m.confusion[i]) os << std::setw(6) << v;
    os << "   " << m.classes[i] << "\n";
  }
  return os.str();
}

inline nlohmann::json verdict_record(const ItemResult& r, const LabelSet& labels) {
  nlohmann::json j = {{"id", r.id}, {"iterations", r.iterations}, {"usage", to_json(r.usage)}};
  if (r.verdict) {
    const auto verdict = to_json(*r.verdict, labels);
    for (const auto& [k, v] : verdict.items()) j[k] = v;
  } else {
    j["error"] = r.error;
    j["error_kind"] = r.error_kind;
    if (!r.replay_digest.empty()) j["replay_digest"] = r.replay_digest;
  }
  return j;
}

inline ItemResult run_item(const Engine& engine, const NewsItem& item) {
  ItemResult r;
  r.id = item.id;
  try {
    auto ep = engine.run_episode(item);
    r.verdict = ep.verdict;
    r.iterations = ep.log.iterations.size();
    r.usage = ep.log.usage_totals();
    r.log = std::move(ep.log);
  } catch (const ReplayMiss& e) {
    r.error = e.what();
    r.error_kind = "replay_miss";
    r.replay_digest = e.digest();
  } catch (const BackendUnavailable& e) {
    r.error = e.what();
    r.error_kind = "backend_unavailable";
  }
  return r;
}

struct BenchResult {
  MetricsReport metrics;
  std::vector<ItemResult> items;
};

// Runs every item with at most `parallelism` concurrent episodes; results
// are folded in corpus order so output does not depend on scheduling.
inline BenchResult run_benchmark(const std::vector<NewsItem>& corpus, const Engine& engine, std::size_t parallelism,
                                 const PriceTable* prices = nullptr) {
  BenchResult out;
  out.items.resize(corpus.size());
  const auto workers = std::max<std::size_t>(1, std::min(parallelism, corpus.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) out.items[i] = run_item(engine, corpus[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (auto i = next++; i < corpus.size(); i = next++) out.items[i] = run_item(engine, corpus[i]);
      });
    for (auto& t : pool) t.join();
  }
  out.metrics = compute_metrics(corpus, out.items, engine.labels(), prices);
  return out;
}

}  // namespace veritree
