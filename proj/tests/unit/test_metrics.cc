#include <doctest.h>

#include <filesystem>
#include <random>

#include <json.hpp>

#include "../support/oracles.h"
#include "gebc/error.h"
#include "gebc/metrics.h"

using namespace gebc;
using namespace gebc::metrics;

namespace {

TokenizedCaption tc(std::vector<std::string> t) { return {std::move(t), ""}; }

std::vector<std::string> random_tokens(std::mt19937_64& rng, int max_len, int vocab) {
  std::uniform_int_distribution<int> len(0, max_len), word(0, vocab - 1);
  std::vector<std::string> out(static_cast<size_t>(len(rng)));
  for (auto& w : out) w = "w" + std::to_string(word(rng));
  return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and strips punctuation") {
  CHECK(tokenize("The dog runs.").tokens == std::vector<std::string>{"the", "dog", "runs"});
  CHECK(tokenize("").tokens.empty());
  CHECK(tokenize("  \t\n").tokens.empty());
  CHECK(tokenize("a,b;c").tokens == std::vector<std::string>{"a", "b", "c"});
  CHECK(tokenize("It's  OK!").tokens == std::vector<std::string>{"it", "s", "ok"});
  CHECK(tokenize("The dog").source == "The dog");
}

TEST_CASE("tokenize is idempotent on punctuation-free text") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_tokens(rng, 8, 20);
    std::string joined;
    for (const auto& w : t) joined += w + " ";
    CHECK(tokenize(joined).tokens == t);
  }
}

TEST_CASE("rouge_l worked examples") {
  CHECK(rouge_l(tc({"a", "b", "c"}), {tc({"a", "b", "c"})}) == doctest::Approx(1.0));
  CHECK(rouge_l(tc({"a", "b"}), {tc({"c", "d"})}) == 0.0);
  CHECK(rouge_l(tc({"the", "cat", "sat"}), {tc({"the", "cat", "ran"})}) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(rouge_l(tc({}), {tc({"a"})}) == 0.0);
  CHECK(rouge_l(tc({"a"}), {tc({})}) == 0.0);
  CHECK_THROWS_AS(rouge_l(tc({"a"}), {}), EmptyCorpus);
}

TEST_CASE("rouge_l properties") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_tokens(rng, 8, 6);
    const auto b = random_tokens(rng, 8, 6);
    const double s = rouge_l(tc(a), {tc(b)});
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-12);
    CHECK(s == doctest::Approx(oracle::brute_rouge_l(a, {b})).epsilon(1e-12));
    if (a.size() == b.size()) CHECK(rouge_l(tc(b), {tc(a)}) == doctest::Approx(s));
    const auto extra = random_tokens(rng, 8, 6);
    CHECK(rouge_l(tc(a), {tc(b), tc(extra)}) >= s);
  }
}

TEST_CASE("lcs_length matches subsequence enumeration") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_tokens(rng, 9, 4);
    const auto b = random_tokens(rng, 9, 4);
    CHECK(lcs_length(a, b) == oracle::brute_lcs(a, b));
  }
}

TEST_CASE("cider degenerate cases") {
  // One document: every idf is ln(1/1) = 0.
  CHECK(cider({{"x", tc({"a", "b"})}}, {{"x", {tc({"a", "b"})}}}).corpus == 0.0);
  const auto r = cider({{"x", tc({})}, {"y", tc({"c"})}},
                       {{"x", {tc({"a", "b"})}}, {"y", {tc({"c"})}}});
  CHECK(r.per_id.at("x") == 0.0);
  CHECK(r.per_id.at("y") > 0.0);
  CHECK_THROWS_AS(cider({}, {}), EmptyCorpus);
  CHECK_THROWS_AS(cider({{"x", tc({"a"})}}, {{"x", {}}}), EmptyCorpus);
  CHECK_THROWS_AS(cider({{"x", tc({"a"})}}, {{"y", {tc({"a"})}}}), MissingPrediction);
}

TEST_CASE("cider matches the brute-force oracle on random corpora") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<int> ids(1, 10), nrefs(1, 3);
    std::map<std::string, TokenizedCaption> cands;
    std::map<std::string, std::vector<TokenizedCaption>> refs;
    std::map<std::string, oracle::Tokens> ocands;
    std::map<std::string, std::vector<oracle::Tokens>> orefs;
    const int n = ids(rng);
    for (int i = 0; i < n; ++i) {
      const std::string id = "id" + std::to_string(i);
      ocands[id] = random_tokens(rng, 8, 6);
      cands[id] = tc(ocands[id]);
      const int k = nrefs(rng);
      for (int j = 0; j < k; ++j) {
        orefs[id].push_back(random_tokens(rng, 8, 6));
        refs[id].push_back(tc(orefs[id].back()));
      }
    }
    const auto got = cider(cands, refs);
    const auto want = oracle::brute_cider(ocands, orefs);
    double mean = 0.0;
    for (const auto& [id, v] : want) {
      CHECK(std::abs(got.per_id.at(id) - v) <= 1e-9);
      CHECK(got.per_id.at(id) >= 0.0);
      mean += v / want.size();
    }
    CHECK(std::abs(got.corpus - mean) <= 1e-9);
  }
}

TEST_CASE("aggregate reproduces the published AVG arithmetic") {
  auto same = [](double s, double r, double c) {
    MetricScores m{s, r, c};
    return std::array<MetricScores, 3>{m, m, m};
  };
  const auto a = aggregate(same(34.76, 41.93, 151.72));
  REQUIRE(a.avg.has_value());
  CHECK(round_half_up(*a.avg) == doctest::Approx(76.14).epsilon(1e-12));
  CHECK(std::abs(*a.avg - 76.14) <= 0.005);
  const auto b = aggregate(same(34.65, 42.28, 152.94));
  CHECK(round_half_up(*b.avg) == doctest::Approx(76.62).epsilon(1e-12));
  CHECK(aggregate(same(12.5, 12.5, 12.5)).avg.value() == doctest::Approx(12.5));
  CHECK_FALSE(aggregate(same(34.76, 41.93, 151.72)).avg_no_spice.has_value());
}

TEST_CASE("aggregate averages per type and drops AVG without SPICE") {
  std::array<MetricScores, 3> per{MetricScores{std::nullopt, 30, 90},
                                  MetricScores{std::nullopt, 40, 120},
                                  MetricScores{std::nullopt, 50, 150}};
  const auto r = aggregate(per);
  CHECK(r.overall.rouge_l == doctest::Approx(40));
  CHECK(r.overall.cider == doctest::Approx(120));
  CHECK_FALSE(r.avg.has_value());
  CHECK(r.avg_no_spice.value() == doctest::Approx(80));
}

TEST_CASE("round_half_up") {
  CHECK(round_half_up(76.1366666) == doctest::Approx(76.14));
  CHECK(round_half_up(1.005) == doctest::Approx(1.01));
  CHECK(round_half_up(2.675) == doctest::Approx(2.68));
  CHECK(round_half_up(0.004) == 0.0);
}

namespace {

std::vector<VideoRecord> two_videos() {
  VideoRecord a{"a", 10.0, 20, {}};
  a.boundaries.push_back({"a0", 3.0, {0, 6}, false, {"a man", "standing still", "running fast"}});
  a.boundaries.push_back({"a1", 6.0, {3, 10}, false, {"a dog", "sitting down", "jumping up"}});
  VideoRecord b{"b", 8.0, 16, {}};
  b.boundaries.push_back({"b0", 4.0, {0, 8}, false, {"a girl", "holding a ball", "throws it"}});
  return {a, b};
}

Predictions self_predictions(const std::vector<VideoRecord>& records) {
  Predictions p;
  for (const auto& r : records) {
    for (const auto& b : r.boundaries) p[{r.video_id, b.boundary_id}] = b.captions;
  }
  return p;
}

}  // namespace

TEST_CASE("evaluate on self predictions gives full ROUGE-L") {
  const auto records = two_videos();
  const auto ev = evaluate(self_predictions(records), records);
  for (const auto& s : ev.report.per_type) CHECK(s.rouge_l == doctest::Approx(100.0));
  CHECK(ev.breakdown.size() == 9);
  CHECK(ev.report.avg_no_spice.has_value());
  const auto with_spice = evaluate(self_predictions(records), records, std::array{10.0, 20.0, 30.0});
  CHECK(with_spice.report.overall.spice.value() == doctest::Approx(20.0));
  CHECK(with_spice.report.avg.has_value());
}

TEST_CASE("evaluate names missing predictions") {
  const auto records = two_videos();
  auto p = self_predictions(records);
  p.erase({"a", "a1"});
  try {
    evaluate(p, records);
    FAIL("expected MissingPrediction");
  } catch (const MissingPrediction& e) {
    CHECK(std::string(e.what()).find("a/a1") != std::string::npos);
  }
}

TEST_CASE("evaluate ignores prediction file order") {
  const auto records = two_videos();
  auto p = self_predictions(records);
  p[{"a", "a0"}].subject = "a woman";
  const std::string text = serialize_predictions(p);
  // Reverse the data lines.
  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos < text.size()) {
    const size_t end = text.find('\n', pos);
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  std::string shuffled = lines[0] + "\n";
  for (size_t i = lines.size() - 1; i >= 1; --i) shuffled += lines[i] + "\n";
  const auto r1 = report_json(evaluate(parse_predictions(text), records).report);
  const auto r2 = report_json(evaluate(parse_predictions(shuffled), records).report);
  CHECK(r1 == r2);
}

TEST_CASE("predictions file round trip and validation") {
  Predictions p;
  p[{"v1", "b1"}] = {"a tab\there", "x", "y"};
  p[{"v0", "b0"}] = {"s", "", "z"};
  const auto back = parse_predictions(serialize_predictions(p));
  CHECK(back.at({"v0", "b0"}) == p.at({"v0", "b0"}));
  CHECK(back.at({"v1", "b1"}).subject == "a tab here");
  CHECK(serialize_predictions({}) ==
        "video_id\tboundary_id\tsubject\tstatus_before\tstatus_after\n");
  CHECK_THROWS_AS(parse_predictions("bad header\n"), MalformedAnnotation);
  CHECK_THROWS_AS(parse_predictions(""), MalformedAnnotation);
  CHECK_THROWS_AS(
      parse_predictions("video_id\tboundary_id\tsubject\tstatus_before\tstatus_after\na\tb\tc\n"),
      MalformedAnnotation);
  CHECK_THROWS_AS(parse_predictions("video_id\tboundary_id\tsubject\tstatus_before\tstatus_"
                                    "after\na\tb\tc\td\te\na\tb\tc\td\te\n"),
                  MalformedAnnotation);
}

TEST_CASE("report json uses two-decimal values") {
  MetricScores m{34.764, 41.926, 151.7249};
  const auto j = nlohmann::json::parse(report_json(aggregate({m, m, m})));
  CHECK(j["overall"]["spice"].get<double>() == doctest::Approx(34.76));
  CHECK(j["overall"]["rouge_l"].get<double>() == doctest::Approx(41.93));
  CHECK(j["avg"].get<double>() == doctest::Approx(76.14));
  CHECK_FALSE(j.contains("avg_no_spice"));
}

TEST_CASE("read_spice") {
  const auto dir = std::filesystem::temp_directory_path() / "gebc_spice_test";
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "ok.json", R"({"subject": 1.5, "before": 2, "after": 3})");
  const auto s = read_spice(dir / "ok.json");
  CHECK(s[0] == 1.5);
  CHECK(s[2] == 3.0);
  write_file_atomic(dir / "bad.json", R"({"subject": 1.5})");
  CHECK_THROWS_AS(read_spice(dir / "bad.json"), MalformedAnnotation);
  std::filesystem::remove_all(dir);
}
