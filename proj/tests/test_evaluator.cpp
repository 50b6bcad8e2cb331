#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scnaps/errors.hpp"
#include "scnaps/evaluator.hpp"
#include "support.hpp"

using namespace scnaps;
using namespace scnaps::evaluator;

namespace {

// An episode whose class k has shots[k] support examples and per-class
// query outcomes given as (label, predicted) pairs.
EpisodeResult episode(std::uint64_t seed, std::vector<int> shots, std::vector<std::pair<int, int>> queries) {
  EpisodeResult r;
  r.seed = seed;
  r.way = shots.size();
  r.shots = std::move(shots);
  std::size_t correct = 0;
  for (auto [label, predicted] : queries) {
    std::vector<double> probs(r.way, 0.0);
    probs[static_cast<std::size_t>(predicted)] = 1.0;
    r.queries.push_back({label, predicted, probs});
    correct += label == predicted;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(queries.size());
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("summary") {
  TEST_CASE("perfect and constant accuracies have zero width") {
    const std::vector<double> ones(50, 1.0);
    const auto s = summarize(ones);
    CHECK(s.mean == 1.0);
    CHECK(s.ci_halfwidth == 0.0);
    const std::vector<double> same(30, 0.4);
    CHECK(summarize(same).mean == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(summarize(same).ci_halfwidth == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  }

  TEST_CASE("600 Bernoulli(0.5) accuracies give a halfwidth near 4 points") {
    Rng rng(1);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> acc(600);
    for (double& a : acc) a = coin(rng) ? 1.0 : 0.0;
    const double expected = 1.96 * std::sqrt(0.25 / 600.0);
    CHECK(expected == doctest::Approx(0.040).epsilon(0.01));
    CHECK(std::abs(summarize(acc).ci_halfwidth - expected) <= 0.002);
  }

  TEST_CASE("matches an independent mean and standard deviation") {
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> acc(137);
    for (double& a : acc) a = u(rng);
    long double sum = 0, sq = 0;
    for (double a : acc) sum += a;
    const long double mean = sum / acc.size();
    for (double a : acc) sq += (a - mean) * (a - mean);
    const double ci = 1.96 * std::sqrt(static_cast<double>(sq / (acc.size() - 1))) / std::sqrt(137.0);
    const auto s = summarize(acc);
    CHECK(std::abs(s.mean - static_cast<double>(mean)) <= 1e-12);
    CHECK(std::abs(s.ci_halfwidth - ci) <= 1e-12);
    CHECK(s.count == 137);
  }
}

TEST_SUITE("curves") {
  TEST_CASE("single class with 3 shots, all correct") {
    const std::vector<EpisodeResult> r{episode(1, {3, 1}, {{0, 0}, {0, 0}, {1, 0}})};
    const auto pts = accuracy_by_shots(r, ShotGrouping::exact);
    REQUIRE(pts.size() == 2);
    CHECK(pts[1].group == "3");
    CHECK(pts[1].mean_accuracy == 1.0);
    CHECK(pts[1].count == 1);
    CHECK(pts[0].group == "1");
    CHECK(pts[0].mean_accuracy == 0.0);
  }

  TEST_CASE("classes with the same shot count average into one group") {
    const std::vector<EpisodeResult> r{episode(1, {2, 2}, {{0, 0}, {0, 1}, {1, 1}, {1, 1}})};
    const auto pts = accuracy_by_shots(r, ShotGrouping::exact);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].mean_accuracy == 0.75);
    CHECK(pts[0].count == 2);
  }

  TEST_CASE("shot buckets") {
    CHECK(shot_bucket(1) == "1-2");
    CHECK(shot_bucket(2) == "1-2");
    CHECK(shot_bucket(3) == "3-4");
    CHECK(shot_bucket(5) == "5-8");
    CHECK(shot_bucket(8) == "5-8");
    CHECK(shot_bucket(9) == "9-16");
    CHECK(shot_bucket(16) == "9-16");
    CHECK(shot_bucket(17) == "17+");
    CHECK(shot_bucket(400) == "17+");
    CHECK_THROWS_AS(shot_bucket(0), ConfigError);
    const std::vector<EpisodeResult> r{episode(1, {1, 20, 6}, {{0, 0}, {1, 1}, {2, 2}}),
                                       episode(2, {4, 2}, {{0, 1}, {1, 1}})};
    const auto pts = accuracy_by_shots(r);
    std::vector<std::string> groups;
    std::size_t total = 0;
    for (const auto& p : pts) {
      groups.push_back(p.group);
      total += p.count;
    }
    CHECK(groups == std::vector<std::string>{"1-2", "3-4", "5-8", "17+"});
    CHECK(total == 5);
  }

  TEST_CASE("ways: one group for uniform way, counts sum to the task count") {
    std::vector<EpisodeResult> r;
    for (int i = 0; i < 4; ++i) r.push_back(episode(i, {1, 1, 1, 1, 1}, {{0, 0}, {1, 2}}));
    auto pts = accuracy_by_ways(r);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].group == "5");
    CHECK(pts[0].mean_accuracy == 0.5);
    r.push_back(episode(9, {1, 1}, {{0, 0}}));
    pts = accuracy_by_ways(r);
    CHECK(pts.size() == 2);
    CHECK(pts[0].count + pts[1].count == 5);
    CHECK_THROWS_AS(accuracy_by_ways(std::vector<EpisodeResult>{}), ConfigError);
  }

  TEST_CASE("results and curves round-trip exactly") {
    testing::TempDir dir("curves");
    std::vector<EpisodeResult> r;
    Rng rng(3);
    for (std::uint64_t i = 0; i < 40; ++i) {
      std::vector<int> shots;
      std::vector<std::pair<int, int>> qs;
      const int way = 2 + static_cast<int>(i % 4);
      for (int k = 0; k < way; ++k) {
        shots.push_back(1 + static_cast<int>(uniform_int(rng, 0, 19)));
        for (int q = 0; q < 3; ++q) qs.push_back({k, static_cast<int>(uniform_int(rng, 0, way - 1))});
      }
      auto e = episode(derive_seed(7, i), shots, qs);
      for (auto& q : e.queries)
        for (auto& p : q.probabilities) p = p * 0.7 + 0.1 / 3.0;
      r.push_back(e);
    }
    write_results(r, dir / "r.jsonl");
    const auto back = read_results(dir / "r.jsonl");
    REQUIRE(back.size() == r.size());
    CHECK(back[5].seed == r[5].seed);
    CHECK(back[5].queries[1].probabilities == r[5].queries[1].probabilities);
    CHECK(back[5].accuracy == r[5].accuracy);

    const auto a = accuracy_by_shots(r);
    const auto b = accuracy_by_shots(back);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].mean_accuracy == b[i].mean_accuracy);
      CHECK(a[i].ci_halfwidth == b[i].ci_halfwidth);
    }
    write_curve_csv(a, dir / "shots.csv");
    const auto c = read_curve_csv(dir / "shots.csv");
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(c[i].group == a[i].group);
      CHECK(c[i].mean_accuracy == a[i].mean_accuracy);
      CHECK(c[i].count == a[i].count);
      CHECK(c[i].ci_halfwidth == a[i].ci_halfwidth);
    }
    CHECK(slurp(dir / "shots.csv").rfind("group,mean_accuracy,count,ci_halfwidth\n", 0) == 0);
  }

  TEST_CASE("malformed files name the line") {
    testing::TempDir dir("badcurve");
    std::ofstream(dir / "c.csv") << "group,mean_accuracy,count,ci_halfwidth\n1-2,0.5,3,0.1\n3-4,abc,3,0.1\n";
    try {
      read_curve_csv(dir / "c.csv");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::ofstream(dir / "r.jsonl") << "{\"seed\":1}\nnot json\n";
    CHECK_THROWS_AS(read_results(dir / "r.jsonl"), ConfigError);
  }
}

TEST_SUITE("ablation") {
  Evaluation eval_of(std::vector<std::uint64_t> seeds, double acc) {
    Evaluation e;
    std::vector<double> accs;
    for (auto s : seeds) {
      auto r = episode(s, {1, 1}, {{0, 0}});
      r.accuracy = acc;
      e.results.push_back(r);
      accs.push_back(acc);
    }
    e.summary = summarize(accs);
    return e;
  }

  TEST_CASE("a model against itself gives identical rows") {
    const auto e = eval_of({1, 2, 3}, 0.6);
    const std::vector<AblationEntry> entries{{"a", "fam", e}, {"b", "fam", e}};
    const auto t = ablation_table(entries);
    CHECK(t.variants == std::vector<std::string>{"a", "b"});
    CHECK(t.cells[0][0].mean == t.cells[1][0].mean);
    CHECK(t.cells[0][0].ci_halfwidth == t.cells[1][0].ci_halfwidth);
  }

  TEST_CASE("mismatched episode streams and missing cells are errors") {
    const std::vector<AblationEntry> mismatched{{"a", "fam", eval_of({1, 2, 3}, 0.5)},
                                                {"b", "fam", eval_of({1, 2, 4}, 0.5)}};
    CHECK_THROWS_AS(ablation_table(mismatched), ConfigError);
    const std::vector<AblationEntry> missing{{"a", "f1", eval_of({1, 2}, 0.5)},
                                             {"a", "f2", eval_of({3, 4}, 0.5)},
                                             {"b", "f1", eval_of({1, 2}, 0.5)}};
    CHECK_THROWS_AS(ablation_table(missing), ConfigError);
  }

  TEST_CASE("csv layout") {
    testing::TempDir dir("abl");
    const std::vector<AblationEntry> entries{{"mahalanobis", "iso", eval_of({1, 2}, 0.5)},
                                             {"l2", "iso", eval_of({1, 2}, 0.25)}};
    write_ablation_csv(ablation_table(entries), dir / "a.csv");
    CHECK(slurp(dir / "a.csv") == "variant,iso,iso_ci\nmahalanobis,0.5,0\nl2,0.25,0\n");
  }

  TEST_CASE("digests follow the episode seeds") {
    const auto a = eval_of({1, 2, 3}, 0.1);
    const auto b = eval_of({1, 2, 3}, 0.9);
    const auto c = eval_of({3, 2, 1}, 0.1);
    CHECK(episode_digest(a.results) == episode_digest(b.results));
    CHECK(episode_digest(a.results) != episode_digest(c.results));
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("paired evaluation of two models sees the same episodes") {
    data::SyntheticSpec spec;
    spec.dim = 4;
    spec.classes = 6;
    spec.examples_per_class = 10;
    const auto ds = data::generate_synthetic(spec);
    const episodes::EpisodeStream stream({{"s", &ds, ds.classes()}}, episodes::EpisodeProtocol::fixed(3, 2, 2), 20, 5);
    ModelConfig mc;
    mc.backbone.input_dim = 4;
    mc.backbone.blocks = 1;
    mc.backbone.width = 4;
    mc.backbone.embedding_dim = 3;
    const Model a(mc, 1);
    mc.head = heads::parse_head("l2");
    const Model b(mc, 1);
    const auto ea = evaluate(a, stream, 20);
    const auto eb = evaluate(b, stream, 20, 3);
    CHECK(episode_digest(ea.results) == episode_digest(eb.results));
    CHECK(ea.summary.count == 20);
    CHECK(evaluate(a, stream, 20, 4).summary.mean == ea.summary.mean);
    CHECK_THROWS_AS(evaluate(a, stream, 1), ConfigError);
    CHECK_THROWS_AS(evaluate(a, stream, 21), SamplingError);
    for (const auto& r : ea.results) {
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
    }
  }

  TEST_CASE("summary and parameter-count files") {
    testing::TempDir dir("sum");
    const std::vector<std::pair<std::string, Summary>> rows{{"iso", {0.5, 0.125, 600}}};
    write_summary_csv(rows, dir / "s.csv");
    CHECK(slurp(dir / "s.csv") == "family,mean_accuracy,ci_halfwidth,count\niso,0.5,0.125,600\n");
    write_param_counts_csv({10, 20, 0, 0, 30}, dir / "p.csv");
    CHECK(slurp(dir / "p.csv") == "component,count\nbackbone,10\nadaptation,20\nhead,0\nprojection,0\ntotal,30\n");
  }
}
