#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "plato/evalkit/harness.hpp"
#include "plato/evalkit/metrics.hpp"
#include "test_support.hpp"

namespace plato::evalkit {
namespace {

// Scorer that reads the score off the candidate text ("s=<value>").
double text_score(const std::vector<std::string>&, const std::string& response) {
  return std::stod(response.substr(2));
}

LabeledCandidateSet set_of(std::vector<double> scores, std::vector<int> labels) {
  LabeledCandidateSet s;
  s.context = {"c"};
  for (double x : scores) s.candidates.push_back("s=" + std::to_string(x));
  s.labels = std::move(labels);
  return s;
}

TEST(DistinctN, HandFixture) {
  const std::vector<std::string> r{"a b a", "b c"};
  EXPECT_NEAR(distinct_n(r, 1), 0.6, 1e-12);
  EXPECT_NEAR(distinct_n(r, 2), 0.6, 1e-12);
  EXPECT_EQ(distinct_n(r, 1), 3.0 / 5.0);
  EXPECT_EQ(distinct_n(r, 2), 3.0 / 5.0);
}

TEST(DistinctN, EdgeCasesAndReorder) {
  EXPECT_EQ(distinct_n({"hello"}, 1), 1.0);
  EXPECT_EQ(distinct_n({"x y", "x y", "x y"}, 1), 2.0 / 6.0);
  EXPECT_EQ(distinct_n({"  a\tb  ", "b"}, 1), 2.0 / 3.0);
  // The bigram "b c" across the boundary of "a b" | "c" is not counted.
  EXPECT_EQ(distinct_n({"a b", "c"}, 2), 1.0 / 3.0);
  EXPECT_THROW(distinct_n({}, 1), ContractViolation);
  EXPECT_THROW(distinct_n({"one", "two"}, 2), ContractViolation);

  std::vector<std::string> r{"the cat sat", "a dog ran far", "the cat ran", "so it goes"};
  const double d1 = distinct_n(r, 1), d2 = distinct_n(r, 2);
  std::sort(r.begin(), r.end());
  do {
    EXPECT_EQ(distinct_n(r, 1), d1);
    EXPECT_EQ(distinct_n(r, 2), d2);
  } while (std::next_permutation(r.begin(), r.end()));
}

TEST(Ranking, HandFixtures) {
  auto perfect = aggregate({{1, 0}});
  EXPECT_EQ(perfect.map, 1.0);
  EXPECT_EQ(perfect.mrr, 1.0);
  EXPECT_EQ(perfect.p_at_1, 1.0);

  const auto two = aggregate({{1, 0}, {0, 1}});
  EXPECT_NEAR(two.map, 0.75, 1e-12);
  EXPECT_NEAR(two.mrr, 0.75, 1e-12);
  EXPECT_NEAR(two.p_at_1, 0.5, 1e-12);

  // AP of [0,1,0,1] = (1/2 + 2/4)/2; AP of [1,0,1] = (1 + 2/3)/2.
  const auto q = query_metrics({0, 1, 0, 1});
  EXPECT_NEAR(q.ap, 0.5, 1e-12);
  EXPECT_NEAR(q.rr, 0.5, 1e-12);
  EXPECT_EQ(q.p_at_1, 0.0);
  EXPECT_NEAR(query_metrics({1, 0, 1}).ap, 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(query_metrics({0, 0, 0, 1}).rr, 0.25, 1e-12);
}

TEST(Ranking, ScorerSortIsStableAndSkipsUnlabeledSets) {
  // Ties keep original order, so the negative listed first wins the tie.
  const auto m = ranking_metrics({set_of({0.5, 0.5}, {0, 1}), set_of({0.9, 0.1}, {1, 0}), set_of({0.3}, {0})},
                                 text_score);
  EXPECT_EQ(m.sets, 2u);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_NEAR(m.map, 0.75, 1e-12);
  EXPECT_NEAR(m.p_at_1, 0.5, 1e-12);
  EXPECT_EQ(ranked_labels({1, 3, 3, 2}, {0, 1, 0, 1}), (std::vector<int>{1, 0, 1, 0}));
  EXPECT_THROW(ranking_metrics({set_of({0.3}, {0})}, text_score), ContractViolation);
}

TEST(Ranking, PropertiesOnRandomSets) {
  RngStream rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LabeledCandidateSet> sets;
    for (int s = 0; s < 5; ++s) {
      std::vector<double> scores;
      std::vector<int> labels;
      const std::size_t n = 1 + rng.below(6);
      for (std::size_t i = 0; i < n; ++i) {
        scores.push_back(std::round(rng.uniform() * 8.0) / 8.0);
        labels.push_back(int(rng.below(2)));
      }
      labels[rng.below(n)] = 1;
      sets.push_back(set_of(scores, labels));
    }
    const auto m = ranking_metrics(sets, text_score);
    EXPECT_LE(m.p_at_1, m.mrr + 1e-15);
    for (double v : {m.map, m.mrr, m.p_at_1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const auto t = ranking_metrics(sets, [](const auto& c, const auto& r) { return std::exp(3.0 * text_score(c, r)) - 7.0; });
    EXPECT_EQ(t.map, m.map);
    EXPECT_EQ(t.mrr, m.mrr);
    EXPECT_EQ(t.p_at_1, m.p_at_1);
  }
}

TEST(Ranking, RandomScorerPrecisionMatchesPositiveRate) {
  // Sets of 4 candidates with 1 positive: random P@1 has mean 1/4.
  RngStream rng(3);
  std::vector<LabeledCandidateSet> sets;
  for (int i = 0; i < 4000; ++i) {
    auto s = set_of({0, 0, 0, 0}, {0, 0, 0, 0});
    s.labels[rng.below(4)] = 1;
    sets.push_back(s);
  }
  const auto m = ranking_metrics(sets, [&](const auto&, const auto&) { return rng.uniform(); });
  EXPECT_NEAR(m.p_at_1, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 4000.0));
}

TEST(CompareScorers, RowsTableAndRecords) {
  const std::vector<LabeledCandidateSet> sets{set_of({0.9, 0.1}, {1, 0}), set_of({0.2, 0.7}, {1, 0})};
  const auto rows = compare_scorers(sets, {{"forward", text_score}, {"again", text_score},
                                           {"negated", [](const auto& c, const auto& r) { return -text_score(c, r); }}});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].metrics.map, rows[1].metrics.map);
  EXPECT_EQ(rows[0].metrics.p_at_1, 0.5);
  EXPECT_EQ(rows[2].metrics.p_at_1, 0.5);
  EXPECT_EQ(format_table(rows),
            "scorer      MAP     MRR     P@1\n"
            "forward  0.7500  0.7500  0.5000\n"
            "again    0.7500  0.7500  0.5000\n"
            "negated  0.7500  0.7500  0.5000\n");
  EXPECT_EQ(row_record(rows[0]).dump(),
            R"({"scorer":"forward","map":0.75,"mrr":0.75,"p_at_1":0.5,"sets":2,"skipped":0})");
}

TEST(CandidateSets, JsonlRoundTripAndErrors) {
  const std::vector<LabeledCandidateSet> sets{set_of({0.1, 0.2}, {0, 1}), set_of({0.4}, {1})};
  std::stringstream io;
  write_sets(io, sets);
  const auto back = read_sets(io);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].candidates, sets[0].candidates);
  EXPECT_EQ(back[0].labels, sets[0].labels);
  EXPECT_EQ(back[1].context, sets[1].context);
  std::stringstream bad(R"({"context":["c"],"candidates":[{"text":"x","label":2}]})");
  EXPECT_THROW(read_sets(bad), MalformedInput);
  std::stringstream broken("{not json\n");
  EXPECT_THROW(read_sets(broken), MalformedInput);
}

TEST(Benchmark, DistractorsFirstThenPositives) {
  training::SyntheticConfig cfg;
  cfg.template_pool = 6;
  cfg.generic_repeats = 3;
  cfg.holdout_per_context = 2;
  const auto corpus = training::make_synthetic(cfg);
  const auto sets = make_selection_benchmark(corpus);
  ASSERT_EQ(sets.size(), 20u);
  for (const auto& s : sets) {
    ASSERT_EQ(s.candidates.size(), 4u);
    EXPECT_EQ(s.labels, (std::vector<int>{0, 0, 1, 1}));
    EXPECT_EQ(s.candidates[0], corpus.generic_response);
    EXPECT_EQ(s.candidates[1], s.context.back());
  }
  cfg.holdout_per_context = 0;
  const auto train_sets = make_selection_benchmark(training::make_synthetic(cfg));
  EXPECT_EQ(train_sets.front().labels, (std::vector<int>{0, 0, 1, 1, 1, 1}));
}

TEST(Probe, UntrainedModelsAndHashCheck) {
  const auto raw = training::make_synthetic({4, 0, 4, 4}).train;
  const auto vocab = corpus::train_bpe(training::corpus_lines(raw), 60).vocab;
  auto cfg = testing::tiny_config(vocab.size(), 4);
  cfg.max_context = 20;
  cfg.max_response = 12;
  model::UnifiedTransformer<float> s1(cfg, 1), s2(cfg, 2);
  s1.set_all(0.0f);
  s2.set_all(0.0f);
  corpus::SequenceLimits limits;
  limits.max_context = cfg.max_context;
  limits.max_response = cfg.max_response;
  const auto samples = corpus::encode_samples(raw, vocab, limits);
  const auto p = one_to_many_probe(s1, s2, samples, RngStream(1));
  EXPECT_NEAR(p.stage1_nll, std::log(double(vocab.size())), 1e-5);
  EXPECT_NEAR(p.stage2_nll, std::log(double(vocab.size())), 1e-5);
  ASSERT_EQ(p.distinct_candidates.size(), 4u);
  for (auto d : p.distinct_candidates) {
    EXPECT_GE(d, 1u);
    EXPECT_LE(d, 4u);
  }

  model::UnifiedTransformer<float> r1(cfg, 1), r2(cfg, 2);
  auto ck1 = model::make_checkpoint(r1, "stage1", 0);
  auto ck2 = model::make_checkpoint(r2, "stage2-gen", 0);
  ck1.data_hash = ck2.data_hash = corpus::samples_hash(raw);
  const auto q = one_to_many_probe(ck1, ck2, raw, vocab, RngStream(1));
  EXPECT_EQ(q.distinct_candidates.size(), 4u);
  ck2.data_hash = "ffffffffffffffff";
  EXPECT_THROW(one_to_many_probe(ck1, ck2, raw, vocab, RngStream(1)), ConfigError);
  EXPECT_THROW(one_to_many_probe(ck2, ck1, raw, vocab, RngStream(1)), LoadError);
}

TEST(Probe, CorpusHashIsStable) {
  EXPECT_EQ(corpus::content_hash(""), "cbf29ce484222325");
  EXPECT_EQ(corpus::content_hash("a"), "af63dc4c8601ec8c");
  const auto raw = training::make_synthetic({}).train;
  auto changed = raw;
  changed[3].response += "!";
  EXPECT_EQ(corpus::samples_hash(raw), corpus::samples_hash(training::make_synthetic({}).train));
  EXPECT_NE(corpus::samples_hash(raw), corpus::samples_hash(changed));
}

}  // namespace
}  // namespace plato::evalkit
