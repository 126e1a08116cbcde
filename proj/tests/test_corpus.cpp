#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/cleaning.hpp"
#include "plato/corpus/message_tree.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/numerics/rng.hpp"

namespace plato::corpus {
namespace {

MessageNode node(std::string id, std::optional<std::string> parent, std::string text,
                 std::int64_t ts = 0) {
  MessageNode n;
  n.id = std::move(id);
  n.parent_id = std::move(parent);
  n.text = std::move(text);
  n.timestamp = ts;
  return n;
}

MessageTree single(std::string text) {
  MessageTree t;
  t.nodes.push_back(node("root", std::nullopt, "what do you think about this"));
  t.nodes.push_back(node("x", "root", std::move(text)));
  return t;
}

std::optional<CleaningRule> rule_for(const std::string& text, const RuleConfig& cfg = {}) {
  auto r = clean_tree(single(text), cfg);
  if (r.report.nodes_after == 2) return std::nullopt;
  for (std::size_t i = 0; i < kRuleCount; ++i)
    if (r.report.removed_by_rule[i]) return static_cast<CleaningRule>(i);
  return std::nullopt;
}

TEST(Cleaning, RuleExamples) {
  EXPECT_EQ(rule_for("see http://x.co for details"), CleaningRule::kUrl);
  std::string text;
  while (text.size() < 1024) text += "abcd ";
  text.resize(1024);
  EXPECT_EQ(rule_for(text), std::nullopt);
  EXPECT_EQ(rule_for(text + "e"), CleaningRule::kLength);
  // 13 letters and 7 digits of 20 non-space characters: 65%
  EXPECT_EQ(rule_for("abcdefghijklm 1234567"), CleaningRule::kAlphabetic);
  EXPECT_EQ(rule_for("abcdefghijklmn 123456"), std::nullopt);  // 70% exactly survives
  EXPECT_EQ(rule_for("this word is " + std::string(31, 'z')), CleaningRule::kLength);
  EXPECT_EQ(rule_for("ask over on r/movies"), CleaningRule::kSpecialString);
  EXPECT_EQ(rule_for("fish &amp chips"), CleaningRule::kSpecialString);
  EXPECT_EQ(rule_for("what do you think about this"), CleaningRule::kParentOverlap);
}

TEST(Cleaning, ConfigDrivenRules) {
  RuleConfig cfg;
  cfg.offensive_words = {"darn"};
  cfg.known_bots = {"helperbot"};
  cfg.quarantined_channels = {"dark"};
  EXPECT_EQ(rule_for("well DARN it", cfg), CleaningRule::kOffensive);
  EXPECT_EQ(rule_for("darned good", cfg), std::nullopt);  // whole tokens only

  auto t = single("a normal reply here");
  t.nodes[1].author = "helperbot";
  EXPECT_EQ(clean_tree(t, cfg).report.removed_by_rule[size_t(CleaningRule::kBot)], 1u);
  t.nodes[1].author = "someone";
  t.nodes[1].channel = "dark";
  EXPECT_EQ(clean_tree(t, cfg).report.removed_by_rule[size_t(CleaningRule::kQuarantined)], 1u);
  t.nodes[1].channel = "ok";
  t.nodes[1].repeat_count = 101;
  EXPECT_EQ(clean_tree(t, cfg).report.removed_by_rule[size_t(CleaningRule::kRepeated)], 1u);
  t.nodes[1].repeat_count = 100;
  EXPECT_EQ(clean_tree(t, cfg).report.nodes_after, 2u);
}

TEST(Cleaning, TokenRuleNeedsCounter) {
  RuleConfig cfg;
  EXPECT_EQ(rule_for("hi", cfg), std::nullopt);
  cfg.token_count = [](const std::string& s) { return detail::whitespace_words(s).size(); };
  EXPECT_EQ(rule_for("hi", cfg), CleaningRule::kTokenCount);
  EXPECT_EQ(rule_for("hi there", cfg), std::nullopt);
  std::string long_text;
  for (int i = 0; i < 129; ++i) long_text += "w ";
  EXPECT_EQ(rule_for(long_text, cfg), CleaningRule::kTokenCount);
}

TEST(Cleaning, SubtreeRemovedAndCountedUnderAncestorRule) {
  MessageTree t;
  t.nodes.push_back(node("a", std::nullopt, "hello there friend"));
  t.nodes.push_back(node("b", "a", "link http://spam.co inside"));
  t.nodes.push_back(node("c", "b", "perfectly fine reply"));
  t.nodes.push_back(node("d", "c", "another fine reply"));
  t.nodes.push_back(node("e", "a", "a sibling that stays"));
  auto r = clean_tree(t, {});
  EXPECT_EQ(r.report.removed_by_rule[size_t(CleaningRule::kUrl)], 3u);
  ASSERT_EQ(r.tree.nodes.size(), 2u);
  EXPECT_EQ(r.tree.nodes[1].id, "e");
}

TEST(Cleaning, CyclicTreeIsMalformed) {
  MessageTree t;
  t.nodes.push_back(node("root", std::nullopt, "root text here"));
  t.nodes.push_back(node("a", "b", "a text here"));
  t.nodes.push_back(node("b", "a", "b text here"));
  EXPECT_THROW(clean_tree(t, {}), MalformedInput);
  std::istringstream in(R"({"id":"a","parent_id":"b","text":"x"}
{"id":"b","parent_id":"a","text":"y"})");
  EXPECT_THROW(read_message_trees(in), MalformedInput);
}

// Random trees: idempotence, count bookkeeping, and a clean re-scan.
TEST(Cleaning, PropertyInvariants) {
  const std::vector<std::string> texts{
      "i like that a lot",       "check www.site.org today", "123 456",
      "totally agree with you",  "r/askreddit is fun",       "no way that is true",
      "ok",                      "you darn fool",             "what about the sequel"};
  RuleConfig cfg;
  cfg.offensive_words = {"darn"};
  RngStream rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    MessageTree t;
    const std::size_t n = 1 + rng.below(25);
    for (std::size_t i = 0; i < n; ++i) {
      auto parent = i == 0 ? std::nullopt
                           : std::optional<std::string>(std::to_string(rng.below(i)));
      t.nodes.push_back(node(std::to_string(i), parent, texts[rng.below(texts.size())]));
      t.nodes.back().known_bot = rng.below(20) == 0;
    }
    auto once = clean_tree(t, cfg);
    EXPECT_EQ(once.report.total_removed(), once.report.nodes_before - once.report.nodes_after);
    auto twice = clean_tree(once.tree, cfg);
    EXPECT_EQ(twice.report.total_removed(), 0u);
    EXPECT_EQ(twice.tree.nodes.size(), once.tree.nodes.size());
    std::unordered_map<std::string, const MessageNode*> by_id;
    for (const auto& m : once.tree.nodes) by_id[m.id] = &m;
    for (const auto& m : once.tree.nodes) {
      const std::string* parent = m.parent_id ? &by_id.at(*m.parent_id)->text : nullptr;
      EXPECT_FALSE(first_violation(m, parent, cfg).has_value());
    }
    EXPECT_EQ(extract_pairs(once.tree).size(), once.tree.nodes.empty() ? 0 : once.tree.nodes.size() - 1);
  }
}

TEST(Cleaning, FixtureMatchesGolden) {
  std::ifstream in(std::string(PLATO_FIXTURE_DIR) + "/tree.jsonl");
  auto trees = read_message_trees(in);
  ASSERT_EQ(trees.size(), 3u);
  RuleConfig cfg;
  cfg.offensive_words = {"darn"};
  CleanReport total;
  std::vector<RawSample> samples;
  for (const auto& t : trees) {
    auto r = clean_tree(t, cfg);
    total += r.report;
    auto s = extract_pairs(r.tree);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  std::ifstream golden_counts(std::string(PLATO_FIXTURE_DIR) + "/clean_golden_counts.json");
  auto golden = nlohmann::json::parse(golden_counts);
  EXPECT_EQ(total.nodes_before, golden["nodes_before"].get<std::size_t>());
  EXPECT_EQ(total.nodes_after, golden["nodes_after"].get<std::size_t>());
  for (std::size_t i = 0; i < kRuleCount; ++i)
    EXPECT_EQ(total.removed_by_rule[i],
              golden["removed_by_rule"][std::string(kRuleNames[i])].get<std::size_t>())
        << kRuleNames[i];
  std::ifstream golden_samples(std::string(PLATO_FIXTURE_DIR) + "/clean_golden_samples.jsonl");
  EXPECT_EQ(samples, read_samples(golden_samples));
}

TEST(Pairs, Examples) {
  MessageTree t;
  t.nodes.push_back(node("A", std::nullopt, "a"));
  t.nodes.push_back(node("B", "A", "b"));
  t.nodes.push_back(node("C", "A", "c"));
  t.nodes.push_back(node("D", "B", "d"));
  auto s = extract_pairs(t);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].context, (std::vector<std::string>{"a"}));
  EXPECT_EQ(s[0].response, "b");
  EXPECT_EQ(s[1].context, (std::vector<std::string>{"a"}));
  EXPECT_EQ(s[1].response, "c");
  EXPECT_EQ(s[2].context, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s[2].response, "d");

  MessageTree lone;
  lone.nodes.push_back(node("A", std::nullopt, "a"));
  EXPECT_TRUE(extract_pairs(lone).empty());

  MessageTree chain;
  for (int i = 0; i < 4; ++i)
    chain.nodes.push_back(node(std::to_string(i),
                               i ? std::optional<std::string>(std::to_string(i - 1)) : std::nullopt,
                               "u" + std::to_string(i)));
  auto c = extract_pairs(chain);
  ASSERT_EQ(c.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(c[i].context.size(), i + 1);
}

TEST(Split, Chronological) {
  std::vector<RawSample> s;
  for (std::int64_t ts : {10, 20, 30, 40, 50}) s.push_back({{"c"}, "r", ts});
  auto [train, val] = chronological_split(s, 35);
  EXPECT_EQ(train.size(), 3u);
  EXPECT_EQ(val.size(), 2u);
  auto [none, all] = chronological_split(s, 0);
  EXPECT_TRUE(none.empty());
  EXPECT_EQ(all.size(), 5u);
  auto [every, empty] = chronological_split(s, 1000);
  EXPECT_EQ(every.size(), 5u);
  EXPECT_TRUE(empty.empty());

  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RawSample> mixed;
    for (int i = 0; i < 30; ++i) mixed.push_back({{"c"}, "r", std::int64_t(rng.below(100))});
    const auto cutoff = std::int64_t(rng.below(100));
    auto [tr, va] = chronological_split(mixed, cutoff);
    EXPECT_EQ(tr.size() + va.size(), mixed.size());
    for (const auto& a : tr)
      for (const auto& b : va) EXPECT_LT(a.timestamp, b.timestamp);
  }
}

TEST(Bpe, SingleCandidateMerge) {
  // "aaaa" -> a a a a</w>: pairs (a,a) x2 and (a,a</w>) x1
  auto r = train_bpe({"aaaa"}, Vocab::kNumSpecial + 2 + 1);
  ASSERT_EQ(r.vocab.merges().size(), 1u);
  EXPECT_EQ(r.vocab.merges()[0], (std::pair<std::string, std::string>{"a", "a"}));
}

TEST(Bpe, HandRunMergeSequence) {
  // words "abab" x2 -> a b a b</w>. Counts tie at 2 for ab, ba, ab</w>;
  // lexicographic order picks "ab". Then "ab</w>" beats "aba" ('<' < 'a'),
  // and finally "abab</w>".
  auto r = train_bpe({"abab abab"}, 100);
  EXPECT_FALSE(r.target_reached);
  const std::vector<std::pair<std::string, std::string>> expected{
      {"a", "b"}, {"a", "b</w>"}, {"ab", "ab</w>"}};
  EXPECT_EQ(r.vocab.merges(), expected);
  EXPECT_EQ(r.vocab.encode("abab").size(), 1u);
  EXPECT_EQ(r.vocab.decode(r.vocab.encode("abab abab")), "abab abab");
}

TEST(Bpe, DeterminismRoundTripAndIo) {
  std::vector<std::string> corpus{"the cat sat on the mat", "the dog sat on the log",
                                  "a cat and a dog met on a mat"};
  auto a = train_bpe(corpus, 34), b = train_bpe(corpus, 34);
  EXPECT_TRUE(a.target_reached);
  EXPECT_EQ(a.vocab.size(), 34u);
  EXPECT_EQ(a.vocab.merges(), b.vocab.merges());
  for (const auto& line : corpus) {
    auto ids = a.vocab.encode(line);
    EXPECT_EQ(a.vocab.decode(ids), line);
    EXPECT_EQ(a.vocab.encode(a.vocab.decode(ids)), ids);
    for (int id : ids) EXPECT_FALSE(Vocab::is_special(id));
  }
  std::stringstream buf;
  a.vocab.save(buf);
  auto loaded = Vocab::load(buf);
  EXPECT_EQ(loaded.size(), a.vocab.size());
  for (const auto& line : corpus) EXPECT_EQ(loaded.encode(line), a.vocab.encode(line));
  std::stringstream truncated(buf.str().substr(0, 30));
  EXPECT_THROW(Vocab::load(truncated), LoadError);
  EXPECT_THROW(train_bpe(corpus, 10), ContractViolation);
  EXPECT_EQ(a.vocab.encode("zebra")[0], Vocab::kUnknown);
}

Vocab word_vocab() {
  // every lowercase letter is a symbol; no merges, so one token per char
  std::vector<std::string> symbols;
  for (char c = 'a'; c <= 'z'; ++c) {
    symbols.emplace_back(1, c);
    symbols.push_back(std::string(1, c) + "</w>");
  }
  return Vocab(symbols, {});
}

TEST(EncodeSample, Truncation) {
  const auto vocab = word_vocab();
  RawSample raw{{"hi"}, std::string(200, 'x'), 5};
  auto s = encode_sample(raw, vocab);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->response.size(), 128u);
  EXPECT_EQ(s->context.size(), 1u);
  EXPECT_EQ(s->context[0].size(), 2u);

  // five utterances of 59 tokens (60 with separator): 300 in total
  RawSample longer{{std::string(59, 'a'), std::string(59, 'b'), std::string(59, 'c'),
                    std::string(59, 'd'), std::string(59, 'e')},
                   "ok then",
                   1};
  auto t = encode_sample(longer, vocab);
  ASSERT_TRUE(t);
  ASSERT_EQ(t->context.size(), 2u);  // 120 fits, 180 does not
  EXPECT_EQ(vocab.decode(t->context[0]), std::string(59, 'd'));
  EXPECT_EQ(vocab.decode(t->context[1]), std::string(59, 'e'));

  EXPECT_FALSE(encode_sample({{"hi"}, "", 0}, vocab));
  EXPECT_FALSE(encode_sample({{"hi"}, "x", 0}, vocab));
  EXPECT_TRUE(encode_sample({{"hi"}, "xy", 0}, vocab));

  auto huge = truncate_context({std::vector<int>(300, 7)}, 128);
  EXPECT_EQ(huge[0].size(), 127u);
}

}  // namespace
}  // namespace plato::corpus
