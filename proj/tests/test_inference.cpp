#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "plato/corpus/bpe.hpp"
#include "plato/inference/pipeline.hpp"
#include "test_support.hpp"

namespace plato::inference {
namespace {

using testing::steer_to_token;
using testing::tiny_config;

ScoredCandidate scored(std::size_t id, double coherence) {
  ScoredCandidate c;
  c.latent_id = id;
  c.response = {int(6 + id)};
  c.coherence = coherence;
  return c;
}

TEST(Scores, UniformModelGivesMinusLogV) {
  model::UnifiedTransformer<double> net(tiny_config(16), 1);
  net.set_all(0.0);
  const std::vector<std::vector<int>> ctx{{6, 7}, {8}};
  EXPECT_NEAR(score_forward(net, ctx, {9, 10, 11}), -std::log(16.0), 1e-12);
  EXPECT_NEAR(score_backward(net, ctx, {9}), -std::log(16.0), 1e-12);
  EXPECT_THROW(score_forward(net, ctx, {}), ContractViolation);
  EXPECT_THROW(score_backward(net, ctx, {}), ContractViolation);
}

TEST(Scores, SymmetricPairScoresAgree) {
  model::UnifiedTransformer<double> net(tiny_config(16), 4);
  const std::vector<int> u{7, 9, 11};
  EXPECT_DOUBLE_EQ(score_forward(net, {u}, u), score_backward(net, {u}, u));
}

TEST(Scores, LengthInvariantForRepeatedTokens) {
  model::UnifiedTransformer<double> net(tiny_config(16), 1);
  steer_to_token(net, 9, 2.0);
  const double one = score_forward(net, {{6}}, {9});
  EXPECT_NEAR(score_forward(net, {{6}}, {9, 9, 9, 9}), one, 1e-12);
  EXPECT_NEAR(one, 2.0 - std::log(std::exp(2.0) + 15.0), 1e-12);
}

TEST(Generate, OnePerLatentDeterministic) {
  model::UnifiedTransformer<float> net(tiny_config(16, 4), 21);
  const std::vector<std::vector<int>> ctx{{6, 7, 8}};
  const auto a = generate_candidates(net, ctx);
  const auto b = generate_candidates(net, ctx);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_LE(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].response, b[i].response);
    EXPECT_EQ(a[i].latent_id, b[i].latent_id);
    EXPECT_GE(a[i].latent_id, 1u);
    EXPECT_LE(a[i].latent_id, 4u);
    if (i) EXPECT_LT(a[i - 1].latent_id, a[i].latent_id);
    EXPECT_FALSE(a[i].response.empty());
    for (int t : a[i].response) EXPECT_FALSE(corpus::Vocab::is_special(t));
  }
}

TEST(Generate, StopsAtCapAndNeverEmitsSpecials) {
  model::UnifiedTransformer<float> net(tiny_config(16, 4), 1);
  steer_to_token(net, 9, 5.0f);
  auto c = generate_candidates(net, {{6}});
  ASSERT_EQ(c.size(), 4u);
  for (std::size_t z = 0; z < 4; ++z) {
    EXPECT_EQ(c[z].latent_id, z + 1);
    EXPECT_EQ(c[z].response, std::vector<int>(net.config().max_response, 9));
  }
  DecodeConfig shorter;
  shorter.max_length = 3;
  EXPECT_EQ(generate_candidates(net, {{6}}, shorter)[0].response.size(), 3u);

  steer_to_token(net, corpus::Vocab::kLatentMask, 50.0f);
  net.param("embed.token")->value.data[9 * net.config().dim] = 1.0f;
  for (const auto& cand : generate_candidates(net, {{6}}, shorter))
    for (int t : cand.response) EXPECT_FALSE(corpus::Vocab::is_special(t));
}

TEST(Generate, AllEmptyIsAnError) {
  model::UnifiedTransformer<float> net(tiny_config(16, 3), 1);
  steer_to_token(net, corpus::Vocab::kEndUtterance, 10.0f);
  EXPECT_THROW(generate_candidates(net, {{6}}), EmptyDecodeError);
}

TEST(Generate, TopKSamplingIsSeededAndRestricted) {
  model::UnifiedTransformer<float> net(tiny_config(16, 3), 1);
  steer_to_token(net, 9, 1.0f);
  net.param("embed.token")->value.data[10 * net.config().dim] = 0.9f;
  DecodeConfig cfg;
  cfg.strategy = "topk";
  cfg.top_k = 2;
  cfg.max_length = 6;
  RngStream r1(4), r2(4);
  const auto a = generate_candidates(net, {{6}}, cfg, &r1);
  const auto b = generate_candidates(net, {{6}}, cfg, &r2);
  std::set<int> used;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].response, b[i].response);
    used.insert(a[i].response.begin(), a[i].response.end());
  }
  for (int t : used) EXPECT_TRUE(t == 9 || t == 10) << t;
  EXPECT_THROW(generate_candidates(net, {{6}}, cfg, nullptr), ContractViolation);
  cfg.strategy = "beam";
  EXPECT_THROW(generate_candidates(net, {{6}}, cfg), ConfigError);
}

TEST(Select, ArgmaxTiesAndMonotoneInvariance) {
  std::vector<ScoredCandidate> c{scored(1, 0.1), scored(2, 0.8), scored(3, 0.3)};
  EXPECT_EQ(c[select_index(c)].latent_id, 2u);
  for (auto& x : c) x.coherence = std::log(x.coherence) * 3.0 + 1.0;
  EXPECT_EQ(c[select_index(c)].latent_id, 2u);

  std::vector<ScoredCandidate> tie{scored(1, 0.7), scored(2, 0.2), scored(3, 0.7)};
  EXPECT_EQ(tie[select_index(tie)].latent_id, 1u);
  std::vector<ScoredCandidate> reversed{scored(3, 0.7), scored(1, 0.7)};
  EXPECT_EQ(reversed[select_index(reversed)].latent_id, 1u);
  EXPECT_THROW(select_index({}), ContractViolation);
}

TEST(Select, SingleLatentIsIdentity) {
  model::UnifiedTransformer<float> gen(tiny_config(16, 2), 3);
  model::UnifiedTransformer<float> eval(tiny_config(16, 2), 4);
  const std::vector<std::vector<int>> ctx{{6, 7}};
  auto candidates = generate_candidates(gen, ctx);
  std::vector<ScoredCandidate> one{candidates.front()};
  const auto chosen = select_response(eval, ctx, one);
  EXPECT_EQ(chosen.response, one.front().response);
  EXPECT_GT(chosen.coherence, 0.0);
  EXPECT_LT(chosen.coherence, 1.0);
}

struct ChatFixture {
  corpus::Vocab vocab = corpus::train_bpe({"do you like movies", "i like movies a lot", "what about pizza"}, 40).vocab;
  model::UnifiedTransformer<float> gen;
  model::UnifiedTransformer<float> eval;
  ChatFixture()
      : gen(config(), 5), eval(config(), 6) {}
  model::ModelConfig config() const {
    auto c = tiny_config(vocab.size(), 3);
    c.max_context = 40;
    c.max_response = 6;
    return c;
  }
  ChatModels models() const { return {gen, eval, vocab, DecodeConfig{}}; }
};

TEST(Chat, TurnReturnsDecodedSelection) {
  ChatFixture f;
  const auto m = f.models();
  const auto a = chat_turn(m, {"do you like movies"});
  const auto b = chat_turn(m, {"do you like movies"});
  EXPECT_EQ(a.text, f.vocab.decode(a.chosen.response));
  EXPECT_EQ(a.text, b.text);
  bool member = false;
  for (const auto& c : a.candidates) member = member || (c.latent_id == a.chosen.latent_id && c.response == a.chosen.response);
  EXPECT_TRUE(member);
  for (const auto& c : a.candidates) EXPECT_LE(c.coherence, a.chosen.coherence);
}

TEST(Chat, HistoryTruncatedOldestFirst) {
  ChatFixture f;
  const auto m = f.models();
  std::vector<std::string> history;
  for (int i = 0; i < 30; ++i) history.push_back(i % 2 ? "i like movies a lot" : "what about pizza");
  history.push_back("do you like movies");
  const auto ctx = encode_history(m, history);
  std::size_t tokens = 0;
  for (const auto& u : ctx) tokens += u.size() + 1;
  EXPECT_LE(tokens, f.config().max_context);
  EXPECT_LT(ctx.size(), history.size());
  EXPECT_EQ(ctx.back(), f.vocab.encode("do you like movies"));
  EXPECT_NO_THROW(chat_turn(m, history));
}

TEST(Chat, HistoryBudgetCapsAt128Tokens) {
  ChatFixture f;
  auto cfg = f.config();
  cfg.max_context = 300;
  model::UnifiedTransformer<float> gen(cfg, 1), eval(cfg, 2);
  const ChatModels m{gen, eval, f.vocab, DecodeConfig{}};
  std::vector<std::string> history(100, "i like movies a lot");
  std::size_t tokens = 0;
  for (const auto& u : encode_history(m, history)) tokens += u.size() + 1;
  EXPECT_LE(tokens, kMaxHistoryTokens);
  EXPECT_GT(tokens, kMaxHistoryTokens - 8);
}

TEST(SelfChat, LengthSpeakersAndDeterminism) {
  ChatFixture f;
  const auto m = f.models();
  for (std::size_t total = 2; total <= 20; ++total) {
    const auto t = self_chat(m, "do you like movies?", total);
    ASSERT_EQ(t.utterances.size(), total);
    EXPECT_EQ(t.utterances.front().text, "do you like movies?");
    EXPECT_FALSE(t.utterances.front().latent_id.has_value());
    for (std::size_t i = 0; i < total; ++i) {
      EXPECT_EQ(t.utterances[i].turn, i);
      EXPECT_EQ(t.utterances[i].speaker, i % 2 == 0 ? "P1" : "P2");
      if (i) EXPECT_TRUE(t.utterances[i].latent_id.has_value());
    }
  }
  const auto a = self_chat(m, "do you like movies?");
  const auto b = self_chat(m, "do you like movies?");
  ASSERT_EQ(a.utterances.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(transcript_record(a.utterances[i]).dump(), transcript_record(b.utterances[i]).dump());
  EXPECT_THROW(self_chat(m, "hi", 1), ContractViolation);
}

TEST(SelfChat, RecordLayout) {
  TranscriptEntry seed{0, "P1", "hello", std::nullopt, std::nullopt};
  EXPECT_EQ(transcript_record(seed).dump(),
            R"({"turn":0,"speaker":"P1","text":"hello","latent_id":null,"scores":{}})");
  TranscriptEntry reply{1, "P2", "hi", 3, 0.5};
  EXPECT_EQ(transcript_record(reply).dump(),
            R"({"turn":1,"speaker":"P2","text":"hi","latent_id":3,"scores":{"coherence":0.5}})");
}

}  // namespace
}  // namespace plato::inference
