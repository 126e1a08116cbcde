#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "plato/training/synthetic.hpp"
#include "plato/training/trainer.hpp"
#include "test_support.hpp"

namespace plato::training {
namespace {

using testing::sample_of;
using testing::tiny_config;

std::vector<DialogueSample> toy_corpus() {
  std::vector<DialogueSample> out;
  for (int i = 0; i < 8; ++i) out.push_back(sample_of({{6 + i % 4, 7}}, {8 + i % 5, 9 + i % 3}));
  return out;
}

TrainConfig quick(std::size_t steps = 12) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.eval_interval = 4;
  c.warmup_steps = 4;
  c.seed = 3;
  return c;
}

std::vector<std::vector<float>> weights(const model::UnifiedTransformer<float>& m) {
  std::vector<std::vector<float>> w;
  for (const auto& p : m.parameters()) w.push_back(p->value.data);
  return w;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("plato_training_" + name)).string();
}

TEST(TrainConfig, SetAndText) {
  TrainConfig c;
  EXPECT_TRUE(c.set("steps", "7"));
  EXPECT_TRUE(c.set("peak_lr", "0.25"));
  EXPECT_TRUE(c.set("mlm_rate", "0.3"));
  EXPECT_FALSE(c.set("nonsense", "1"));
  EXPECT_THROW(c.set("steps", "many"), ConfigError);
  EXPECT_EQ(c.steps, 7u);
  EXPECT_EQ(c.peak_lr, 0.25);
  TrainConfig d;
  for (std::istringstream in(c.to_text()); !in.eof();) {
    std::string line;
    std::getline(in, line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    ASSERT_TRUE(d.set(line.substr(0, eq), line.substr(eq + 1))) << line;
  }
  EXPECT_EQ(d.to_text(), c.to_text());
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Synthetic, ShapeAndEqualFrequency) {
  const auto s = make_synthetic({});
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_TRUE(s.heldout.empty());
  std::map<std::vector<std::string>, std::set<std::string>> by_context;
  std::map<std::pair<std::vector<std::string>, std::string>, int> counts;
  for (const auto& r : s.train) {
    by_context[r.context].insert(r.response);
    counts[{r.context, r.response}]++;
  }
  EXPECT_EQ(by_context.size(), 20u);
  for (const auto& [c, rs] : by_context) EXPECT_EQ(rs.size(), 4u);
  for (const auto& [k, n] : counts) EXPECT_EQ(n, 1);
  for (std::size_t i = 1; i < s.train.size(); ++i) EXPECT_LT(s.train[i - 1].timestamp, s.train[i].timestamp);
}

TEST(Synthetic, GenericHoldoutAndSharedTopics) {
  SyntheticConfig cfg;
  cfg.template_pool = 6;
  cfg.generic_repeats = 3;
  cfg.holdout_per_context = 2;
  cfg.topic_count = 10;
  const auto s = make_synthetic(cfg);
  EXPECT_EQ(s.train.size(), 20u * 7u);
  EXPECT_EQ(s.heldout.size(), 40u);
  std::set<std::pair<std::vector<std::string>, std::string>> train_pairs;
  std::size_t generic = 0;
  for (const auto& r : s.train) {
    train_pairs.insert({r.context, r.response});
    generic += r.response == s.generic_response;
  }
  EXPECT_EQ(generic, 60u);
  for (const auto& r : s.heldout) EXPECT_EQ(train_pairs.count({r.context, r.response}), 0u);
  EXPECT_EQ(s.topics[0], s.topics[10]);
  EXPECT_NE(s.train[0].context, s.train[70].context);

  cfg.holdout_per_context = 3;
  EXPECT_THROW(make_synthetic(cfg), ConfigError);
  EXPECT_THROW(make_synthetic({0}), ConfigError);
  SyntheticConfig bad;
  bad.topic_count = 21;
  EXPECT_THROW(make_synthetic(bad), ConfigError);
}

TEST(Training, DeterministicUnderSeed) {
  const auto data = toy_corpus();
  const auto a = train_stage1(data, {}, tiny_config(), quick());
  const auto b = train_stage1(data, {}, tiny_config(), quick());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
  EXPECT_EQ(weights(a.model), weights(b.model));
  auto other = quick();
  other.seed = 4;
  EXPECT_NE(weights(train_stage1(data, {}, tiny_config(), other).model), weights(a.model));
}

TEST(Training, LogIsOrderedAndLossDecreases) {
  const auto data = toy_corpus();
  auto cfg = quick(40);
  cfg.peak_lr = 1e-2;
  const auto r = train_stage1(data, {}, tiny_config(), cfg);
  std::size_t last = 0;
  for (const auto& rec : r.log) {
    EXPECT_GT(rec["step"].get<std::size_t>(), last);
    last = rec["step"].get<std::size_t>();
    EXPECT_EQ(rec.begin().key(), "step");
  }
  EXPECT_EQ(last, 40u);
  EXPECT_LT(r.log.back()["val_nll"].get<double>(), r.log.front()["loss"].get<double>());
  EXPECT_EQ(r.best_step % 4, 0u);
}

TEST(Training, GenerationComponentsSumAndStageOneUntouched) {
  const auto data = toy_corpus();
  const auto s1 = train_stage1(data, {}, tiny_config(), quick());
  const auto before = weights(s1.model);
  const auto s2 = train_stage2_generation(s1.model, data, {}, tiny_config(), quick());
  EXPECT_EQ(weights(s1.model), before);
  EXPECT_EQ(s2.stage, "stage2-gen");
  for (const auto& rec : s2.log) {
    const float total = rec["loss"].get<float>();
    EXPECT_EQ(total, rec["nll"].get<float>() + rec["bow"].get<float>());
  }
}

TEST(Training, WarmStartInheritsStageOne) {
  const auto data = toy_corpus();
  auto cfg = quick(60);
  cfg.peak_lr = 1e-2;
  const auto s1 = train_stage1(data, {}, tiny_config(), cfg);
  auto target = tiny_config();
  target.init_std = 0.02;
  const auto warm = model::warm_start(s1.model, target, 11);
  RngStream rng(2);
  const double uniform = std::log(double(target.vocab_size));
  EXPECT_LT(baseline_token_nll(s1.model, data), uniform);
  EXPECT_LT(posterior_sampled_nll(warm, data, rng), uniform);
}

TEST(Training, EvaluationLogsComponents) {
  const auto data = toy_corpus();
  const auto s1 = train_stage1(data, {}, tiny_config(), quick());
  const auto ev = train_stage2_evaluation(s1.model, data, {}, tiny_config(), quick());
  EXPECT_EQ(ev.stage, "stage2-eval");
  for (const auto& rec : ev.log) {
    EXPECT_EQ(rec["loss"].get<float>(), rec["rce"].get<float>() + rec["mlm"].get<float>());
    if (rec.contains("val_accuracy")) {
      const double acc = rec["val_accuracy"].get<double>();
      EXPECT_GE(acc, 0.0);
      EXPECT_LE(acc, 1.0);
    }
  }
}

TEST(Training, BackwardReversesPairs) {
  const auto cfg = tiny_config();
  const auto rev = reverse_samples({sample_of({{6, 7}, {8}}, {9, 10})}, cfg);
  ASSERT_EQ(rev.size(), 1u);
  EXPECT_EQ(rev[0].context, (std::vector<std::vector<int>>{{9, 10}}));
  EXPECT_EQ(rev[0].response, (std::vector<int>{6, 7, corpus::Vocab::kEndUtterance, 8}));
  const auto r = train_backward_model(toy_corpus(), {}, cfg, quick());
  EXPECT_EQ(r.stage, "backward");
}

TEST(Training, CheckpointAndLogFiles) {
  auto cfg = quick();
  cfg.checkpoint_path = temp_path("ck.bin");
  cfg.log_path = temp_path("log.jsonl");
  cfg.data_hash = "0123456789abcdef";
  const auto r = train_stage1(toy_corpus(), {}, tiny_config(), cfg);
  const auto ck = model::load_checkpoint(cfg.checkpoint_path);
  EXPECT_EQ(ck.stage, "stage1");
  EXPECT_EQ(ck.step, r.best_step);
  EXPECT_EQ(ck.data_hash, cfg.data_hash);
  EXPECT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(weights(model::restore_model<float>(ck)), weights(r.model));
  std::ifstream log(cfg.log_path);
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) {
    EXPECT_EQ(nlohmann::ordered_json::parse(line).dump(), r.log[lines].dump());
    ++lines;
  }
  EXPECT_EQ(lines, r.log.size());
  std::remove(cfg.checkpoint_path.c_str());
  std::remove(cfg.log_path.c_str());
}

TEST(Training, NonFiniteLossIsReported) {
  model::UnifiedTransformer<float> net(tiny_config(), 1);
  auto nan_loss = [&](const std::vector<std::size_t>&, nlohmann::ordered_json&) {
    return ag::constant(Tensor<float>({1, 1}, std::nanf("")));
  };
  auto validate = [](const model::UnifiedTransformer<float>&, nlohmann::ordered_json&) { return 0.0; };
  EXPECT_THROW(detail::run_training(net, "stage1", 4, quick(), nan_loss, validate, false), NumericError);
}

TEST(Training, BatchSamplerCoversEpochs) {
  detail::BatchSampler sampler(10, RngStream(5));
  std::map<std::size_t, int> seen;
  for (int i = 0; i < 5; ++i)
    for (auto idx : sampler.next(4)) seen[idx]++;
  EXPECT_EQ(seen.size(), 10u);
  for (const auto& [idx, n] : seen) EXPECT_EQ(n, 2);
}

}  // namespace
}  // namespace plato::training
