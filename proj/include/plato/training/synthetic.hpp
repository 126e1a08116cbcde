#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"

namespace plato::training {

using corpus::RawSample;

// One-to-many corpus: every context names a topic and is answered by
// `responses_per_context` responses taken from distinct templates of the
// pool (rotating with the context index), each exactly once. Optionally a
// generic topic-free reply is attached to every context `generic_repeats`
// times, and `holdout_per_context` further templates per context are
// emitted separately as held-out pairs. With `topic_count` below `contexts`,
// context i takes topic i mod topic_count, so one topic is opened in several
// ways.
struct SyntheticConfig {
  std::size_t contexts = 20;
  std::size_t topic_count = 0;  // 0 = one topic per context
  std::size_t responses_per_context = 4;
  std::size_t template_pool = 4;
  std::size_t generic_repeats = 0;
  std::size_t holdout_per_context = 0;
};

struct SyntheticCorpus {
  std::vector<RawSample> train;
  std::vector<RawSample> heldout;
  std::string generic_response;
  std::vector<std::string> topics;  // topic of context i
};

inline constexpr std::array<std::string_view, 40> kSyntheticTopics{
    "movies",  "pizza",   "soccer",  "guitars", "poetry",  "chess",    "gardens", "trains",
    "coffee",  "cats",    "rockets", "history", "sailing", "painting", "tennis", "jazz",
    "cooking", "hiking",  "dragons", "puzzles", "cameras", "robots",   "pottery", "surfing",
    "opera",   "bridges", "comics",  "volcanoes", "tea",   "castles",  "skiing",  "dolphins",
    "baking",  "novels",  "planets", "bicycles", "magic",  "deserts",  "whales",  "lanterns"};

inline constexpr std::array<std::string_view, 4> kSyntheticOpeners{
    "do you like {}", "what do you think about {}", "tell me something about {}",
    "have you ever tried {}"};

inline constexpr std::array<std::string_view, 8> kSyntheticTemplates{
    "i really love {} so much",
    "honestly {} is not for me",
    "why are you asking me about {}",
    "my brother knows a lot about {}",
    "we could talk about {} later tonight",
    "last year i read a book on {}",
    "{} always makes me happy",
    "nobody around here talks about {}"};

inline constexpr std::string_view kSyntheticGeneric = "i do not know";

namespace detail {
inline std::string fill(std::string_view pattern, std::string_view topic) {
  std::string out(pattern);
  const auto at = out.find("{}");
  out.replace(at, 2, topic);
  return out;
}
}  // namespace detail

inline SyntheticCorpus make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.contexts == 0 || cfg.contexts > kSyntheticTopics.size())
    throw ConfigError("make_synthetic: contexts must be in 1.." + std::to_string(kSyntheticTopics.size()));
  if (cfg.topic_count > cfg.contexts) throw ConfigError("make_synthetic: topic_count exceeds contexts");
  if (cfg.responses_per_context == 0) throw ConfigError("make_synthetic: responses_per_context must be positive");
  if (cfg.template_pool > kSyntheticTemplates.size())
    throw ConfigError("make_synthetic: template_pool is at most " + std::to_string(kSyntheticTemplates.size()));
  if (cfg.responses_per_context + cfg.holdout_per_context > cfg.template_pool)
    throw ConfigError("make_synthetic: responses_per_context + holdout_per_context exceeds template_pool");

  const std::size_t topics = cfg.topic_count == 0 ? cfg.contexts : cfg.topic_count;
  SyntheticCorpus out;
  out.generic_response = std::string(kSyntheticGeneric);
  std::int64_t ts = 0;
  for (std::size_t i = 0; i < cfg.contexts; ++i) {
    const auto topic = kSyntheticTopics[i % topics];
    out.topics.emplace_back(topic);
    const std::string context = detail::fill(kSyntheticOpeners[i % kSyntheticOpeners.size()], topic);
    for (std::size_t j = 0; j < cfg.responses_per_context; ++j) {
      const auto& pattern = kSyntheticTemplates[(i + j) % cfg.template_pool];
      out.train.push_back({{context}, detail::fill(pattern, topic), ts++});
    }
    for (std::size_t g = 0; g < cfg.generic_repeats; ++g)
      out.train.push_back({{context}, out.generic_response, ts++});
  }
  for (std::size_t i = 0; i < cfg.contexts; ++i) {
    const auto topic = kSyntheticTopics[i % topics];
    const std::string context = detail::fill(kSyntheticOpeners[i % kSyntheticOpeners.size()], topic);
    for (std::size_t j = 0; j < cfg.holdout_per_context; ++j) {
      const auto& pattern = kSyntheticTemplates[(i + cfg.responses_per_context + j) % cfg.template_pool];
      out.heldout.push_back({{context}, detail::fill(pattern, topic), ts++});
    }
  }
  return out;
}

// All utterance texts of a sample set, for vocabulary training.
inline std::vector<std::string> corpus_lines(const std::vector<RawSample>& samples) {
  std::vector<std::string> lines;
  for (const auto& s : samples) {
    for (const auto& c : s.context) lines.push_back(c);
    lines.push_back(s.response);
  }
  return lines;
}

}  // namespace plato::training
