#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"
#include "plato/model/config.hpp"
#include "plato/numerics/autograd.hpp"

namespace plato::model {

using corpus::DialogueSample;
using corpus::Vocab;
using AttentionMaskSpec = AttentionMask;

enum class Task { kBaselineGen, kLatentGen, kRecognition, kCoherence, kMlm };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kBaselineGen: return "baseline-gen";
    case Task::kLatentGen: return "latent-gen";
    case Task::kRecognition: return "recognition";
    case Task::kCoherence: return "coherence";
    case Task::kMlm: return "mlm";
  }
  return "?";
}

inline bool is_generation(Task t) { return t == Task::kBaselineGen || t == Task::kLatentGen; }

enum Role : int { kContextRole = 0, kResponseRole = 1, kLatentRole = 2 };
inline constexpr std::size_t kRoleCount = 3;

// Token id marking the latent slot; its token embedding is the mixture of
// latent embeddings rather than a table row.
inline constexpr int kLatentSlotToken = -1;

// One assembled sequence:
//   baseline-gen  [context | BOU r_1..r_T]              causal over response
//   latent-gen    [slot | context | BOU r_1..r_T]       causal over response
//   recognition,
//   coherence,
//   mlm           [[M] | context | r_1..r_T EOU]        fully bidirectional
// Context utterances are each followed by EOU.
struct AssembledInput {
  Task task = Task::kBaselineGen;
  std::vector<int> tokens;
  std::vector<int> roles;
  std::vector<int> positions;
  std::shared_ptr<const AttentionMaskSpec> mask;
  std::size_t response_begin = 0;
  // Generation layouts: next-token target for each response position
  // (r_1..r_T followed by EOU).
  std::vector<int> targets;
  std::optional<std::vector<double>> latent_weights;

  std::size_t length() const { return tokens.size(); }
  bool has_slot() const { return task != Task::kBaselineGen; }
};

namespace detail {

inline std::shared_ptr<AttentionMaskSpec> make_mask(std::size_t n, std::size_t response_begin,
                                                    bool causal_response) {
  auto m = std::make_shared<AttentionMaskSpec>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      bool ok;
      if (!causal_response) ok = true;
      else if (j < response_begin) ok = true;        // everyone sees the prefix
      else ok = i >= response_begin && j <= i;       // response is causal
      m->set(i, j, ok);
    }
  return m;
}

}  // namespace detail

inline AssembledInput build_input(const DialogueSample& sample, Task task,
                                  const ModelConfig& config,
                                  std::optional<std::vector<double>> latent_weights = std::nullopt) {
  require(latent_weights.has_value() == (task == Task::kLatentGen),
          "build_input: latent weights are required exactly for latent-gen");
  if (latent_weights)
    require(latent_weights->size() == config.latent_count, "build_input: latent weight length");
  require(!sample.context.empty(), "build_input: empty context");

  AssembledInput in;
  in.task = task;
  auto push = [&](int token, int role) {
    in.tokens.push_back(token);
    in.roles.push_back(role);
  };
  if (task == Task::kLatentGen) push(kLatentSlotToken, kLatentRole);
  else if (task != Task::kBaselineGen) push(Vocab::kLatentMask, kLatentRole);

  std::size_t context_tokens = 0;
  for (const auto& utterance : sample.context) {
    for (int t : utterance) push(t, kContextRole);
    push(Vocab::kEndUtterance, kContextRole);
    context_tokens += utterance.size() + 1;
  }
  require(context_tokens <= config.max_context, "build_input: context exceeds configured maximum");
  require(sample.response.size() <= config.max_response,
          "build_input: response exceeds configured maximum");

  in.response_begin = in.tokens.size();
  if (is_generation(task)) {
    push(Vocab::kBeginUtterance, kResponseRole);
    for (int t : sample.response) push(t, kResponseRole);
    in.targets = sample.response;
    in.targets.push_back(Vocab::kEndUtterance);
  } else {
    for (int t : sample.response) push(t, kResponseRole);
    push(Vocab::kEndUtterance, kResponseRole);
  }
  require(in.tokens.size() <= config.max_positions(), "build_input: sequence exceeds maximum");
  in.positions.resize(in.tokens.size());
  for (std::size_t i = 0; i < in.positions.size(); ++i) in.positions[i] = int(i);
  in.mask = detail::make_mask(in.tokens.size(), in.response_begin, is_generation(task));
  in.latent_weights = std::move(latent_weights);
  return in;
}

inline std::vector<double> one_hot(std::size_t k, std::size_t index) {
  std::vector<double> w(k, 0.0);
  w.at(index) = 1.0;
  return w;
}

// Response and context swapped: the backward model reads the response as a
// one-utterance context and predicts the flattened context.
inline DialogueSample reverse_sample(const DialogueSample& s, std::size_t max_context = 128) {
  DialogueSample r;
  r.timestamp = s.timestamp;
  r.context = corpus::truncate_context({s.response}, max_context);
  for (std::size_t i = 0; i < s.context.size(); ++i) {
    if (i) r.response.push_back(Vocab::kEndUtterance);
    r.response.insert(r.response.end(), s.context[i].begin(), s.context[i].end());
  }
  return r;
}

}  // namespace plato::model
