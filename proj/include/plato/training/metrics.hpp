#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "plato/model/forward.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/gumbel.hpp"
#include "plato/objectives/losses.hpp"
#include "plato/training/sampling.hpp"

namespace plato::training {

using model::AssembledInput;
using model::Task;
using model::UnifiedTransformer;

inline constexpr std::size_t kEvalChunk = 64;

// Token-weighted mean NLL of the responses (EOU included) under the
// latent-free baseline layout.
template <typename Real>
double baseline_token_nll(const UnifiedTransformer<Real>& net, const std::vector<DialogueSample>& samples) {
  require(!samples.empty(), "baseline_token_nll: no samples");
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(samples.size(), start + kEvalChunk);
    std::vector<AssembledInput> inputs;
    for (std::size_t i = start; i < end; ++i)
      inputs.push_back(model::build_input(samples[i], Task::kBaselineGen, net.config()));
    std::vector<const AssembledInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    const auto out = model::forward_generation(net, ptrs);
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      const double nll = double(ag::cross_entropy(out[b].logits, inputs[b].targets)->value.data[0]);
      total += nll * double(inputs[b].targets.size());
      tokens += inputs[b].targets.size();
    }
  }
  return total / double(tokens);
}

// Token-weighted NLL with the latent drawn from the recognition posterior:
// z ~ Gumbel-softmax(log p(z|c,r)), then the latent-conditioned NLL.
template <typename Real>
double posterior_sampled_nll(const UnifiedTransformer<Real>& net, const std::vector<DialogueSample>& samples,
                             RngStream& rng) {
  require(!samples.empty(), "posterior_sampled_nll: no samples");
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(samples.size(), start + kEvalChunk);
    const std::vector<DialogueSample> chunk(samples.begin() + std::ptrdiff_t(start),
                                            samples.begin() + std::ptrdiff_t(end));
    const auto g = objectives::generation_loss(net, chunk, rng);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const std::size_t t = chunk[b].response.size() + 1;
      total += g.sample_nll[b] * double(t);
      tokens += t;
    }
  }
  return total / double(tokens);
}

struct CoherenceMetrics {
  double accuracy = 0.0;  // over positives and negatives at threshold 0.5
  double rce = 0.0;
  double mlm = 0.0;
  std::size_t pairs = 0;
};

// Scores each positive against one sampled negative and one MLM corruption.
template <typename Real>
CoherenceMetrics coherence_metrics(const UnifiedTransformer<Real>& net, const std::vector<DialogueSample>& positives,
                                   const std::vector<DialogueSample>& negative_pool, RngStream& rng,
                                   const MlmConfig& mlm = {}) {
  require(!positives.empty(), "coherence_metrics: no samples");
  NoGradGuard no_grad;
  CoherenceMetrics m;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < positives.size(); start += kEvalChunk) {
    const std::size_t end = std::min(positives.size(), start + kEvalChunk);
    const std::vector<DialogueSample> pos(positives.begin() + std::ptrdiff_t(start),
                                          positives.begin() + std::ptrdiff_t(end));
    const auto neg = sample_negatives(pos, negative_pool, rng);
    std::vector<objectives::MaskedBatch> masks;
    for (const auto& s : pos)
      masks.push_back(apply_mlm_mask(model::build_input(s, Task::kMlm, net.config()).tokens,
                                     net.config().vocab_size, rng, mlm));
    const auto e = objectives::evaluation_loss(net, pos, neg, masks);
    m.rce += double(e.rce->value.data[0]) * double(pos.size());
    m.mlm += double(e.mlm->value.data[0]) * double(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      correct += e.p_pos[i] > 0.5;
      correct += e.p_neg[i] < 0.5;
    }
    m.pairs += pos.size();
  }
  m.rce /= double(m.pairs);
  m.mlm /= double(m.pairs);
  m.accuracy = double(correct) / double(2 * m.pairs);
  return m;
}

}  // namespace plato::training
