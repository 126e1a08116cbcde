#pragma once

#include <cstddef>
#include <vector>

#include "plato/model/input.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/autograd.hpp"

namespace plato::model {

template <typename Real>
struct GenerationOutput {
  Var<Real> logits;         // [T+1, V], row t predicts targets[t]
  Var<Real> latent_hidden;  // [1, D] final state at the latent slot (latent-gen only)
};

// Batched generation forward. The LM head runs once over all response rows
// of the batch; per-input logits are sliced from it.
template <typename Real>
std::vector<GenerationOutput<Real>> forward_generation(
    const UnifiedTransformer<Real>& model, const std::vector<const AssembledInput*>& batch,
    const std::vector<Var<Real>>& slot_weights = {}) {
  for (const auto* in : batch) require(is_generation(in->task), "forward_generation: not a generation input");
  std::vector<std::size_t> offsets;
  auto hidden = model.encode(batch, slot_weights, &offsets);
  std::vector<std::size_t> rows;
  std::vector<std::size_t> counts;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto* in = batch[b];
    for (std::size_t i = in->response_begin; i < in->length(); ++i) rows.push_back(offsets[b] + i);
    counts.push_back(in->length() - in->response_begin);
  }
  auto logits = model.lm_logits(ag::select_rows(hidden, rows));
  std::vector<GenerationOutput<Real>> out(batch.size());
  std::size_t at = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<std::size_t> mine(counts[b]);
    for (std::size_t i = 0; i < counts[b]; ++i) mine[i] = at + i;
    at += counts[b];
    out[b].logits = batch.size() == 1 ? logits : ag::select_rows(logits, mine);
    if (batch[b]->task == Task::kLatentGen) out[b].latent_hidden = ag::select_rows(hidden, {offsets[b]});
  }
  return out;
}

template <typename Real>
GenerationOutput<Real> forward_generation(const UnifiedTransformer<Real>& model,
                                          const AssembledInput& input,
                                          const Var<Real>& slot_weights = nullptr) {
  std::vector<Var<Real>> slots;
  if (slot_weights) slots.push_back(slot_weights);
  return forward_generation(model, {&input}, slots).front();
}

// Final hidden state at the [M] slot of each bidirectional input: [B, D].
template <typename Real>
Var<Real> mask_slot_hidden(const UnifiedTransformer<Real>& model,
                           const std::vector<const AssembledInput*>& batch) {
  for (const auto* in : batch)
    require(!is_generation(in->task) && in->tokens.front() == Vocab::kLatentMask,
            "mask_slot_hidden: input has no [M] slot");
  std::vector<std::size_t> offsets;
  auto hidden = model.encode(batch, {}, &offsets);
  return ag::select_rows(hidden, offsets);
}

// Recognition logits W1 h_[M] + b1 for each input: [B, K].
template <typename Real>
Var<Real> recognition_logits(const UnifiedTransformer<Real>& model,
                             const std::vector<const AssembledInput*>& batch) {
  return model.recognition_logits(mask_slot_hidden(model, batch));
}

// Coherence logits w . h_[M] + b for each input: [B, 1].
template <typename Real>
Var<Real> coherence_logits(const UnifiedTransformer<Real>& model,
                           const std::vector<const AssembledInput*>& batch) {
  return model.coherence_logits(mask_slot_hidden(model, batch));
}

// Posterior p(z | c, r).
template <typename Real>
std::vector<double> forward_recognition(const UnifiedTransformer<Real>& model,
                                        const DialogueSample& sample) {
  NoGradGuard no_grad;
  const auto in = build_input(sample, Task::kRecognition, model.config());
  auto p = ag::softmax_rows(recognition_logits(model, {&in}));
  return {p->value.data.begin(), p->value.data.end()};
}

// p(l = 1 | c, r).
template <typename Real>
double forward_coherence(const UnifiedTransformer<Real>& model, const DialogueSample& sample) {
  NoGradGuard no_grad;
  const auto in = build_input(sample, Task::kCoherence, model.config());
  return ag::sigmoid_value(double(coherence_logits(model, {&in})->value.data[0]));
}

}  // namespace plato::model
