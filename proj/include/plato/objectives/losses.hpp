#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "plato/errors.hpp"
#include "plato/model/forward.hpp"
#include "plato/model/input.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/autograd.hpp"
#include "plato/numerics/gumbel.hpp"
#include "plato/numerics/rng.hpp"

namespace plato::objectives {

using model::AssembledInput;
using model::DialogueSample;
using model::Task;
using model::UnifiedTransformer;

// Mean per-token negative log-likelihood of `targets` under row-wise logits.
template <typename Real>
Var<Real> nll_loss(const Var<Real>& logits, const std::vector<int>& targets) {
  require(!targets.empty(), "nll_loss: zero-length target");
  return ag::cross_entropy(logits, targets);
}

// Order-free bag-of-words loss: f = W2 h_z + b2 scored against every target
// token, averaged over the target length.
template <typename Real>
Var<Real> bow_loss(const Var<Real>& f, const std::vector<int>& targets) {
  require(!targets.empty(), "bow_loss: zero-length target");
  std::vector<std::uint32_t> counts(f->value.size(), 0);
  for (int t : targets) {
    require(t >= 0 && std::size_t(t) < counts.size(), "bow_loss: target out of range");
    ++counts[std::size_t(t)];
  }
  return ag::bag_cross_entropy(f, counts);
}

template <typename Real>
Var<Real> bow_loss(const UnifiedTransformer<Real>& model, const Var<Real>& h_z,
                   const std::vector<int>& targets) {
  return bow_loss(model.bow_logits(h_z), targets);
}

inline constexpr double kProbabilityClamp = 1e-7;

struct RceValue {
  double loss = 0.0;
  bool clamped = false;
};

// -log p_pos - log(1 - p_neg) on probabilities. Values at or beyond {0, 1}
// are clamped into [1e-7, 1 - 1e-7] and flagged.
inline RceValue rce_loss(double p_pos, double p_neg) {
  RceValue out;
  auto clamp = [&](double p) {
    const double c = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    out.clamped = out.clamped || c != p;
    return c;
  };
  out.loss = -std::log(clamp(p_pos)) - std::log(1.0 - clamp(p_neg));
  return out;
}

// Graph form on coherence logits s (p = sigmoid(s)): mean over pairs of
// softplus(-s_pos) + softplus(s_neg), which equals the probability form
// without needing a clamp.
template <typename Real>
Var<Real> rce_loss(const Var<Real>& pos_logits, const Var<Real>& neg_logits) {
  require(pos_logits->value.size() == neg_logits->value.size() && pos_logits->value.size() > 0,
          "rce_loss: one negative per positive required");
  auto pos = ag::sum(ag::softplus(ag::scale(pos_logits, Real(-1))));
  auto neg = ag::sum(ag::softplus(neg_logits));
  return ag::scale(ag::add(pos, neg), Real(1) / Real(pos_logits->value.size()));
}

// Masked-token prediction for one corrupted sequence.
struct MaskedBatch {
  std::vector<int> original;
  std::vector<int> corrupted;
  std::vector<std::size_t> positions;  // ascending
  std::vector<int> targets;            // original[positions[i]]
};

template <typename Real>
Var<Real> mlm_loss(const Var<Real>& masked_logits, const MaskedBatch& batch) {
  require(!batch.positions.empty(), "mlm_loss: empty mask set");
  require(masked_logits->value.rows() == batch.targets.size(), "mlm_loss: one logit row per masked position");
  return ag::cross_entropy(masked_logits, batch.targets);
}

template <typename Real>
struct GenerationLoss {
  Var<Real> total;
  Var<Real> nll;
  Var<Real> bow;
  std::vector<std::vector<double>> posterior;       // p(z|c,r) per sample
  std::vector<std::vector<double>> latent_weights;  // Gumbel-softmax sample per sample
  std::vector<double> sample_nll;                   // per-token NLL of each sample
};

// Integrated stage-2 generation loss, averaged over the batch:
// recognition -> Gumbel-softmax sample of the latent -> latent-conditioned
// NLL and BOW. Gradients reach the recognition head through the sample.
template <typename Real>
GenerationLoss<Real> generation_loss(const UnifiedTransformer<Real>& model,
                                     const std::vector<DialogueSample>& samples, RngStream& rng) {
  require(!samples.empty(), "generation_loss: empty batch");
  const auto& config = model.config();
  const std::size_t k = config.latent_count;
  std::vector<AssembledInput> rec_inputs;
  rec_inputs.reserve(samples.size());
  for (const auto& s : samples) rec_inputs.push_back(model::build_input(s, Task::kRecognition, config));
  std::vector<const AssembledInput*> rec_ptrs;
  for (const auto& in : rec_inputs) rec_ptrs.push_back(&in);
  auto log_post = ag::log_softmax_rows(model::recognition_logits(model, rec_ptrs));

  GenerationLoss<Real> out;
  std::vector<Var<Real>> weights;
  std::vector<AssembledInput> gen_inputs;
  gen_inputs.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); ++b) {
    auto row = samples.size() == 1 ? log_post : ag::select_rows(log_post, {b});
    auto w = gumbel_softmax_sample(row, config.temperature, rng);
    std::vector<double> post(k), wv(k);
    for (std::size_t z = 0; z < k; ++z) {
      post[z] = std::exp(double(row->value.data[z]));
      wv[z] = double(w->value.data[z]);
    }
    out.posterior.push_back(std::move(post));
    out.latent_weights.push_back(wv);
    weights.push_back(w);
    gen_inputs.push_back(model::build_input(samples[b], Task::kLatentGen, config, std::move(wv)));
  }
  std::vector<const AssembledInput*> gen_ptrs;
  for (const auto& in : gen_inputs) gen_ptrs.push_back(&in);
  auto fwd = model::forward_generation(model, gen_ptrs, weights);

  Var<Real> nll_sum, bow_sum;
  std::vector<Var<Real>> hz;
  for (const auto& f : fwd) hz.push_back(f.latent_hidden);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    auto nll = nll_loss(fwd[b].logits, gen_inputs[b].targets);
    auto bow = bow_loss(model, hz[b], gen_inputs[b].targets);
    out.sample_nll.push_back(double(nll->value.data[0]));
    nll_sum = nll_sum ? ag::add(nll_sum, nll) : nll;
    bow_sum = bow_sum ? ag::add(bow_sum, bow) : bow;
  }
  const Real inv = Real(1) / Real(samples.size());
  out.nll = ag::scale(nll_sum, inv);
  out.bow = ag::scale(bow_sum, inv);
  out.total = ag::add(out.nll, out.bow);
  return out;
}

// Baseline (stage-1) NLL averaged over the batch.
template <typename Real>
Var<Real> baseline_loss(const UnifiedTransformer<Real>& model, const std::vector<DialogueSample>& samples) {
  require(!samples.empty(), "baseline_loss: empty batch");
  std::vector<AssembledInput> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(model::build_input(s, Task::kBaselineGen, model.config()));
  std::vector<const AssembledInput*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);
  auto fwd = model::forward_generation(model, ptrs);
  Var<Real> sum;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    auto nll = nll_loss(fwd[b].logits, inputs[b].targets);
    sum = sum ? ag::add(sum, nll) : nll;
  }
  return ag::scale(sum, Real(1) / Real(inputs.size()));
}

template <typename Real>
struct EvaluationLoss {
  Var<Real> total;
  Var<Real> rce;
  Var<Real> mlm;
  std::vector<double> p_pos;
  std::vector<double> p_neg;
};

// Assembles the MLM view of a sample: the coherence layout with `mask`
// applied. `mask.original` must be that layout's token sequence.
inline AssembledInput masked_input(const DialogueSample& sample, const MaskedBatch& mask,
                                   const model::ModelConfig& config) {
  auto in = model::build_input(sample, Task::kMlm, config);
  require(in.tokens == mask.original, "masked_input: mask was built for a different sequence");
  in.tokens = mask.corrupted;
  return in;
}

// Integrated evaluation loss, batch means of RCE and MLM. positives[i] pairs
// with negatives[i] (same context, foreign response) and masks[i] (its MLM
// corruption). All 3B sequences run as one packed batch.
template <typename Real>
EvaluationLoss<Real> evaluation_loss(const UnifiedTransformer<Real>& model,
                                     const std::vector<DialogueSample>& positives,
                                     const std::vector<DialogueSample>& negatives,
                                     const std::vector<MaskedBatch>& masks) {
  const std::size_t n = positives.size();
  require(n > 0 && negatives.size() == n && masks.size() == n,
          "evaluation_loss: positives, negatives and masks must align");
  const auto& config = model.config();
  std::vector<AssembledInput> inputs;
  inputs.reserve(3 * n);
  for (const auto& s : positives) inputs.push_back(model::build_input(s, Task::kCoherence, config));
  for (const auto& s : negatives) inputs.push_back(model::build_input(s, Task::kCoherence, config));
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(masked_input(positives[i], masks[i], config));
  std::vector<const AssembledInput*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);

  std::vector<std::size_t> offsets;
  auto hidden = model.encode(ptrs, {}, &offsets);
  std::vector<std::size_t> pos_rows(offsets.begin(), offsets.begin() + std::ptrdiff_t(n));
  std::vector<std::size_t> neg_rows(offsets.begin() + std::ptrdiff_t(n), offsets.begin() + std::ptrdiff_t(2 * n));
  auto s_pos = model.coherence_logits(ag::select_rows(hidden, pos_rows));
  auto s_neg = model.coherence_logits(ag::select_rows(hidden, neg_rows));

  std::vector<std::size_t> mlm_rows;
  for (std::size_t i = 0; i < n; ++i) {
    require(!masks[i].positions.empty(), "evaluation_loss: empty mask set");
    for (std::size_t j = 0; j < masks[i].positions.size(); ++j) {
      mlm_rows.push_back(offsets[2 * n + i] + masks[i].positions[j]);
    }
  }
  auto mlm_logits = model.lm_logits(ag::select_rows(hidden, mlm_rows));

  // Per-sequence mean, then batch mean, so each sample weighs equally.
  Var<Real> mlm_sum;
  std::size_t at = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> rows(masks[i].positions.size());
    for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = at + j;
    at += rows.size();
    auto term = mlm_loss(n == 1 ? mlm_logits : ag::select_rows(mlm_logits, rows), masks[i]);
    mlm_sum = mlm_sum ? ag::add(mlm_sum, term) : term;
  }

  EvaluationLoss<Real> out;
  out.rce = rce_loss(s_pos, s_neg);
  out.mlm = ag::scale(mlm_sum, Real(1) / Real(n));
  out.total = ag::add(out.rce, out.mlm);
  for (std::size_t i = 0; i < n; ++i) {
    out.p_pos.push_back(ag::sigmoid_value(double(s_pos->value.data[i])));
    out.p_neg.push_back(ag::sigmoid_value(double(s_neg->value.data[i])));
  }
  return out;
}

}  // namespace plato::objectives
