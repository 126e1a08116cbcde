#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"
#include "plato/numerics/rng.hpp"
#include "plato/objectives/losses.hpp"

namespace plato::training {

using corpus::DialogueSample;
using objectives::MaskedBatch;

struct MlmConfig {
  double rate = 0.15;
  double mask_prob = 0.8;    // selected -> [MASK]
  double random_prob = 0.1;  // selected -> uniform non-special token; remainder unchanged
};

// Selects each non-special position independently with probability `rate`
// (forcing one when none was drawn) and corrupts the selection 80/10/10.
inline MaskedBatch apply_mlm_mask(const std::vector<int>& tokens, std::size_t vocab_size, RngStream& rng,
                                  const MlmConfig& config = {}) {
  require(vocab_size > std::size_t(corpus::Vocab::kNumSpecial), "apply_mlm_mask: vocabulary has no regular tokens");
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= corpus::Vocab::kNumSpecial) maskable.push_back(i);
  require(!maskable.empty(), "apply_mlm_mask: no maskable token");

  MaskedBatch out;
  out.original = tokens;
  out.corrupted = tokens;
  for (std::size_t i : maskable)
    if (rng.bernoulli(config.rate)) out.positions.push_back(i);
  if (out.positions.empty()) out.positions.push_back(maskable[rng.below(maskable.size())]);
  const std::size_t regular = vocab_size - std::size_t(corpus::Vocab::kNumSpecial);
  for (std::size_t i : out.positions) {
    out.targets.push_back(tokens[i]);
    const double u = rng.uniform();
    if (u < config.mask_prob) out.corrupted[i] = corpus::Vocab::kMlmMask;
    else if (u < config.mask_prob + config.random_prob)
      out.corrupted[i] = corpus::Vocab::kNumSpecial + int(rng.below(regular));
  }
  return out;
}

// One negative per positive: the positive's context with a response drawn
// uniformly from the corpus, redrawn while it equals the positive response.
inline std::vector<DialogueSample> sample_negatives(const std::vector<DialogueSample>& batch,
                                                    const std::vector<DialogueSample>& corpus,
                                                    RngStream& rng) {
  std::set<std::vector<int>> distinct;
  for (const auto& s : corpus) {
    distinct.insert(s.response);
    if (distinct.size() >= 2) break;
  }
  require(distinct.size() >= 2, "sample_negatives: corpus needs at least two distinct responses");
  std::vector<DialogueSample> out;
  out.reserve(batch.size());
  for (const auto& pos : batch) {
    DialogueSample neg;
    neg.context = pos.context;
    neg.timestamp = pos.timestamp;
    do {
      neg.response = corpus[rng.below(corpus.size())].response;
    } while (neg.response == pos.response);
    out.push_back(std::move(neg));
  }
  return out;
}

}  // namespace plato::training
