#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"
#include "plato/evalkit/metrics.hpp"
#include "plato/inference/pipeline.hpp"
#include "plato/model/checkpoint.hpp"
#include "plato/model/forward.hpp"
#include "plato/training/metrics.hpp"
#include "plato/training/synthetic.hpp"

namespace plato::evalkit {

using corpus::RawSample;
using corpus::Vocab;
using model::UnifiedTransformer;

// Selection benchmark from a synthetic corpus. Each context gets the generic
// reply and a verbatim copy of its last utterance (label 0), then its true
// responses (label 1): held-out ones when present, else the training ones.
// Distractors come first so ties never favour a positive.
inline std::vector<LabeledCandidateSet> make_selection_benchmark(const training::SyntheticCorpus& corpus) {
  const auto& positives = corpus.heldout.empty() ? corpus.train : corpus.heldout;
  std::vector<LabeledCandidateSet> sets;
  std::map<std::vector<std::string>, std::size_t> index;
  for (const auto& s : positives) {
    if (s.response == corpus.generic_response) continue;
    auto [it, fresh] = index.try_emplace(s.context, sets.size());
    if (fresh) {
      LabeledCandidateSet set;
      set.context = s.context;
      set.candidates = {corpus.generic_response, s.context.back()};
      set.labels = {0, 0};
      sets.push_back(std::move(set));
    }
    sets[it->second].candidates.push_back(s.response);
    sets[it->second].labels.push_back(1);
  }
  require(!sets.empty(), "make_selection_benchmark: corpus has no positives");
  return sets;
}

inline std::vector<std::vector<int>> encode_context(const Vocab& vocab, const std::vector<std::string>& context,
                                                    std::size_t budget) {
  std::vector<std::vector<int>> out;
  for (const auto& u : context) out.push_back(vocab.encode(u));
  return corpus::truncate_context(std::move(out), budget);
}

inline std::vector<int> encode_response(const Vocab& vocab, const std::string& text, std::size_t limit) {
  auto r = vocab.encode(text);
  if (r.size() > limit) r.resize(limit);
  return r;
}

// Length-average log p(r|c) under a latent-free generation model.
inline Scorer forward_scorer(const UnifiedTransformer<float>& gen, const Vocab& vocab) {
  return [&gen, &vocab](const std::vector<std::string>& context, const std::string& response) {
    const auto& c = gen.config();
    return inference::score_forward(gen, encode_context(vocab, context, c.max_context),
                                    encode_response(vocab, response, c.max_response));
  };
}

// (1/|c|) log p(c|r) under the backward model.
inline Scorer backward_scorer(const UnifiedTransformer<float>& backward, const Vocab& vocab) {
  return [&backward, &vocab](const std::vector<std::string>& context, const std::string& response) {
    const auto& c = backward.config();
    return inference::score_backward(backward, encode_context(vocab, context, c.max_context),
                                     encode_response(vocab, response, c.max_response));
  };
}

// p(l = 1 | c, r) under the bidirectional evaluation model.
inline Scorer coherence_scorer(const UnifiedTransformer<float>& eval, const Vocab& vocab) {
  return [&eval, &vocab](const std::vector<std::string>& context, const std::string& response) {
    const auto& c = eval.config();
    return model::forward_coherence(
        eval, corpus::DialogueSample{encode_context(vocab, context, c.max_context),
                                     encode_response(vocab, response, c.max_response), 0});
  };
}

struct ProbeResult {
  double stage1_nll = 0.0;
  double stage2_nll = 0.0;
  std::vector<std::size_t> distinct_candidates;  // per distinct context, in corpus order
  std::size_t contexts_with_three = 0;           // contexts with at least 3 distinct candidates

  double ratio() const { return stage2_nll / stage1_nll; }
  double diverse_fraction() const {
    return distinct_candidates.empty() ? 0.0 : double(contexts_with_three) / double(distinct_candidates.size());
  }
};

// Stage-1 token NLL, stage-2 posterior-sampled token NLL, and the number of
// distinct greedy candidates per context.
inline ProbeResult one_to_many_probe(const UnifiedTransformer<float>& stage1, const UnifiedTransformer<float>& stage2,
                                     const std::vector<corpus::DialogueSample>& samples, RngStream rng) {
  require(!samples.empty(), "one_to_many_probe: empty corpus");
  ProbeResult p;
  p.stage1_nll = training::baseline_token_nll(stage1, samples);
  p.stage2_nll = training::posterior_sampled_nll(stage2, samples, rng);
  std::set<std::vector<std::vector<int>>> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.context).second) continue;
    // Distinct strings over all K decodes; empty decodes count as one string.
    std::set<std::vector<int>> distinct;
    try {
      const auto candidates = inference::generate_candidates(stage2, s.context);
      for (const auto& c : candidates) distinct.insert(c.response);
      if (candidates.size() < stage2.config().latent_count) distinct.insert(std::vector<int>{});
    } catch (const inference::EmptyDecodeError&) {
      distinct.insert(std::vector<int>{});
    }
    p.distinct_candidates.push_back(distinct.size());
    p.contexts_with_three += distinct.size() >= 3;
  }
  return p;
}

// Checkpoint-level probe: both checkpoints must carry the corpus hash.
inline ProbeResult one_to_many_probe(const model::Checkpoint& stage1, const model::Checkpoint& stage2,
                                     const std::vector<RawSample>& corpus, const Vocab& vocab, RngStream rng) {
  if (stage1.stage != "stage1") throw LoadError("probe: first checkpoint is not a stage-1 model");
  if (stage2.stage != "stage2-gen") throw LoadError("probe: second checkpoint is not a stage-2 generation model");
  const auto hash = corpus::samples_hash(corpus);
  for (const auto* ck : {&stage1, &stage2})
    if (ck->data_hash != hash)
      throw ConfigError("probe: corpus hash " + hash + " does not match checkpoint (" +
                        (ck->data_hash.empty() ? std::string("none recorded") : ck->data_hash) + ")");
  const auto m1 = model::restore_model<float>(stage1);
  const auto m2 = model::restore_model<float>(stage2);
  corpus::SequenceLimits limits;
  limits.max_context = std::min(m1.config().max_context, m2.config().max_context);
  limits.max_response = std::min(m1.config().max_response, m2.config().max_response);
  limits.min_response = 1;
  return one_to_many_probe(m1, m2, corpus::encode_samples(corpus, vocab, limits), rng);
}

}  // namespace plato::evalkit
