#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"
#include "plato/model/forward.hpp"
#include "plato/model/input.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/autograd.hpp"
#include "plato/numerics/rng.hpp"

namespace plato::inference {

using corpus::DialogueSample;
using corpus::Vocab;
using model::UnifiedTransformer;

inline constexpr std::size_t kMaxDecodeLength = 128;
inline constexpr std::size_t kMaxHistoryTokens = 128;

struct DecodeConfig {
  std::string strategy = "greedy";  // or "topk"
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::size_t max_length = kMaxDecodeLength;

  static DecodeConfig from_model(const model::ModelConfig& c) {
    DecodeConfig d;
    d.strategy = c.decode_strategy;
    d.top_k = c.top_k;
    d.temperature = c.decode_temperature;
    return d;
  }

  void validate() const {
    if (strategy != "greedy" && strategy != "topk") throw ConfigError("decode: strategy must be greedy or topk");
    if (strategy == "topk" && (top_k == 0 || !(temperature > 0.0)))
      throw ConfigError("decode: top_k and temperature must be positive");
    if (max_length == 0) throw ConfigError("decode: max_length must be positive");
  }
};

// Every latent decoded an empty response.
class EmptyDecodeError : public std::runtime_error {
 public:
  EmptyDecodeError() : std::runtime_error("generate_candidates: every latent decoded an empty response") {}
};

struct ScoredCandidate {
  std::size_t latent_id = 0;  // 1..K
  std::vector<int> response;
  double coherence = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> forward;
  std::optional<double> backward;
};

namespace detail {

// Next token from one row of logits. Special tokens other than EOU are never
// emitted.
inline int pick_token(const float* logits, std::size_t vocab, const DecodeConfig& cfg, RngStream* rng) {
  auto allowed = [](std::size_t id) { return id == std::size_t(Vocab::kEndUtterance) || !Vocab::is_special(int(id)); };
  if (cfg.strategy == "greedy") {
    std::size_t best = vocab;
    for (std::size_t v = 0; v < vocab; ++v)
      if (allowed(v) && (best == vocab || logits[v] > logits[best])) best = v;
    return int(best);
  }
  require(rng != nullptr, "generate_candidates: top-k decoding needs a random stream");
  std::vector<std::size_t> ids;
  for (std::size_t v = 0; v < vocab; ++v)
    if (allowed(v)) ids.push_back(v);
  const std::size_t k = std::min(cfg.top_k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + std::ptrdiff_t(k), ids.end(), [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  ids.resize(k);
  std::vector<double> w(k);
  const double top = double(logits[ids.front()]);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += w[i] = std::exp((double(logits[ids[i]]) - top) / cfg.temperature);
  double u = rng->uniform() * total;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return int(ids[i]);
    u -= w[i];
  }
  return int(ids.back());
}

// Mean log-probability of `targets[0..count)` under logits rows.
template <typename Real>
double mean_log_prob(const Tensor<Real>& logits, const std::vector<int>& targets, std::size_t count) {
  const std::size_t v = logits.cols();
  double sum = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const Real* row = logits.data.data() + t * v;
    const double top = double(*std::max_element(row, row + v));
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(double(row[j]) - top);
    sum += double(row[targets[t]]) - top - std::log(z);
  }
  return sum / double(count);
}

}  // namespace detail

// One candidate per latent value, decoded with one-hot latent weights until
// EOU or the length cap. Candidates that decode to nothing are dropped.
inline std::vector<ScoredCandidate> generate_candidates(const UnifiedTransformer<float>& gen,
                                                        const std::vector<std::vector<int>>& context,
                                                        const DecodeConfig& cfg = {}, RngStream* rng = nullptr) {
  cfg.validate();
  require(!context.empty(), "generate_candidates: empty context");
  const auto& mc = gen.config();
  const std::size_t k = mc.latent_count;
  const std::size_t cap = std::min(cfg.max_length, mc.max_response);
  NoGradGuard no_grad;

  std::vector<DialogueSample> drafts(k);
  std::vector<bool> done(k, false);
  for (auto& d : drafts) d.context = context;
  for (;;) {
    std::vector<std::size_t> active;
    for (std::size_t z = 0; z < k; ++z)
      if (!done[z]) active.push_back(z);
    if (active.empty()) break;
    std::vector<model::AssembledInput> inputs;
    inputs.reserve(active.size());
    for (std::size_t z : active)
      inputs.push_back(model::build_input(drafts[z], model::Task::kLatentGen, mc, model::one_hot(k, z)));
    std::vector<const model::AssembledInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    const auto out = model::forward_generation(gen, ptrs);
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto& logits = out[i].logits->value;
      const float* last = logits.data.data() + (logits.rows() - 1) * logits.cols();
      const int token = detail::pick_token(last, logits.cols(), cfg, rng);
      auto& d = drafts[active[i]];
      if (token == Vocab::kEndUtterance) {
        done[active[i]] = true;
        continue;
      }
      d.response.push_back(token);
      if (d.response.size() >= cap) done[active[i]] = true;
    }
  }

  std::vector<ScoredCandidate> candidates;
  for (std::size_t z = 0; z < k; ++z)
    if (!drafts[z].response.empty()) {
      ScoredCandidate c;
      c.latent_id = z + 1;
      c.response = std::move(drafts[z].response);
      candidates.push_back(std::move(c));
    }
  if (candidates.empty()) throw EmptyDecodeError();
  return candidates;
}

// Fills in p(l = 1 | c, r_z) for every candidate.
inline void score_coherence(const UnifiedTransformer<float>& eval, const std::vector<std::vector<int>>& context,
                            std::vector<ScoredCandidate>& candidates) {
  NoGradGuard no_grad;
  std::vector<model::AssembledInput> inputs;
  for (const auto& c : candidates)
    inputs.push_back(model::build_input(DialogueSample{context, c.response, 0}, model::Task::kCoherence, eval.config()));
  std::vector<const model::AssembledInput*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);
  if (ptrs.empty()) return;
  const auto logits = model::coherence_logits(eval, ptrs);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    candidates[i].coherence = ag::sigmoid_value(double(logits->value.data[i]));
}

// Index of the highest coherence; ties go to the lowest latent id.
inline std::size_t select_index(const std::vector<ScoredCandidate>& candidates) {
  require(!candidates.empty(), "select_response: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& a = candidates[i];
    const auto& b = candidates[best];
    if (a.coherence > b.coherence || (a.coherence == b.coherence && a.latent_id < b.latent_id)) best = i;
  }
  return best;
}

inline ScoredCandidate select_response(const UnifiedTransformer<float>& eval,
                                       const std::vector<std::vector<int>>& context,
                                       std::vector<ScoredCandidate> candidates) {
  score_coherence(eval, context, candidates);
  return candidates[select_index(candidates)];
}

// (1/T) sum_t log p(r_t | c, r_<t) under a latent-free generation model.
template <typename Real>
double score_forward(const UnifiedTransformer<Real>& gen, const std::vector<std::vector<int>>& context,
                     const std::vector<int>& response) {
  require(!response.empty(), "score_forward: empty response");
  NoGradGuard no_grad;
  const auto in = model::build_input(DialogueSample{context, response, 0}, model::Task::kBaselineGen, gen.config());
  const auto out = model::forward_generation(gen, {&in});
  return detail::mean_log_prob(out.front().logits->value, in.targets, response.size());
}

// (1/|c|) log p(c | r) under the backward model.
template <typename Real>
double score_backward(const UnifiedTransformer<Real>& backward, const std::vector<std::vector<int>>& context,
                      const std::vector<int>& response) {
  require(!response.empty(), "score_backward: empty response");
  const auto& mc = backward.config();
  auto r = model::reverse_sample(DialogueSample{context, response, 0}, mc.max_context);
  if (r.response.size() > mc.max_response) r.response.resize(mc.max_response);
  return score_forward(backward, r.context, r.response);
}

struct ChatModels {
  const UnifiedTransformer<float>& generator;
  const UnifiedTransformer<float>& evaluator;
  const Vocab& vocab;
  DecodeConfig decode;
};

struct ChatTurn {
  std::string text;
  ScoredCandidate chosen;
  std::vector<ScoredCandidate> candidates;
};

// Encodes the history (oldest first) as a context of at most 128 tokens,
// dropping the oldest utterances first.
inline std::vector<std::vector<int>> encode_history(const ChatModels& m, const std::vector<std::string>& history) {
  require(!history.empty(), "chat_turn: empty history");
  const std::size_t budget = std::min({kMaxHistoryTokens, m.generator.config().max_context,
                                       m.evaluator.config().max_context});
  std::vector<std::vector<int>> context;
  for (const auto& u : history) context.push_back(m.vocab.encode(u));
  return corpus::truncate_context(std::move(context), budget);
}

inline ChatTurn chat_turn(const ChatModels& m, const std::vector<std::string>& history, RngStream* rng = nullptr) {
  const auto context = encode_history(m, history);
  ChatTurn turn;
  turn.candidates = generate_candidates(m.generator, context, m.decode, rng);
  score_coherence(m.evaluator, context, turn.candidates);
  turn.chosen = turn.candidates[select_index(turn.candidates)];
  turn.text = m.vocab.decode(turn.chosen.response);
  return turn;
}

struct TranscriptEntry {
  std::size_t turn = 0;
  std::string speaker;
  std::string text;
  std::optional<std::size_t> latent_id;
  std::optional<double> coherence;
};

struct Transcript {
  std::vector<TranscriptEntry> utterances;
};

inline nlohmann::ordered_json transcript_record(const TranscriptEntry& e) {
  nlohmann::ordered_json j;
  j["turn"] = e.turn;
  j["speaker"] = e.speaker;
  j["text"] = e.text;
  j["latent_id"] = e.latent_id ? nlohmann::ordered_json(*e.latent_id) : nlohmann::ordered_json(nullptr);
  j["scores"] = nlohmann::ordered_json::object();
  if (e.coherence) j["scores"]["coherence"] = *e.coherence;
  return j;
}

// Seed utterance (P1) followed by alternating model turns until `total`
// utterances exist.
inline Transcript self_chat(const ChatModels& m, const std::string& seed_utterance, std::size_t total = 10,
                            RngStream* rng = nullptr) {
  require(total >= 2, "self_chat: total must be at least 2");
  Transcript t;
  std::vector<std::string> history{seed_utterance};
  t.utterances.push_back({0, "P1", seed_utterance, std::nullopt, std::nullopt});
  while (t.utterances.size() < total) {
    const auto turn = chat_turn(m, history, rng);
    const std::size_t index = t.utterances.size();
    t.utterances.push_back({index, index % 2 == 0 ? "P1" : "P2", turn.text, turn.chosen.latent_id,
                            turn.chosen.coherence});
    history.push_back(turn.text);
  }
  return t;
}

}  // namespace plato::inference
