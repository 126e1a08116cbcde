#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "plato/model/config.hpp"
#include "plato/model/forward.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/grad_check.hpp"
#include "plato/numerics/rng.hpp"
#include "plato/objectives/losses.hpp"
#include "plato/training/sampling.hpp"

namespace plato::training {

enum class Objective { kNll, kBow, kGeneration, kRce, kMlm, kEvaluation };

inline constexpr std::array<Objective, 6> kAllObjectives{Objective::kNll, Objective::kBow,
                                                         Objective::kGeneration, Objective::kRce,
                                                         Objective::kMlm, Objective::kEvaluation};

inline std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::kNll: return "nll";
    case Objective::kBow: return "bow";
    case Objective::kGeneration: return "generation";
    case Objective::kRce: return "rce";
    case Objective::kMlm: return "mlm";
    case Objective::kEvaluation: return "evaluation";
  }
  return "?";
}

// A small random model configuration and two random samples for it.
struct GradCheckCase {
  model::ModelConfig config;
  std::vector<DialogueSample> samples;
  std::uint64_t seed = 0;
};

inline GradCheckCase random_grad_case(std::uint64_t seed) {
  RngStream rng(seed);
  GradCheckCase c;
  c.seed = seed;
  auto& m = c.config;
  m.layers = 1 + rng.below(2);
  m.heads = 1 + rng.below(2);
  m.dim = m.heads * (4 + rng.below(3));
  m.latent_count = 2 + rng.below(3);
  m.vocab_size = 8 + rng.below(6);
  m.max_context = 8;
  m.max_response = 4;
  m.ffn_multiplier = 2;
  m.init_std = 0.3;
  const int regular = int(m.vocab_size) - corpus::Vocab::kNumSpecial;
  for (int s = 0; s < 2; ++s) {
    DialogueSample sample;
    const std::size_t utterances = 1 + rng.below(2);
    for (std::size_t u = 0; u < utterances; ++u) {
      std::vector<int> utt(1 + rng.below(2));
      for (auto& t : utt) t = corpus::Vocab::kNumSpecial + int(rng.below(std::uint64_t(regular)));
      sample.context.push_back(utt);
    }
    sample.response.resize(1 + rng.below(3));
    for (auto& t : sample.response) t = corpus::Vocab::kNumSpecial + int(rng.below(std::uint64_t(regular)));
    c.samples.push_back(sample);
  }
  // Distinct responses so the negatives are well defined.
  if (c.samples[0].response == c.samples[1].response) c.samples[1].response.push_back(corpus::Vocab::kNumSpecial);
  return c;
}

// Builds the scalar loss of `objective` on the case as a fresh graph. All
// randomness (Gumbel noise, negatives, masks) is drawn from streams keyed by
// the case seed, so repeated calls see identical draws.
inline Var<double> objective_loss(Objective objective, const model::UnifiedTransformer<double>& net,
                                  const GradCheckCase& c) {
  const auto& samples = c.samples;
  switch (objective) {
    case Objective::kNll:
      return objectives::baseline_loss(net, samples);
    case Objective::kBow: {
      const auto in = model::build_input(samples[0], model::Task::kLatentGen, net.config(),
                                         std::vector<double>(net.config().latent_count,
                                                             1.0 / double(net.config().latent_count)));
      auto out = model::forward_generation(net, in);
      return objectives::bow_loss(net, out.latent_hidden, in.targets);
    }
    case Objective::kGeneration: {
      RngStream rng(c.seed, 0);
      auto g = objectives::generation_loss(net, samples, rng);
      return g.total;
    }
    case Objective::kRce:
    case Objective::kMlm:
    case Objective::kEvaluation: {
      RngStream rng = RngStream(c.seed).split(1);
      const auto negatives = sample_negatives(samples, samples, rng);
      std::vector<objectives::MaskedBatch> masks;
      for (const auto& s : samples)
        masks.push_back(apply_mlm_mask(model::build_input(s, model::Task::kMlm, net.config()).tokens,
                                       net.config().vocab_size, rng));
      auto e = objectives::evaluation_loss(net, samples, negatives, masks);
      if (objective == Objective::kRce) return e.rce;
      if (objective == Objective::kMlm) return e.mlm;
      return e.total;
    }
  }
  return nullptr;
}

// Central-difference check of every parameter coordinate of a fresh model
// built for the case.
inline GradCheckResult check_objective_gradients(Objective objective, const GradCheckCase& c,
                                                 double epsilon = 1e-3) {
  model::UnifiedTransformer<double> net(c.config, c.seed);
  return grad_check([&]() { return objective_loss(objective, net, c); }, net.parameters(), epsilon);
}

}  // namespace plato::training
