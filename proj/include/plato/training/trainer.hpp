#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plato/errors.hpp"
#include "plato/model/checkpoint.hpp"
#include "plato/model/input.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/optim.hpp"
#include "plato/numerics/rng.hpp"
#include "plato/objectives/losses.hpp"
#include "plato/training/metrics.hpp"
#include "plato/training/sampling.hpp"

namespace plato::training {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::size_t eval_interval = 100;
  std::size_t log_interval = 1;
  std::uint64_t seed = 0;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 100;
  double max_grad_norm = 1.0;
  // Validation subset cap (0 = whole set).
  std::size_t max_validation = 0;
  MlmConfig mlm;
  std::string log_path;         // JSONL metric log, empty = none
  std::string checkpoint_path;  // best checkpoint, empty = none
  std::string data_hash;        // recorded in the checkpoint

  AdamConfig adam() const {
    AdamConfig a;
    a.peak_lr = peak_lr;
    a.warmup_steps = warmup_steps;
    a.max_grad_norm = max_grad_norm;
    return a;
  }

  void validate() const {
    if (steps == 0 || batch_size == 0 || eval_interval == 0 || log_interval == 0)
      throw ConfigError("train: steps, batch_size, eval_interval and log_interval must be positive");
    if (!(peak_lr > 0.0)) throw ConfigError("train: peak_lr must be positive");
    if (warmup_steps == 0) throw ConfigError("train: warmup_steps must be positive");
    if (!(mlm.rate > 0.0 && mlm.rate <= 1.0)) throw ConfigError("train: mlm_rate must be in (0, 1]");
  }

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "steps=" << steps << "\nbatch_size=" << batch_size << "\neval_interval=" << eval_interval
        << "\nlog_interval=" << log_interval << "\nseed=" << seed << "\npeak_lr=" << peak_lr
        << "\nwarmup_steps=" << warmup_steps << "\nmax_grad_norm=" << max_grad_norm
        << "\nmax_validation=" << max_validation << "\nmlm_rate=" << mlm.rate << "\n";
    return out.str();
  }

  // Applies one key=value setting; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value) {
    try {
      if (key == "steps") steps = std::stoul(value);
      else if (key == "batch_size") batch_size = std::stoul(value);
      else if (key == "eval_interval") eval_interval = std::stoul(value);
      else if (key == "log_interval") log_interval = std::stoul(value);
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "peak_lr") peak_lr = std::stod(value);
      else if (key == "warmup_steps") warmup_steps = std::stoull(value);
      else if (key == "max_grad_norm") max_grad_norm = std::stod(value);
      else if (key == "max_validation") max_validation = std::stoul(value);
      else if (key == "mlm_rate") mlm.rate = std::stod(value);
      else return false;
    } catch (const std::logic_error&) {
      throw ConfigError("train: bad value for " + key + ": " + value);
    }
    return true;
  }
};

struct TrainResult {
  model::UnifiedTransformer<float> model;
  std::string stage;
  std::size_t best_step = 0;
  double best_metric = 0.0;
  std::vector<nlohmann::ordered_json> log;
};

// Random stream keys derived from the run seed.
enum StreamKey : std::uint64_t { kDataStream = 1, kGumbelStream, kNegativeStream, kMaskStream, kValidationStream };

namespace detail {

// Epoch-wise shuffled minibatches; the last partial batch of an epoch is
// merged into the next epoch's order.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, RngStream rng) : n_(n), rng_(rng) { require(n > 0, "train: empty training set"); }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    const std::size_t take = std::min(batch, n_);
    while (out.size() < take) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
    cursor_ = 0;
  }

  std::size_t n_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

class MetricLog {
 public:
  explicit MetricLog(const std::string& path) {
    if (!path.empty()) {
      out_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
      if (!*out_) throw std::runtime_error("cannot open metric log " + path);
    }
  }
  void write(const nlohmann::ordered_json& record) {
    records.push_back(record);
    if (out_) *out_ << record.dump() << "\n" << std::flush;
  }
  std::vector<nlohmann::ordered_json> records;

 private:
  std::unique_ptr<std::ofstream> out_;
};

inline std::vector<DialogueSample> validation_subset(const std::vector<DialogueSample>& val,
                                                     std::size_t cap) {
  if (cap == 0 || val.size() <= cap) return val;
  return {val.begin(), val.begin() + std::ptrdiff_t(cap)};
}

// Shared loop over `net`: `step_loss` builds the batch loss graph and adds
// its components to the step record; `validate` adds validation fields and
// returns the selection metric. The best-validation parameters are returned.
inline TrainResult run_training(model::UnifiedTransformer<float>& net, const std::string& stage,
                                std::size_t n_train, const TrainConfig& cfg,
                                const std::function<Var<float>(const std::vector<std::size_t>&, nlohmann::ordered_json&)>& step_loss,
                                const std::function<double(const model::UnifiedTransformer<float>&, nlohmann::ordered_json&)>& validate,
                                bool higher_is_better) {
  cfg.validate();
  RngStream root(cfg.seed);
  BatchSampler sampler(n_train, root.split(kDataStream));
  OptimizerState<float> opt;
  opt.config = cfg.adam();
  MetricLog log(cfg.log_path);

  std::optional<model::UnifiedTransformer<float>> best;
  double best_metric = higher_is_better ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  OptimizerState<float> best_opt;

  auto consider = [&](std::size_t step, nlohmann::ordered_json& record) {
    const double metric = validate(net, record);
    const bool better = higher_is_better ? metric > best_metric : metric < best_metric;
    if (better || !best) {
      best_metric = metric;
      best_step = step;
      best = net;
      best_opt = opt;
    }
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = sampler.next(cfg.batch_size);
    nlohmann::ordered_json record;
    record["step"] = step;
    record["loss"] = nullptr;
    net.zero_grad();
    auto loss = step_loss(batch, record);
    const float value = loss->value.data[0];
    if (!std::isfinite(value))
      throw NumericError(stage + ": non-finite loss at step " + std::to_string(step) +
                         " (lr " + std::to_string(lr_schedule(opt.step + 1, opt.config.warmup_steps, opt.config.peak_lr)) +
                         "); lower peak_lr or check the data");
    ag::backward(loss);
    adam_step(net.parameters(), opt);
    record["loss"] = value;
    record["lr"] = lr_schedule(opt.step, opt.config.warmup_steps, opt.config.peak_lr);
    const bool eval_now = step % cfg.eval_interval == 0 || step == cfg.steps;
    if (eval_now) consider(step, record);
    if (eval_now || step % cfg.log_interval == 0 || step == 1) log.write(record);
  }

  TrainResult result{std::move(*best), stage, best_step, best_metric, std::move(log.records)};
  if (!cfg.checkpoint_path.empty()) {
    auto ck = model::make_checkpoint(result.model, stage, best_step, &best_opt);
    ck.data_hash = cfg.data_hash;
    model::save_checkpoint(ck, cfg.checkpoint_path);
  }
  return result;
}

}  // namespace detail

inline std::vector<DialogueSample> gather(const std::vector<DialogueSample>& data,
                                         const std::vector<std::size_t>& idx) {
  std::vector<DialogueSample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

// Coarse-grained baseline: minimizes the one-to-one NLL. Validation metric is
// the token-weighted NLL of `val` (training data when `val` is empty).
inline TrainResult train_stage1(const std::vector<DialogueSample>& train, const std::vector<DialogueSample>& val,
                                const model::ModelConfig& model_config, const TrainConfig& cfg,
                                const std::string& stage = "stage1") {
  model::UnifiedTransformer<float> net(model_config, cfg.seed);
  const auto val_set = detail::validation_subset(val.empty() ? train : val, cfg.max_validation);
  auto step_loss = [&](const std::vector<std::size_t>& idx, nlohmann::ordered_json& rec) {
    auto loss = objectives::baseline_loss(net, gather(train, idx));
    rec["nll"] = loss->value.data[0];
    return loss;
  };
  auto validate = [&](const model::UnifiedTransformer<float>& m, nlohmann::ordered_json& rec) {
    const double v = baseline_token_nll(m, val_set);
    rec["val_nll"] = v;
    return v;
  };
  return detail::run_training(net, stage, train.size(), cfg, step_loss, validate, false);
}

// p(c|r): the stage-1 objective on (response -> context) pairs.
inline std::vector<DialogueSample> reverse_samples(const std::vector<DialogueSample>& samples,
                                                   const model::ModelConfig& config) {
  std::vector<DialogueSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto r = model::reverse_sample(s, config.max_context);
    if (r.response.size() > config.max_response) r.response.resize(config.max_response);
    out.push_back(std::move(r));
  }
  return out;
}

inline TrainResult train_backward_model(const std::vector<DialogueSample>& train,
                                        const std::vector<DialogueSample>& val,
                                        const model::ModelConfig& model_config, const TrainConfig& cfg) {
  return train_stage1(reverse_samples(train, model_config), reverse_samples(val, model_config), model_config, cfg,
                      "backward");
}

// Fine-grained generation: warm start from stage 1, then the integrated
// NLL + BOW loss with the latent sampled from the recognition posterior.
// Validation metric is the posterior-sampled token NLL.
inline TrainResult train_stage2_generation(const model::UnifiedTransformer<float>& stage1,
                                           const std::vector<DialogueSample>& train,
                                           const std::vector<DialogueSample>& val,
                                           const model::ModelConfig& model_config, const TrainConfig& cfg) {
  auto net = model::warm_start(stage1, model_config, cfg.seed);
  const auto val_set = detail::validation_subset(val.empty() ? train : val, cfg.max_validation);
  RngStream gumbel = RngStream(cfg.seed).split(kGumbelStream);
  auto step_loss = [&](const std::vector<std::size_t>& idx, nlohmann::ordered_json& rec) {
    auto g = objectives::generation_loss(net, gather(train, idx), gumbel);
    rec["nll"] = g.nll->value.data[0];
    rec["bow"] = g.bow->value.data[0];
    return g.total;
  };
  auto validate = [&](const model::UnifiedTransformer<float>& m, nlohmann::ordered_json& rec) {
    RngStream rng = RngStream(cfg.seed).split(kValidationStream);
    const double v = posterior_sampled_nll(m, val_set, rng);
    rec["val_nll"] = v;
    return v;
  };
  return detail::run_training(net, "stage2-gen", train.size(), cfg, step_loss, validate, false);
}

// Evaluation model: warm start from stage 1, then RCE against uniformly
// sampled negatives plus MLM. Validation metric is coherence accuracy.
inline TrainResult train_stage2_evaluation(const model::UnifiedTransformer<float>& stage1,
                                           const std::vector<DialogueSample>& train,
                                           const std::vector<DialogueSample>& val,
                                           const model::ModelConfig& model_config, const TrainConfig& cfg) {
  auto net = model::warm_start(stage1, model_config, cfg.seed);
  const auto val_set = detail::validation_subset(val.empty() ? train : val, cfg.max_validation);
  // Validation negatives come from the validation set when it is varied enough.
  const auto& val_pool = [&]() -> const std::vector<DialogueSample>& {
    for (const auto& s : val_set)
      if (s.response != val_set.front().response) return val_set;
    return train;
  }();
  RngStream root(cfg.seed);
  RngStream negatives = root.split(kNegativeStream);
  RngStream masks = root.split(kMaskStream);
  auto step_loss = [&](const std::vector<std::size_t>& idx, nlohmann::ordered_json& rec) {
    const auto pos = gather(train, idx);
    const auto neg = sample_negatives(pos, train, negatives);
    std::vector<objectives::MaskedBatch> mb;
    for (const auto& s : pos)
      mb.push_back(apply_mlm_mask(model::build_input(s, model::Task::kMlm, model_config).tokens,
                                  model_config.vocab_size, masks, cfg.mlm));
    auto e = objectives::evaluation_loss(net, pos, neg, mb);
    rec["rce"] = e.rce->value.data[0];
    rec["mlm"] = e.mlm->value.data[0];
    return e.total;
  };
  auto validate = [&](const model::UnifiedTransformer<float>& m, nlohmann::ordered_json& rec) {
    RngStream rng = RngStream(cfg.seed).split(kValidationStream);
    const auto v = coherence_metrics(m, val_set, val_pool, rng, cfg.mlm);
    rec["val_accuracy"] = v.accuracy;
    rec["val_rce"] = v.rce;
    rec["val_mlm"] = v.mlm;
    return v.accuracy;
  };
  return detail::run_training(net, "stage2-eval", train.size(), cfg, step_loss, validate, true);
}

}  // namespace plato::training
