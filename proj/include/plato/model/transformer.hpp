#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "plato/errors.hpp"
#include "plato/model/config.hpp"
#include "plato/model/input.hpp"
#include "plato/numerics/autograd.hpp"
#include "plato/numerics/rng.hpp"

namespace plato::model {

// Pre-normalization transformer shared by all tasks, with four heads:
//   LM          logits = h E^T (tied to the token embedding table E)
//   recognition softmax(W1 h_[M] + b1) over K latent values
//   BOW         f = W2 h_z + b2 over the vocabulary
//   coherence   sigmoid(w . h_[M] + b)
// Copies are deep; parameters are graph leaves owned by the model.
template <typename Real>
class UnifiedTransformer {
 public:
  explicit UnifiedTransformer(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    declare();
    RngStream rng(seed);
    initialize([](const std::string&) { return true; }, rng);
  }

  UnifiedTransformer(const UnifiedTransformer& other) : config_(other.config_) {
    declare();
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.params_[i]->value;
  }
  UnifiedTransformer& operator=(const UnifiedTransformer& other) {
    if (this != &other) {
      UnifiedTransformer copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  UnifiedTransformer(UnifiedTransformer&&) noexcept = default;
  UnifiedTransformer& operator=(UnifiedTransformer&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Var<Real>>& parameters() const { return params_; }

  const Var<Real>& param(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "model: no parameter named " + name);
    return params_[it->second];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  // Backbone: everything except the latent table and the recognition, BOW
  // and coherence heads. The LM head is tied to the token table, so it is
  // part of the backbone.
  static bool is_backbone(const std::string& name) {
    return !(name.rfind("latent.", 0) == 0 || name.rfind("recognition.", 0) == 0 ||
             name.rfind("bow.", 0) == 0 || name.rfind("coherence.", 0) == 0);
  }

  // Re-draws the parameters selected by `which`: weights and embeddings from
  // N(0, init_std^2), biases zero, norm gains one. Draw order is declaration
  // order, so the result depends only on the stream.
  void initialize(const std::function<bool(const std::string&)>& which, RngStream& rng) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!which(names_[i])) continue;
      auto& t = params_[i]->value;
      const auto& name = names_[i];
      if (ends_with(name, ".gain")) {
        std::fill(t.data.begin(), t.data.end(), Real(1));
      } else if (ends_with(name, ".bias")) {
        std::fill(t.data.begin(), t.data.end(), Real(0));
      } else {
        for (auto& v : t.data) v = Real(rng.normal() * config_.init_std);
      }
    }
  }

  void set_all(Real value) {
    for (auto& p : params_) std::fill(p->value.data.begin(), p->value.data.end(), value);
  }

  void zero_grad() const { ag::zero_grad(params_); }

  template <typename Other>
  UnifiedTransformer<Other> cast() const {
    UnifiedTransformer<Other> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.parameters()[i]->value = params_[i]->value.template cast<Other>();
    return out;
  }

  // Runs the packed batch through embeddings and all blocks; returns the
  // final-normalized hidden states [sum of lengths, D]. `slot_weights[i]`,
  // when non-null, supplies the [1, K] latent mixture for input i; otherwise
  // a latent-gen input uses its stored numeric weights. `offsets` receives
  // the first row of each input.
  Var<Real> encode(const std::vector<const AssembledInput*>& batch,
                   const std::vector<Var<Real>>& slot_weights = {},
                   std::vector<std::size_t>* offsets = nullptr) const {
    require(!batch.empty(), "encode: empty batch");
    require(slot_weights.empty() || slot_weights.size() == batch.size(),
            "encode: one slot weight entry per input");
    const std::size_t d = config_.dim;
    std::vector<int> tokens, roles, positions;
    std::vector<AttentionSegment> segments;
    std::vector<std::pair<std::size_t, Var<Real>>> slots;
    std::vector<std::size_t> starts;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& in = *batch[b];
      require(in.length() <= config_.max_positions(), "encode: sequence exceeds position table");
      const std::size_t start = tokens.size();
      starts.push_back(start);
      segments.push_back({start, in.mask});
      tokens.insert(tokens.end(), in.tokens.begin(), in.tokens.end());
      roles.insert(roles.end(), in.roles.begin(), in.roles.end());
      positions.insert(positions.end(), in.positions.begin(), in.positions.end());
      if (in.task == Task::kLatentGen) {
        Var<Real> w = slot_weights.empty() ? nullptr : slot_weights[b];
        if (!w) {
          require(in.latent_weights.has_value(), "encode: latent-gen input without weights");
          Tensor<Real> t({1, config_.latent_count});
          for (std::size_t k = 0; k < t.size(); ++k) t.data[k] = Real((*in.latent_weights)[k]);
          w = ag::constant(std::move(t));
        }
        require(w->value.size() == config_.latent_count, "encode: latent weight width");
        slots.emplace_back(start, ag::matmul(w, latent_));
      }
    }
    if (offsets) *offsets = starts;

    auto x = ag::add(ag::embedding(token_, tokens), ag::embedding(position_, positions));
    x = ag::add(x, ag::embedding(role_, roles));
    if (!slots.empty()) x = ag::add(x, ag::place_rows<Real>(tokens.size(), d, slots));

    for (const auto& blk : blocks_) {
      auto h = ag::layer_norm(x, blk.ln1_gain, blk.ln1_bias);
      // Keys carry no bias: it would shift every score of a query equally.
      auto qkv_bias = ag::concat_cols<Real>({blk.q_bias, key_bias_, blk.v_bias});
      auto qkv = ag::add_row(ag::matmul_nt(h, blk.qkv_weight), qkv_bias);
      auto att = ag::attention(qkv, config_.heads, segments);
      x = ag::add(x, ag::add_row(ag::matmul_nt(att, blk.out_weight), blk.out_bias));
      h = ag::layer_norm(x, blk.ln2_gain, blk.ln2_bias);
      h = ag::gelu(ag::add_row(ag::matmul_nt(h, blk.ffn_in_weight), blk.ffn_in_bias));
      x = ag::add(x, ag::add_row(ag::matmul_nt(h, blk.ffn_out_weight), blk.ffn_out_bias));
    }
    return ag::layer_norm(x, final_gain_, final_bias_);
  }

  Var<Real> lm_logits(const Var<Real>& hidden) const { return ag::matmul_nt(hidden, token_); }
  Var<Real> recognition_logits(const Var<Real>& h) const {
    return ag::add_row(ag::matmul_nt(h, rec_weight_), rec_bias_);
  }
  Var<Real> bow_logits(const Var<Real>& h) const {
    return ag::add_row(ag::matmul_nt(h, bow_weight_), bow_bias_);
  }
  Var<Real> coherence_logits(const Var<Real>& h) const {
    return ag::add_row(ag::matmul_nt(h, coh_weight_), coh_bias_);
  }

 private:
  struct Block {
    Var<Real> ln1_gain, ln1_bias, qkv_weight, q_bias, v_bias, out_weight, out_bias;
    Var<Real> ln2_gain, ln2_bias, ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias;
  };

  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  Var<Real> add_param(const std::string& name, std::vector<std::size_t> shape) {
    auto p = ag::parameter(Tensor<Real>(std::move(shape)));
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(p);
    return p;
  }

  void declare() {
    const std::size_t d = config_.dim, v = config_.vocab_size, k = config_.latent_count;
    const std::size_t f = config_.ffn_multiplier * d;
    key_bias_ = ag::constant(Tensor<Real>({1, d}));
    token_ = add_param("embed.token", {v, d});
    position_ = add_param("embed.position", {config_.max_positions(), d});
    role_ = add_param("embed.role", {kRoleCount, d});
    latent_ = add_param("latent.table", {k, d});
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      Block b;
      b.ln1_gain = add_param(p + "ln1.gain", {d});
      b.ln1_bias = add_param(p + "ln1.bias", {d});
      b.qkv_weight = add_param(p + "attn.qkv.weight", {3 * d, d});
      b.q_bias = add_param(p + "attn.q.bias", {d});
      b.v_bias = add_param(p + "attn.v.bias", {d});
      b.out_weight = add_param(p + "attn.out.weight", {d, d});
      b.out_bias = add_param(p + "attn.out.bias", {d});
      b.ln2_gain = add_param(p + "ln2.gain", {d});
      b.ln2_bias = add_param(p + "ln2.bias", {d});
      b.ffn_in_weight = add_param(p + "ffn.in.weight", {f, d});
      b.ffn_in_bias = add_param(p + "ffn.in.bias", {f});
      b.ffn_out_weight = add_param(p + "ffn.out.weight", {d, f});
      b.ffn_out_bias = add_param(p + "ffn.out.bias", {d});
      blocks_.push_back(b);
    }
    final_gain_ = add_param("final_ln.gain", {d});
    final_bias_ = add_param("final_ln.bias", {d});
    rec_weight_ = add_param("recognition.weight", {k, d});
    rec_bias_ = add_param("recognition.bias", {k});
    bow_weight_ = add_param("bow.weight", {v, d});
    bow_bias_ = add_param("bow.bias", {v});
    coh_weight_ = add_param("coherence.weight", {1, d});
    coh_bias_ = add_param("coherence.bias", {1});
  }

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Var<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  Var<Real> token_, position_, role_, latent_, key_bias_;
  std::vector<Block> blocks_;
  Var<Real> final_gain_, final_bias_;
  Var<Real> rec_weight_, rec_bias_, bow_weight_, bow_bias_, coh_weight_, coh_bias_;
};

// Stage-2 initialization: backbone (and tied LM head) copied bit-exactly from
// the stage-1 model, latent table and the three task heads drawn fresh.
template <typename Real>
UnifiedTransformer<Real> warm_start(const UnifiedTransformer<Real>& stage1, const ModelConfig& target,
                                    std::uint64_t seed) {
  const auto& src = stage1.config();
  require(src.layers == target.layers && src.heads == target.heads && src.dim == target.dim &&
              src.vocab_size == target.vocab_size && src.ffn_multiplier == target.ffn_multiplier &&
              src.max_positions() == target.max_positions(),
          "warm_start: backbone shapes differ between stage-1 and target configs");
  UnifiedTransformer<Real> model(target, seed);
  for (std::size_t i = 0; i < model.names().size(); ++i) {
    const auto& name = model.names()[i];
    if (!UnifiedTransformer<Real>::is_backbone(name)) continue;
    const auto& from = stage1.param(name)->value;
    auto& to = model.parameters()[i]->value;
    require(from.shape == to.shape, "warm_start: shape mismatch for " + name);
    to = from;
  }
  return model;
}

}  // namespace plato::model
