#pragma once

#include <cstddef>
#include <map>
#include <sstream>
#include <string>

#include "plato/errors.hpp"

namespace plato::model {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t dim = 128;
  std::size_t latent_count = 4;
  std::size_t vocab_size = 512;
  std::size_t max_context = 128;
  std::size_t max_response = 128;
  std::size_t ffn_multiplier = 4;
  double temperature = 1.0;
  std::string decode_strategy = "greedy";  // or "topk"
  std::size_t top_k = 8;
  double decode_temperature = 1.0;
  double init_std = 0.02;

  // Latent/[M] slot + context + begin-of-utterance + response.
  std::size_t max_positions() const { return 1 + max_context + 1 + max_response; }
  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    if (layers == 0 || heads == 0 || dim == 0) throw ConfigError("model: layers, heads, dim must be positive");
    if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
    if (latent_count < 2) throw ConfigError("model: latent_count must be at least 2");
    if (vocab_size < 7) throw ConfigError("model: vocabulary too small");
    if (max_context < 2 || max_response < 2) throw ConfigError("model: sequence limits too small");
    if (!(temperature > 0.0)) throw ConfigError("model: temperature must be positive");
    if (decode_strategy != "greedy" && decode_strategy != "topk")
      throw ConfigError("model: decode_strategy must be greedy or topk");
  }

  // Closed-form parameter count: embeddings, blocks, final norm, and heads.
  std::size_t parameter_count() const {
    const std::size_t d = dim, v = vocab_size, k = latent_count, f = ffn_multiplier * dim;
    const std::size_t embeddings = v * d + max_positions() * d + 3 * d + k * d;
    const std::size_t block = 2 * d + (3 * d * d + 2 * d) + (d * d + d) + 2 * d + (f * d + f) + (d * f + d);
    const std::size_t heads_total = (k * d + k) + (v * d + v) + (d + 1);
    return embeddings + layers * block + 2 * d + heads_total;
  }

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "layers=" << layers << "\nheads=" << heads << "\ndim=" << dim
        << "\nlatent_count=" << latent_count << "\nvocab_size=" << vocab_size
        << "\nmax_context=" << max_context << "\nmax_response=" << max_response
        << "\nffn_multiplier=" << ffn_multiplier << "\ntemperature=" << temperature
        << "\ndecode_strategy=" << decode_strategy << "\ntop_k=" << top_k
        << "\ndecode_temperature=" << decode_temperature << "\ninit_std=" << init_std << "\n";
    return out.str();
  }

  // Applies one key=value setting; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value) {
    try {
      if (key == "layers") layers = std::stoul(value);
      else if (key == "heads") heads = std::stoul(value);
      else if (key == "dim") dim = std::stoul(value);
      else if (key == "latent_count") latent_count = std::stoul(value);
      else if (key == "vocab_size") vocab_size = std::stoul(value);
      else if (key == "max_context") max_context = std::stoul(value);
      else if (key == "max_response") max_response = std::stoul(value);
      else if (key == "ffn_multiplier") ffn_multiplier = std::stoul(value);
      else if (key == "temperature") temperature = std::stod(value);
      else if (key == "decode_strategy") decode_strategy = value;
      else if (key == "top_k") top_k = std::stoul(value);
      else if (key == "decode_temperature") decode_temperature = std::stod(value);
      else if (key == "init_std") init_std = std::stod(value);
      else return false;
    } catch (const std::logic_error&) {
      throw ConfigError("model: bad value for " + key + ": " + value);
    }
    return true;
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("model config: malformed line " + line);
      if (!c.set(line.substr(0, eq), line.substr(eq + 1)))
        throw ConfigError("model config: unknown key " + line.substr(0, eq));
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace plato::model
