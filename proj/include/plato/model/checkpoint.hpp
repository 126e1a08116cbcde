#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "plato/errors.hpp"
#include "plato/model/config.hpp"
#include "plato/model/transformer.hpp"
#include "plato/numerics/optim.hpp"
#include "plato/numerics/tensor.hpp"

namespace plato::model {

// File layout (all integers little-endian):
//   "PLATOCKP" u32 version
//   str config text, str stage tag, str training-data hash, u64 step
//   u32 tensor count, then per tensor: str name, u32 rank, u64 dims[rank], f32 data
//   u8 has_optimizer, then u64 optimizer step and the first/second moments in
//   parameter order (same tensor encoding, names "m:<param>" / "v:<param>")
// where str = u32 byte length followed by the bytes.
inline constexpr char kCheckpointMagic[8] = {'P', 'L', 'A', 'T', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline const std::vector<std::string>& stage_tags() {
  static const std::vector<std::string> tags{"stage1", "stage2-gen", "stage2-eval", "backward"};
  return tags;
}

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  std::vector<Tensor<float>> first_moment;
  std::vector<Tensor<float>> second_moment;
};

struct Checkpoint {
  ModelConfig config;
  std::string stage = "stage1";
  std::string data_hash;  // hash of the training corpus, empty if unknown
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;
  std::optional<OptimizerSnapshot> optimizer;

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw LoadError("checkpoint: no tensor named " + name);
  }
};

template <typename Real>
Checkpoint make_checkpoint(const UnifiedTransformer<Real>& model, const std::string& stage,
                           std::uint64_t step,
                           const OptimizerState<Real>* optimizer = nullptr) {
  Checkpoint ck;
  ck.config = model.config();
  ck.stage = stage;
  ck.step = step;
  for (std::size_t i = 0; i < model.names().size(); ++i)
    ck.tensors.push_back({model.names()[i], model.parameters()[i]->value.template cast<float>()});
  if (optimizer && !optimizer->first_moment.empty()) {
    OptimizerSnapshot snap;
    snap.step = optimizer->step;
    for (const auto& m : optimizer->first_moment) snap.first_moment.push_back(m.template cast<float>());
    for (const auto& v : optimizer->second_moment) snap.second_moment.push_back(v.template cast<float>());
    ck.optimizer = std::move(snap);
  }
  return ck;
}

// Builds a model from the stored config and copies every tensor in; names
// and shapes must match what the config implies exactly.
template <typename Real>
UnifiedTransformer<Real> restore_model(const Checkpoint& ck) {
  UnifiedTransformer<Real> model(ck.config);
  const auto& names = model.names();
  if (names.size() != ck.tensors.size())
    throw LoadError("checkpoint: expected " + std::to_string(names.size()) + " tensors, found " +
                    std::to_string(ck.tensors.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& stored = ck.tensors[i];
    auto& param = model.parameters()[i]->value;
    if (stored.name != names[i]) throw LoadError("checkpoint: unexpected tensor " + stored.name);
    if (stored.tensor.shape != param.shape)
      throw LoadError("checkpoint: shape of " + stored.name + " is " + shape_string(stored.tensor.shape) +
                      " but the config implies " + shape_string(param.shape));
    param = stored.tensor.template cast<Real>();
  }
  return model;
}

template <typename Real>
OptimizerState<Real> restore_optimizer(const Checkpoint& ck, const AdamConfig& config) {
  OptimizerState<Real> state;
  state.config = config;
  if (!ck.optimizer) return state;
  state.step = ck.optimizer->step;
  for (const auto& m : ck.optimizer->first_moment) state.first_moment.push_back(m.template cast<Real>());
  for (const auto& v : ck.optimizer->second_moment) state.second_moment.push_back(v.template cast<Real>());
  return state;
}

namespace detail {

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw LoadError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, std::uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_string(std::istream& in, std::size_t limit = std::size_t(1) << 24) {
  const auto n = get<std::uint32_t>(in);
  if (n > limit) throw LoadError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw LoadError("checkpoint: truncated file");
  return s;
}

inline void put_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  put_string(out, name);
  put<std::uint32_t>(out, std::uint32_t(t.shape.size()));
  for (auto d : t.shape) put<std::uint64_t>(out, d);
  for (float v : t.data) put<float>(out, v);
}

inline NamedTensor get_tensor(std::istream& in) {
  NamedTensor nt;
  nt.name = get_string(in, 4096);
  const auto rank = get<std::uint32_t>(in);
  if (rank > 2) throw LoadError("checkpoint: tensor " + nt.name + " has rank " + std::to_string(rank));
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get<std::uint64_t>(in);
    if (d > (std::uint64_t(1) << 32)) throw LoadError("checkpoint: implausible dimension");
    nt.tensor.shape.push_back(std::size_t(d));
    count *= std::size_t(d);
  }
  if (count > (std::size_t(1) << 34)) throw LoadError("checkpoint: implausible tensor size");
  nt.tensor.data.resize(count);
  for (auto& v : nt.tensor.data) v = get<float>(in);
  return nt;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put_string(out, ck.config.to_text());
  detail::put_string(out, ck.stage);
  detail::put_string(out, ck.data_hash);
  detail::put<std::uint64_t>(out, ck.step);
  detail::put<std::uint32_t>(out, std::uint32_t(ck.tensors.size()));
  for (const auto& t : ck.tensors) detail::put_tensor(out, t.name, t.tensor);
  detail::put<std::uint8_t>(out, ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    require(ck.optimizer->first_moment.size() == ck.tensors.size() &&
                ck.optimizer->second_moment.size() == ck.tensors.size(),
            "write_checkpoint: optimizer moments do not match tensors");
    detail::put<std::uint64_t>(out, ck.optimizer->step);
    for (std::size_t i = 0; i < ck.tensors.size(); ++i)
      detail::put_tensor(out, "m:" + ck.tensors[i].name, ck.optimizer->first_moment[i]);
    for (std::size_t i = 0; i < ck.tensors.size(); ++i)
      detail::put_tensor(out, "v:" + ck.tensors[i].name, ck.optimizer->second_moment[i]);
  }
}

// Parses and validates a checkpoint: header, stage tag, and that every
// stored shape agrees with the stored config.
inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw LoadError("checkpoint: bad magic (not a checkpoint file)");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw LoadError("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_text(detail::get_string(in));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: bad config: ") + e.what());
  }
  ck.stage = detail::get_string(in, 64);
  bool known = false;
  for (const auto& t : stage_tags()) known = known || t == ck.stage;
  if (!known) throw LoadError("checkpoint: unknown stage tag " + ck.stage);
  ck.data_hash = detail::get_string(in, 64);
  ck.step = detail::get<std::uint64_t>(in);
  const auto n = detail::get<std::uint32_t>(in);
  if (n > 100000) throw LoadError("checkpoint: implausible tensor count");
  for (std::uint32_t i = 0; i < n; ++i) ck.tensors.push_back(detail::get_tensor(in));
  const auto has_opt = detail::get<std::uint8_t>(in);
  if (has_opt > 1) throw LoadError("checkpoint: corrupt optimizer flag");
  if (has_opt) {
    OptimizerSnapshot snap;
    snap.step = detail::get<std::uint64_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
      auto m = detail::get_tensor(in);
      if (m.name != "m:" + ck.tensors[i].name || m.tensor.shape != ck.tensors[i].tensor.shape)
        throw LoadError("checkpoint: optimizer moment mismatch at " + m.name);
      snap.first_moment.push_back(std::move(m.tensor));
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      auto v = detail::get_tensor(in);
      if (v.name != "v:" + ck.tensors[i].name || v.tensor.shape != ck.tensors[i].tensor.shape)
        throw LoadError("checkpoint: optimizer moment mismatch at " + v.name);
      snap.second_moment.push_back(std::move(v.tensor));
    }
    ck.optimizer = std::move(snap);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError("checkpoint: trailing bytes");
  // Shape consistency against the config.
  UnifiedTransformer<float> probe(ck.config);
  if (probe.names().size() != ck.tensors.size()) throw LoadError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    if (ck.tensors[i].name != probe.names()[i])
      throw LoadError("checkpoint: unexpected tensor " + ck.tensors[i].name);
    if (ck.tensors[i].tensor.shape != probe.parameters()[i]->value.shape)
      throw LoadError("checkpoint: shape of " + ck.tensors[i].name + " disagrees with config");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(ck, out);
  if (!out) throw std::runtime_error("failed writing " + path);
}

template <typename Real>
void save_checkpoint(const UnifiedTransformer<Real>& model, const std::string& path,
                     const std::string& stage = "stage1", std::uint64_t step = 0,
                     const OptimizerState<Real>* optimizer = nullptr) {
  save_checkpoint(make_checkpoint(model, stage, step, optimizer), path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace plato::model
