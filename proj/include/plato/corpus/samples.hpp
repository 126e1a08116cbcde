#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/message_tree.hpp"
#include "plato/errors.hpp"

namespace plato::corpus {

// Untokenized (context, response) pair as stored on disk.
struct RawSample {
  std::vector<std::string> context;
  std::string response;
  std::int64_t timestamp = 0;

  bool operator==(const RawSample&) const = default;
};

// Tokenized training unit. Context utterances are root-first; token ids
// exclude the end-of-utterance separators added at assembly time.
struct DialogueSample {
  std::vector<std::vector<int>> context;
  std::vector<int> response;
  std::int64_t timestamp = 0;

  bool operator==(const DialogueSample&) const = default;
};

struct SequenceLimits {
  // Budget for context tokens including one separator per utterance.
  std::size_t max_context = 128;
  std::size_t max_response = 128;
  std::size_t min_response = 2;
};

// One sample per non-root node: the path from the root supplies the context
// and the node itself is the response. Order follows the tree's node order.
inline std::vector<RawSample> extract_pairs(const MessageTree& tree) {
  validate_tree(tree);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) index[tree.nodes[i].id] = i;
  std::vector<RawSample> samples;
  for (const auto& node : tree.nodes) {
    if (!node.parent_id) continue;
    RawSample s;
    s.response = node.text;
    s.timestamp = node.timestamp;
    for (auto p = node.parent_id; p;) {
      const auto& parent = tree.nodes[index.at(*p)];
      s.context.push_back(parent.text);
      p = parent.parent_id;
    }
    std::reverse(s.context.begin(), s.context.end());
    samples.push_back(std::move(s));
  }
  return samples;
}

// Samples strictly before `cutoff` go to training, the rest to validation.
template <typename Sample>
std::pair<std::vector<Sample>, std::vector<Sample>> chronological_split(
    const std::vector<Sample>& samples, std::int64_t cutoff) {
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (const auto& s : samples) (s.timestamp < cutoff ? out.first : out.second).push_back(s);
  return out;
}

// Drops the oldest utterances until the context (with one separator per
// utterance) fits the budget; a single over-long utterance keeps its last
// tokens.
inline std::vector<std::vector<int>> truncate_context(std::vector<std::vector<int>> context,
                                                      std::size_t budget) {
  require(budget >= 2, "truncate_context: budget too small");
  auto cost = [](const std::vector<std::vector<int>>& c) {
    std::size_t n = 0;
    for (const auto& u : c) n += u.size() + 1;
    return n;
  };
  while (context.size() > 1 && cost(context) > budget) context.erase(context.begin());
  if (!context.empty() && context.front().size() + 1 > budget) {
    auto& u = context.front();
    u.erase(u.begin(), u.end() - std::ptrdiff_t(budget - 1));
  }
  return context;
}

// Tokenizes a raw sample. Returns nothing when the response has fewer than
// `min_response` tokens or the context is empty.
inline std::optional<DialogueSample> encode_sample(const RawSample& raw, const Vocab& vocab,
                                                   const SequenceLimits& limits = {}) {
  DialogueSample s;
  s.timestamp = raw.timestamp;
  s.response = vocab.encode(raw.response);
  if (s.response.size() < limits.min_response || raw.context.empty()) return std::nullopt;
  if (s.response.size() > limits.max_response) s.response.resize(limits.max_response);
  std::vector<std::vector<int>> ctx;
  for (const auto& u : raw.context) ctx.push_back(vocab.encode(u));
  s.context = truncate_context(std::move(ctx), limits.max_context);
  return s;
}

inline std::vector<DialogueSample> encode_samples(const std::vector<RawSample>& raw,
                                                  const Vocab& vocab,
                                                  const SequenceLimits& limits = {}) {
  std::vector<DialogueSample> out;
  for (const auto& r : raw)
    if (auto s = encode_sample(r, vocab, limits)) out.push_back(std::move(*s));
  return out;
}

inline nlohmann::json sample_to_json(const RawSample& s) {
  return {{"context", s.context}, {"response", s.response}, {"ts", s.timestamp}};
}

inline RawSample sample_from_json(const nlohmann::json& j) {
  try {
    RawSample s;
    s.context = j.at("context").get<std::vector<std::string>>();
    s.response = j.at("response").get<std::string>();
    s.timestamp = j.value("ts", std::int64_t{0});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("bad sample record: ") + e.what());
  }
}

// 64-bit FNV-1a of `bytes` as 16 lowercase hex digits.
inline std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[std::size_t(i)] = kHex[h & 15];
  return out;
}

// Hash of the samples' canonical JSONL form.
inline std::string samples_hash(const std::vector<RawSample>& samples) {
  std::string text;
  for (const auto& s : samples) text += sample_to_json(s).dump() + "\n";
  return content_hash(text);
}

inline void write_samples(std::ostream& out, const std::vector<RawSample>& samples) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline std::vector<RawSample> read_samples(std::istream& in) {
  std::vector<RawSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedInput(std::string("bad sample line: ") + e.what());
    }
  }
  return out;
}

inline std::vector<RawSample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open samples file " + path);
  return read_samples(in);
}

inline void write_samples(const std::string& path, const std::vector<RawSample>& samples) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write samples file " + path);
  write_samples(out, samples);
}

}  // namespace plato::corpus
